"""Wasserstein GAN with weight clipping, trained on channel datasets."""

from __future__ import annotations

import io
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from . import nn
from .errors import ConfigError

log = logging.getLogger(__name__)

_TRAIN_STREAM = 0x7A11


@dataclass(frozen=True)
class WganConfig:
    critic_steps: int = 5
    batch_size: int = 200
    epochs: int = 500
    lr: float = 5e-5
    clip: float = 0.01
    latent_dim: int = 8
    decay: float = 0.9
    eps: float = 1e-8
    gen_hidden: Tuple[int, ...] = (128, 512)
    critic_hidden: Tuple[int, ...] = (256, 64)
    checkpoint_every: int = 0
    stat_every: int = 0  # epochs between stat_match evaluations; 0 disables best tracking
    stat_samples: int = 500

    def __post_init__(self):
        for name in ("critic_steps", "batch_size", "latent_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.lr <= 0 or self.clip <= 0:
            raise ConfigError("lr and clip must be positive")


@dataclass
class ChannelGenerator:
    """Generator network plus the mapping from its real output to channels.

    ``channel = scale * real_to_channel(net(z))``.
    """

    net: nn.NetworkParams
    dims: Tuple[int, int, int]
    scale: float = 1.0

    @property
    def latent_dim(self) -> int:
        return self.net.in_dim

    def __call__(self, z: np.ndarray) -> np.ndarray:
        return self.scale * nn.real_to_channel(nn.forward(self.net, z), self.dims)

    def save(self, path) -> None:
        nn.save_network(self.net, path, {"kind": "generator", "dims": list(self.dims), "scale": self.scale})

    @classmethod
    def load(cls, path) -> "ChannelGenerator":
        net, meta = nn.load_network(path)
        return cls(net, tuple(meta["dims"]), float(meta["scale"]))


@dataclass
class TrainingLog:
    rows: List[tuple] = field(default_factory=list)  # (epoch, objective, gen_norm, critic_norm, seconds)
    lipschitz: List[float] = field(default_factory=list)
    stat_history: List[tuple] = field(default_factory=list)  # (epoch, stat_match total)
    best: Optional["ChannelGenerator"] = None
    best_epoch: int = 0

    def __len__(self) -> int:
        return len(self.rows)

    def to_csv(self, record_time: bool = False) -> str:
        buf = io.StringIO()
        buf.write("epoch,critic_objective,gen_norm,critic_norm,seconds\n")
        for epoch, obj, gn, cn, sec in self.rows:
            t = f"{sec:.6f}" if record_time else ""
            buf.write(f"{epoch},{obj:.10g},{gn:.10g},{cn:.10g},{t}\n")
        return buf.getvalue()


def _latent(rng, m, d):
    return rng.standard_normal((m, d))


def critic_step(critic: nn.NetworkParams, generator: nn.NetworkParams, real_batch: np.ndarray,
                rng: np.random.Generator, cfg: WganConfig, state=None):
    """One ascent step on ``mean D(h) - mean D(G(z))`` followed by clipping.

    Returns ``(critic, rmsprop_state, objective_before_update)``.
    """
    m = real_batch.shape[0]
    if m == 0:
        raise ConfigError("empty batch")
    fake = nn.forward(generator, _latent(rng, m, generator.in_dim))
    batch = np.concatenate([real_batch, fake])
    out, cache = nn.forward_cache(critic, batch)
    objective = float(out[:m].mean() - out[m:].mean())
    # descend on the negated objective
    up = np.empty_like(out)
    up[:m] = -1.0 / m
    up[m:] = 1.0 / m
    grads = nn.backward(critic, batch, up, cache)
    critic, state = nn.rmsprop_step(critic, grads, state, cfg.lr, cfg.decay, cfg.eps)
    return nn.clip_weights(critic, cfg.clip), state, objective


def generator_loss_grad(critic: nn.NetworkParams, generator: nn.NetworkParams, z: np.ndarray):
    """Loss ``-mean D(G(z))`` and its gradient bundle w.r.t. generator params."""
    m = z.shape[0]
    fake, g_cache = nn.forward_cache(generator, z)
    score, c_cache = nn.forward_cache(critic, fake)
    up = np.full_like(score, -1.0 / m)
    through = nn.backward(critic, fake, up, c_cache, param_grads=False).input
    grads = nn.backward(generator, z, through, g_cache)
    return float(-score.mean()), grads


def generator_step(critic: nn.NetworkParams, generator: nn.NetworkParams, rng: np.random.Generator,
                   cfg: WganConfig, state=None):
    """One descent step on ``-mean D(G(z))``; returns ``(generator, state)``."""
    z = _latent(rng, cfg.batch_size, generator.in_dim)
    _, grads = generator_loss_grad(critic, generator, z)
    return nn.rmsprop_step(generator, grads, state, cfg.lr, cfg.decay, cfg.eps)


def data_scale(channels: np.ndarray) -> float:
    """Global std of the real/imaginary entries."""
    return float(np.sqrt(np.mean(np.abs(channels) ** 2) / 2.0))


def train(dataset, cfg: WganConfig, master_seed: int, checkpoint_dir=None,
          init: Optional[ChannelGenerator] = None) -> Tuple[ChannelGenerator, TrainingLog]:
    """Train per epoch over shuffled minibatches.

    Every minibatch feeds one critic step; after every ``critic_steps`` critic
    steps the generator takes one step. The remainder of a non-divisible
    dataset is dropped each epoch.
    """
    channels = getattr(dataset, "channels", dataset)
    n = channels.shape[0]
    if n < cfg.batch_size:
        raise ConfigError(f"dataset of {n} is smaller than batch size {cfg.batch_size}")
    dims = tuple(channels.shape[1:])
    scale = data_scale(channels)
    data = nn.channel_to_real(channels) / scale

    rng = np.random.default_rng(np.random.SeedSequence([int(master_seed), _TRAIN_STREAM]))
    init_rng, loop_rng = (np.random.default_rng(s) for s in rng.bit_generator.seed_seq.spawn(2))
    out_dim = data.shape[1]
    if init is None:
        gen = nn.make_generator(cfg.latent_dim, out_dim, init_rng, cfg.gen_hidden)
    else:
        gen = init.net.copy()
    critic = nn.clip_weights(nn.make_critic(out_dim, init_rng, cfg.critic_hidden), cfg.clip)

    c_state = g_state = None
    trainlog = TrainingLog()
    if cfg.stat_every:
        stat_real = channels[: min(n, cfg.stat_samples)]
        stat_z = np.random.default_rng(np.random.SeedSequence([int(master_seed), _TRAIN_STREAM, 1])).standard_normal(
            (cfg.stat_samples, cfg.latent_dim))
    n_batches = n // cfg.batch_size
    step = 0
    t0 = time.perf_counter()
    for epoch in range(cfg.epochs):
        perm = loop_rng.permutation(n)
        objectives = []
        for b in range(n_batches):
            idx = perm[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            critic, c_state, obj = critic_step(critic, gen, data[idx], loop_rng, cfg, c_state)
            objectives.append(obj)
            step += 1
            if step % cfg.critic_steps == 0:
                gen, g_state = generator_step(critic, gen, loop_rng, cfg, g_state)
        trainlog.rows.append(
            (epoch + 1, float(np.mean(objectives)), gen.norm(), critic.norm(), time.perf_counter() - t0)
        )
        trainlog.lipschitz.append(nn.lipschitz_bound(critic))
        if cfg.checkpoint_every and checkpoint_dir and (epoch + 1) % cfg.checkpoint_every == 0:
            ChannelGenerator(gen, dims, scale).save(Path(checkpoint_dir) / f"generator_epoch{epoch + 1:05d}.gnet")
        if cfg.stat_every and (epoch + 1) % cfg.stat_every == 0:
            candidate = ChannelGenerator(gen, dims, scale)
            total = stat_match_report(candidate(stat_z), stat_real).total
            trainlog.stat_history.append((epoch + 1, total))
            if trainlog.best is None or total < min(t for _, t in trainlog.stat_history[:-1]):
                trainlog.best, trainlog.best_epoch = ChannelGenerator(gen.copy(), dims, scale), epoch + 1
        if (epoch + 1) % 50 == 0:
            log.info("epoch %d objective %.4g critic lipschitz bound %.3g",
                     epoch + 1, trainlog.rows[-1][1], trainlog.lipschitz[-1])
    return ChannelGenerator(gen, dims, scale), trainlog


def sample_channels(generator: ChannelGenerator, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` generated channels as ``(n, N_f, N_r, N_t)``."""
    if n < 1:
        raise ConfigError("n must be >= 1")
    return generator(_latent(rng, n, generator.latent_dim))


# --------------------------------------------------------- distribution stats


@dataclass
class StatReport:
    second_moment: float
    freq_autocorr: float
    spatial_spectrum: float
    tail: float

    @property
    def total(self) -> float:
        return self.second_moment + self.freq_autocorr + self.spatial_spectrum + self.tail

    def as_dict(self):
        return {"second_moment": self.second_moment, "freq_autocorr": self.freq_autocorr,
                "spatial_spectrum": self.spatial_spectrum, "tail": self.tail, "total": self.total}


def _freq_autocorr(H, lags):
    r0 = np.mean(np.abs(H) ** 2)
    n_f = H.shape[1]
    return np.array([np.mean(H[:, : n_f - l] * H[:, l:].conj()) / r0 for l in lags])


def _spatial_spectrum(H):
    cov = np.einsum("bkrt,bkrs->ts", H.conj(), H) / (H.shape[0] * H.shape[1])
    eig = np.sort(np.linalg.eigvalsh(cov))[::-1]
    return eig / eig.sum()


def _tail_curve(H, ref_rms, grid):
    mag = np.abs(H).ravel() / ref_rms
    return np.array([(mag >= g).mean() for g in grid])


def stat_match_report(generated: np.ndarray, real: np.ndarray) -> StatReport:
    """Relative discrepancies between generated and real channel ensembles."""
    generated = np.asarray(generated)
    real = np.asarray(real)
    if generated.size == 0 or real.size == 0:
        raise ConfigError("both ensembles must be non-empty")
    m_g = np.mean(np.abs(generated) ** 2, axis=0)
    m_r = np.mean(np.abs(real) ** 2, axis=0)
    second = float(np.linalg.norm(m_g - m_r) / np.linalg.norm(m_r))
    n_f = real.shape[1]
    lags = [l for l in range(1, 5) if l < n_f]
    if lags:
        freq = float(np.abs(_freq_autocorr(generated, lags) - _freq_autocorr(real, lags)).sum())
    else:
        freq = 0.0
    spatial = float(np.abs(_spatial_spectrum(generated) - _spatial_spectrum(real)).sum())
    rms = np.sqrt(np.mean(np.abs(real) ** 2))
    grid = np.array([0.5, 1.0, 1.5, 2.0, 2.5, 3.0])
    tail = float(np.abs(_tail_curve(generated, rms, grid) - _tail_curve(real, rms, grid)).sum())
    return StatReport(second, freq, spatial, tail)
