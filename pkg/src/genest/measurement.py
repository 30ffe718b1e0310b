"""Hybrid-transceiver pilot measurements.

For subcarrier ``k`` and frame ``n`` the receiver observes

    y_k[n] = sqrt(rho) * W_RF^H H_k F_RF s[n, k] + w_k[n],

with ``s[n, k] = F_BB p[n, k]`` and ``F_BB`` the ``N_t^RF x N_s`` identity.
Rows of the stacked measurement vector are ordered ``(frame, subcarrier,
RF chain)`` with masked-off (frame, subcarrier) slots removed.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import kernels
from .channel import channel_vector, vector_to_channel
from .errors import ConfigError, ShapeError
from .linalg import block_diag, dft_matrix, kron, vec


@dataclass(frozen=True)
class TransceiverConfig:
    n_tx: int = 16
    n_rx: int = 4
    n_tx_rf: int = 4
    n_rx_rf: int = 1
    n_streams: int = 4
    n_f: int = 16
    n_frames: int = 4

    def __post_init__(self):
        if min(self.n_tx, self.n_rx, self.n_tx_rf, self.n_rx_rf, self.n_streams, self.n_f, self.n_frames) < 1:
            raise ConfigError("all transceiver dimensions must be >= 1")
        if self.n_rx_rf > self.n_rx or self.n_tx_rf > self.n_tx:
            raise ConfigError("RF chains cannot exceed antennas")
        if self.n_streams > self.n_tx_rf:
            raise ConfigError("n_streams cannot exceed n_tx_rf")

    @classmethod
    def digital(cls, n_tx: int, n_rx: int, n_f: int, n_frames=None) -> "TransceiverConfig":
        """Fully digital transceiver with one full set of orthogonal-rank pilots."""
        return cls(n_tx=n_tx, n_rx=n_rx, n_tx_rf=n_tx, n_rx_rf=n_rx, n_streams=n_tx,
                   n_f=n_f, n_frames=n_tx if n_frames is None else n_frames)


@dataclass
class PilotFrame:
    symbols: np.ndarray  # (N_p, N_f, N_s), zero where masked
    mask: np.ndarray  # (N_p, N_f) bool

    @property
    def n_active(self) -> int:
        return int(self.mask.sum())


@dataclass
class ReceivedSignal:
    y: np.ndarray
    noise_var: float


def sample_pilots(cfg: TransceiverConfig, mask_ratio: float, rng: np.random.Generator) -> PilotFrame:
    """QPSK pilots ``(+-1 +- 1j)/sqrt(2 N_s)`` on a random subset of slots.

    ``ceil(mask_ratio * N_p * N_f)`` (frame, subcarrier) slots are kept,
    chosen uniformly without replacement.
    """
    if not 0.0 < mask_ratio <= 1.0:
        raise ConfigError(f"mask_ratio must lie in (0, 1], got {mask_ratio}")
    shape = (cfg.n_frames, cfg.n_f, cfg.n_streams)
    bits = rng.integers(0, 2, size=shape + (2,))
    signs = 2.0 * bits - 1.0
    symbols = (signs[..., 0] + 1j * signs[..., 1]) / math.sqrt(2.0 * cfg.n_streams)
    mask = _pilot_mask(cfg, mask_ratio, rng)
    symbols[~mask] = 0.0
    return PilotFrame(symbols, mask)


def _pilot_mask(cfg: TransceiverConfig, mask_ratio: float, rng: np.random.Generator) -> np.ndarray:
    n_slots = cfg.n_frames * cfg.n_f
    mask = np.ones(n_slots, dtype=bool)
    if mask_ratio < 1.0:
        n_keep = max(1, math.ceil(mask_ratio * n_slots - 1e-9))
        mask[:] = False
        mask[rng.choice(n_slots, size=n_keep, replace=False)] = True
    return mask.reshape(cfg.n_frames, cfg.n_f)


def orthogonal_pilots(cfg: TransceiverConfig, mask_ratio: float, rng: np.random.Generator) -> PilotFrame:
    """Constant-modulus pilots orthogonal across frames: ``p[n, k]_i = F[n, i] sqrt(N_p / N_s)``.

    ``F`` is the unitary ``N_p``-point DFT, so ``sum_n p[n] p[n]^H = (N_p/N_s) I``
    when ``N_p >= N_s``. Slot masking matches :func:`sample_pilots`.
    """
    if not 0.0 < mask_ratio <= 1.0:
        raise ConfigError(f"mask_ratio must lie in (0, 1], got {mask_ratio}")
    if cfg.n_frames < cfg.n_streams:
        raise ConfigError("orthogonal pilots need n_frames >= n_streams")
    cols = dft_matrix(cfg.n_frames)[:, : cfg.n_streams] * math.sqrt(cfg.n_frames / cfg.n_streams)
    symbols = np.repeat(cols[:, None, :], cfg.n_f, axis=1)
    mask = _pilot_mask(cfg, mask_ratio, rng)
    symbols[~mask] = 0.0
    return PilotFrame(symbols, mask)


def sample_phase_networks(cfg: TransceiverConfig, rng: np.random.Generator):
    """One-bit analog precoder/combiner with entries ``+-1/sqrt(N)``."""
    f_bits = rng.integers(0, 2, size=(cfg.n_tx, cfg.n_tx_rf))
    w_bits = rng.integers(0, 2, size=(cfg.n_rx, cfg.n_rx_rf))
    f_rf = ((2.0 * f_bits - 1.0) / math.sqrt(cfg.n_tx)).astype(complex)
    w_rf = ((2.0 * w_bits - 1.0) / math.sqrt(cfg.n_rx)).astype(complex)
    return f_rf, w_rf


def identity_networks(cfg: TransceiverConfig):
    """Identity (fully digital) analog stage; needs ``N^RF = N`` on both sides."""
    if cfg.n_tx_rf != cfg.n_tx or cfg.n_rx_rf != cfg.n_rx:
        raise ConfigError("identity networks need as many RF chains as antennas")
    return np.eye(cfg.n_tx, dtype=complex), np.eye(cfg.n_rx, dtype=complex)


@dataclass
class MeasurementOperator:
    """Structured linear map from a channel ``(N_f, N_r, N_t)`` to measurements."""

    pilots: PilotFrame
    f_rf: np.ndarray
    w_rf: np.ndarray
    cfg: TransceiverConfig
    rho: float = 1.0
    slot_n: np.ndarray = field(init=False, repr=False)
    slot_k: np.ndarray = field(init=False, repr=False)
    tx: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        cfg = self.cfg
        if self.pilots.symbols.shape != (cfg.n_frames, cfg.n_f, cfg.n_streams):
            raise ShapeError(f"pilot symbols {self.pilots.symbols.shape} do not match config")
        if self.f_rf.shape != (cfg.n_tx, cfg.n_tx_rf) or self.w_rf.shape != (cfg.n_rx, cfg.n_rx_rf):
            raise ShapeError("phase network shapes do not match config")
        self.slot_n, self.slot_k = np.nonzero(self.pilots.mask)
        s = self.digital_precoded()[self.slot_n, self.slot_k]  # (S, N_t^RF)
        self.tx = s @ self.f_rf.T  # x_s = F_RF s[n, k]

    # -- shapes ---------------------------------------------------------
    @property
    def channel_shape(self):
        return (self.cfg.n_f, self.cfg.n_rx, self.cfg.n_tx)

    @property
    def n_slots(self) -> int:
        return self.slot_k.size

    @property
    def n_rows(self) -> int:
        return self.n_slots * self.cfg.n_rx_rf

    @property
    def n_cols(self) -> int:
        return self.cfg.n_f * self.cfg.n_rx * self.cfg.n_tx

    def digital_precoded(self) -> np.ndarray:
        """``s[n, k] = F_BB p[n, k]`` as ``(N_p, N_f, N_t^RF)``."""
        cfg = self.cfg
        s = np.zeros((cfg.n_frames, cfg.n_f, cfg.n_tx_rf), dtype=complex)
        s[..., : cfg.n_streams] = self.pilots.symbols
        return s

    # -- structured application ------------------------------------------
    def forward(self, H: np.ndarray) -> np.ndarray:
        """Noiseless measurements ``sqrt(rho) A h``; leading batch axes allowed."""
        H = np.asarray(H)
        if H.shape[-3:] != self.channel_shape:
            raise ShapeError(f"channel shape {H.shape[-3:]} != {self.channel_shape}")
        lead = H.shape[:-3]
        Hb = H.reshape(-1, *self.channel_shape)
        y = kernels.slot_forward(Hb, self.tx, self.slot_k, self.w_rf.conj())
        return math.sqrt(self.rho) * y.reshape(*lead, self.n_rows)

    def adjoint(self, r: np.ndarray) -> np.ndarray:
        """``sqrt(rho) A^H r`` reshaped as a channel."""
        r = np.asarray(r)
        if r.shape[-1] != self.n_rows:
            raise ShapeError(f"residual length {r.shape[-1]} != {self.n_rows}")
        lead = r.shape[:-1]
        rb = r.reshape(-1, self.n_slots, self.cfg.n_rx_rf)
        g = kernels.slot_adjoint(rb, self.tx, self.slot_k, self.w_rf, self.cfg.n_f)
        return math.sqrt(self.rho) * g.reshape(*lead, *self.channel_shape)

    def forward_vector(self, h: np.ndarray) -> np.ndarray:
        return self.forward(vector_to_channel(h, *self.channel_shape))

    def adjoint_vector(self, r: np.ndarray) -> np.ndarray:
        return channel_vector(self.adjoint(r))

    # -- dense materializations ----------------------------------------------
    def dense_matrix(self) -> np.ndarray:
        """``sqrt(rho) A`` acting on the stacked per-subcarrier vector."""
        cfg = self.cfg
        blk = cfg.n_rx * cfg.n_tx
        Q = cfg.n_rx_rf
        A = np.zeros((self.n_rows, self.n_cols), dtype=complex)
        wh = self.w_rf.conj().T
        for s in range(self.n_slots):
            k = self.slot_k[s]
            A[s * Q:(s + 1) * Q, k * blk:(k + 1) * blk] = kron(self.tx[s][None, :], wh)
        return math.sqrt(self.rho) * A

    def kron_dense_matrix(self) -> np.ndarray:
        """Stack of per-frame ``A[n] = s[n]^T (I (x) F_RF^T) (x) (I (x) W_RF^H)``.

        Acts on ``vec`` of the full block-diagonal ``(N_f N_r) x (N_f N_t)``
        channel (see :meth:`block_vec`); rows of masked slots are dropped.
        """
        cfg = self.cfg
        s_all = self.digital_precoded()
        eye_f = np.eye(cfg.n_f)
        right = kron(eye_f, self.w_rf.conj().T)
        left_mix = kron(eye_f, self.f_rf.T)
        rows = []
        for n in range(cfg.n_frames):
            s_n = s_all[n].reshape(-1)  # stacked over subcarriers
            A_n = kron((s_n @ left_mix)[None, :], right)
            keep = np.repeat(self.pilots.mask[n], cfg.n_rx_rf)
            rows.append(A_n[keep])
        return math.sqrt(self.rho) * np.vstack(rows)

    @staticmethod
    def block_vec(H: np.ndarray) -> np.ndarray:
        """``vec(blockdiag(H_0, ..., H_{N_f-1}))``."""
        return vec(block_diag(H))

    # -- normal-equation blocks ------------------------------------------
    def gram_blocks(self) -> np.ndarray:
        """Per-subcarrier ``A_k^H A_k`` as ``(N_f, N_r N_t, N_r N_t)``."""
        cfg = self.cfg
        ww = self.w_rf @ self.w_rf.conj().T
        outer = np.zeros((cfg.n_f, cfg.n_tx, cfg.n_tx), dtype=complex)
        np.add.at(outer, self.slot_k, self.tx.conj()[:, :, None] * self.tx[:, None, :])
        blocks = np.einsum("kab,cd->kacbd", outer, ww)
        n = cfg.n_tx * cfg.n_rx
        return self.rho * blocks.reshape(cfg.n_f, n, n)

    def slots_per_subcarrier(self) -> np.ndarray:
        return np.bincount(self.slot_k, minlength=self.cfg.n_f)

    def signal_power(self) -> float:
        """Mean per-entry received power for an isotropic unit-variance channel."""
        cfg = self.cfg
        used = min(cfg.n_tx_rf, cfg.n_streams)
        tx_power = np.sum(np.abs(self.f_rf[:, :used]) ** 2) / cfg.n_streams
        rx_gain = np.mean(np.sum(np.abs(self.w_rf) ** 2, axis=0))
        return float(self.rho * tx_power * rx_gain)


def build_operator(pilots: PilotFrame, f_rf: np.ndarray, w_rf: np.ndarray, cfg: TransceiverConfig,
                   rho: float = 1.0) -> MeasurementOperator:
    return MeasurementOperator(pilots, np.asarray(f_rf, dtype=complex), np.asarray(w_rf, dtype=complex), cfg, rho)


def apply_forward(op: MeasurementOperator, channel) -> np.ndarray:
    H = getattr(channel, "per_subcarrier", channel)
    return op.forward(H)


def apply_adjoint(op: MeasurementOperator, residual: np.ndarray) -> np.ndarray:
    return op.adjoint(residual)


def noise_variance(snr_db: float, signal_power: float = 1.0) -> float:
    if math.isinf(snr_db) and snr_db > 0:
        return 0.0
    return signal_power / 10.0 ** (snr_db / 10.0)


def add_awgn(clean: np.ndarray, snr_db: float, rng: np.random.Generator, signal_power: float = 1.0,
             combiner=None) -> ReceivedSignal:
    """Add circular complex Gaussian noise at ``snr_db`` (``inf`` = noiseless).

    ``signal_power`` is the analytic per-entry signal power. With a
    ``combiner`` W (``N_r x N_r^RF``) the noise is drawn per antenna and
    combined as ``W^H v``, so its covariance is ``sigma^2 W^H W`` per slot.
    """
    clean = np.asarray(clean)
    var = noise_variance(snr_db, signal_power)
    if var == 0.0:
        return ReceivedSignal(clean.copy(), 0.0)
    if combiner is None:
        shape = clean.shape
        noise = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        noise *= math.sqrt(var / 2.0)
    else:
        n_r, q = combiner.shape
        slots = clean.shape[-1] // q
        shape = clean.shape[:-1] + (slots, n_r)
        v = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        v *= math.sqrt(var / 2.0)
        noise = (v @ combiner.conj()).reshape(clean.shape)
    return ReceivedSignal(clean + noise, var)


def measure(op: MeasurementOperator, H: np.ndarray, snr_db: float, rng: np.random.Generator) -> ReceivedSignal:
    """Noisy received signal for channel ``H`` with combiner-shaped noise."""
    return add_awgn(op.forward(H), snr_db, rng, op.signal_power(), combiner=op.w_rf)


# ------------------------------------------------------------- tail check


@dataclass
class TailReport:
    t: np.ndarray
    empirical_prob: np.ndarray
    bound: np.ndarray
    stderr: np.ndarray
    flagged: np.ndarray
    trials: int

    @property
    def violated(self) -> bool:
        return bool(self.flagged.any())

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("t,empirical_prob,bound,stderr,flagged\n")
        for row in zip(self.t, self.empirical_prob, self.bound, self.stderr, self.flagged):
            buf.write(f"{row[0]:.10g},{row[1]:.10g},{row[2]:.10g},{row[3]:.10g},{int(row[4])}\n")
        return buf.getvalue()


def hoeffding_bound(t, cfg: TransceiverConfig) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    return np.exp(-(t**2) * cfg.n_tx * cfg.n_tx_rf * cfg.n_rx / (2.0 * cfg.n_streams))


def subgaussian_tail_check(cfg: TransceiverConfig, trials: int, rng: np.random.Generator,
                           n_points: int = 20, floor: float = 1e-4) -> TailReport:
    """Empirical tail of one measurement-matrix entry against the closed-form bound.

    Phase networks are drawn once and held fixed; each trial draws fresh QPSK
    pilots and evaluates the real part of ``w * (P^T F_BB^T F_RF^T)[0, 0]``
    with ``w`` an entry of ``W_RF^H``. The t-grid spans ``[0, t_max]`` where
    the bound falls to ``floor``.
    """
    if trials < 10_000:
        raise ConfigError("the tail check needs at least 10^4 trials")
    f_rf, w_rf = sample_phase_networks(cfg, rng)
    w = np.conj(w_rf[0, 0])
    bits = rng.integers(0, 2, size=(trials, cfg.n_streams, 2))
    signs = 2.0 * bits - 1.0
    p = (signs[..., 0] + 1j * signs[..., 1]) / math.sqrt(2.0 * cfg.n_streams)
    s = np.zeros((trials, cfg.n_tx_rf), dtype=complex)
    s[:, : cfg.n_streams] = p
    entry = w * (s @ f_rf[0, :])  # (P^T F_BB^T F_RF^T)[m, 0] = sum_j s_j F_RF[0, j]
    samples = entry.real

    coef = cfg.n_tx * cfg.n_tx_rf * cfg.n_rx / (2.0 * cfg.n_streams)
    t_max = math.sqrt(math.log(1.0 / floor) / coef)
    t = np.linspace(0.0, t_max, n_points)
    emp = kernels.exceedance(samples, t) / trials
    bound = hoeffding_bound(t, cfg)
    stderr = np.sqrt(emp * (1.0 - emp) / trials)
    flagged = emp > bound + 3.0 * stderr
    return TailReport(t, emp, bound, stderr, flagged, trials)
