"""Geometric cluster-ray channel model for wideband MIMO-OFDM.

Channels are stored as ``(N_f, N_r, N_t)`` complex arrays (one matrix per
subcarrier); datasets stack them into ``(count, N_f, N_r, N_t)``.
"""

from __future__ import annotations

import dataclasses
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import kernels
from .errors import ConfigError, FormatError, ShapeError

_MAGIC = b"GCHD"
_VERSION = 1
_HEADER = struct.Struct("<4sH5IQ10d")


@dataclass(frozen=True)
class ClusterRayConfig:
    n_clusters: int = 8
    n_rays: int = 2
    angle_spread_deg: float = 5.0
    n_tx_h: int = 4
    n_tx_v: int = 4
    n_rx_h: int = 2
    n_rx_v: int = 2
    n_subcarriers: int = 16
    n_taps: int = 4
    delay_profile_decay: float = 0.5
    antenna_spacing_wavelengths: float = 0.5
    gain_truncation: float = 6.0

    def __post_init__(self):
        if self.n_clusters < 1 or self.n_rays < 1:
            raise ConfigError("n_clusters and n_rays must be >= 1")
        if min(self.n_tx_h, self.n_tx_v, self.n_rx_h, self.n_rx_v) < 1:
            raise ConfigError("array dimensions must be >= 1")
        if not 1 <= self.n_taps <= self.n_subcarriers:
            raise ConfigError("need 1 <= n_taps <= n_subcarriers")
        if self.delay_profile_decay < 0:
            raise ConfigError("delay_profile_decay must be non-negative")
        if self.gain_truncation <= 0:
            raise ConfigError("gain_truncation must be positive")

    @property
    def n_tx(self) -> int:
        return self.n_tx_h * self.n_tx_v

    @property
    def n_rx(self) -> int:
        return self.n_rx_h * self.n_rx_v

    @property
    def dims(self):
        """``(N_f, N_r, N_t)``."""
        return (self.n_subcarriers, self.n_rx, self.n_tx)

    def replace(self, **changes) -> "ClusterRayConfig":
        return dataclasses.replace(self, **changes)

    def cluster_taps(self) -> np.ndarray:
        """Tap index of each cluster, ``floor(i * L_c / N_cl)``."""
        return (np.arange(self.n_clusters) * self.n_taps) // self.n_clusters

    def tap_powers(self) -> np.ndarray:
        return np.exp(-self.delay_profile_decay * np.arange(self.n_taps))

    def gamma(self) -> float:
        """Normalization making ``E||H_k||_F^2 = N_r N_t`` for unit-variance gains."""
        return float(self.n_rays * self.tap_powers()[self.cluster_taps()].sum())


@dataclass
class ChannelRealization:
    per_subcarrier: np.ndarray
    taps: Optional[np.ndarray] = None

    @property
    def dims(self):
        return self.per_subcarrier.shape

    def vector(self) -> np.ndarray:
        return channel_vector(self.per_subcarrier)


@dataclass
class ChannelDataset:
    config: ClusterRayConfig
    channels: np.ndarray  # (count, N_f, N_r, N_t)
    master_seed: int

    def __len__(self) -> int:
        return self.channels.shape[0]

    @property
    def realizations(self) -> List[ChannelRealization]:
        return [ChannelRealization(h) for h in self.channels]

    def equals(self, other: "ChannelDataset") -> bool:
        return (
            self.config == other.config
            and self.master_seed == other.master_seed
            and self.channels.shape == other.channels.shape
            and np.array_equal(self.channels.view(np.uint8), other.channels.view(np.uint8))
        )


def channel_vector(H: np.ndarray) -> np.ndarray:
    """Stack ``vec(H_k)`` (column-major) over subcarriers.

    Accepts ``(..., N_f, N_r, N_t)``; index of entry ``(k, r, t)`` is
    ``k*N_r*N_t + t*N_r + r``.
    """
    H = np.asarray(H)
    lead = H.shape[:-3]
    return np.swapaxes(H, -1, -2).reshape(*lead, -1)


def vector_to_channel(v: np.ndarray, n_f: int, n_r: int, n_t: int) -> np.ndarray:
    v = np.asarray(v)
    if v.shape[-1] != n_f * n_r * n_t:
        raise ShapeError(f"vector length {v.shape[-1]} != {n_f}*{n_r}*{n_t}")
    lead = v.shape[:-1]
    return np.swapaxes(v.reshape(*lead, n_f, n_t, n_r), -1, -2)


def array_response_ura(azimuth: float, elevation: float, n_h: int, n_v: int, spacing: float = 0.5) -> np.ndarray:
    """Unit-norm URA steering vector, element ``(p, q)`` at index ``p*n_v + q``."""
    p = np.arange(n_h)[:, None]
    q = np.arange(n_v)[None, :]
    phase = 2 * np.pi * spacing * (p * math.sin(azimuth) * math.sin(elevation) + q * math.cos(elevation))
    return (np.exp(1j * phase) / math.sqrt(n_h * n_v)).reshape(-1)


def _ura_batch(az: np.ndarray, el: np.ndarray, n_h: int, n_v: int, spacing: float) -> np.ndarray:
    p = np.arange(n_h)[None, :, None]
    q = np.arange(n_v)[None, None, :]
    u = (np.sin(az) * np.sin(el))[:, None, None]
    w = np.cos(el)[:, None, None]
    phase = 2 * np.pi * spacing * (p * u + q * w)
    return (np.exp(1j * phase) / math.sqrt(n_h * n_v)).reshape(az.size, n_h * n_v)


def sample_geometric_taps(cfg: ClusterRayConfig, rng: np.random.Generator) -> np.ndarray:
    """Draw delay-domain taps ``(L_c, N_r, N_t)`` from the cluster-ray model.

    Cluster centres (AoA/AoD azimuth and elevation) are uniform; each ray adds
    a Gaussian angular offset with std ``angle_spread_deg``. Ray gains are
    circular Gaussian, truncated componentwise at ``gain_truncation`` std,
    weighted by the exponential power-delay profile of the cluster's tap.
    """
    n_cl, n_ray = cfg.n_clusters, cfg.n_rays
    az_c = rng.uniform(-np.pi, np.pi, size=(n_cl, 2))  # (rx, tx)
    el_c = rng.uniform(0.0, np.pi, size=(n_cl, 2))
    spread = np.deg2rad(cfg.angle_spread_deg)
    offsets = rng.normal(0.0, spread, size=(n_cl, n_ray, 4))
    parts = rng.standard_normal(size=(n_cl, n_ray, 2))
    lim = cfg.gain_truncation
    parts = np.clip(parts, -lim, lim) / math.sqrt(2.0)

    az_r = (az_c[:, None, 0] + offsets[..., 0]).ravel()
    el_r = (el_c[:, None, 0] + offsets[..., 1]).ravel()
    az_t = (az_c[:, None, 1] + offsets[..., 2]).ravel()
    el_t = (el_c[:, None, 1] + offsets[..., 3]).ravel()

    tap_idx = np.repeat(cfg.cluster_taps(), n_ray)
    scale = math.sqrt(cfg.n_rx * cfg.n_tx / cfg.gamma())
    gains = (parts[..., 0] + 1j * parts[..., 1]).ravel() * np.sqrt(cfg.tap_powers()[tap_idx]) * scale

    d = cfg.antenna_spacing_wavelengths
    a_r = _ura_batch(az_r, el_r, cfg.n_rx_h, cfg.n_rx_v, d)
    a_t = _ura_batch(az_t, el_t, cfg.n_tx_h, cfg.n_tx_v, d)
    return kernels.accumulate_rays(gains, a_r, a_t, tap_idx, cfg.n_taps)


def taps_to_subcarriers(taps: np.ndarray, n_f: int) -> np.ndarray:
    """``H_k = sum_l C_l exp(-2j*pi*k*l/n_f)`` for ``k < n_f``."""
    taps = np.asarray(taps)
    n_taps = taps.shape[0]
    if n_taps > n_f:
        raise ShapeError(f"{n_taps} taps exceed {n_f} subcarriers")
    kl = np.outer(np.arange(n_f), np.arange(n_taps)) % n_f
    phases = np.exp(-2j * np.pi * kl / n_f)
    return np.einsum("kl,lrt->krt", phases, taps)


def realization_rng(master_seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), int(index)]))


def sample_channel(cfg: ClusterRayConfig, rng: np.random.Generator) -> ChannelRealization:
    taps = sample_geometric_taps(cfg, rng)
    return ChannelRealization(taps_to_subcarriers(taps, cfg.n_subcarriers), taps)


def generate_dataset(cfg: ClusterRayConfig, count: int, master_seed: int) -> ChannelDataset:
    if count < 1:
        raise ConfigError("count must be >= 1")
    master_seed = int(master_seed) & 0xFFFFFFFFFFFFFFFF
    out = np.empty((count, *cfg.dims), dtype=np.complex128)
    for i in range(count):
        out[i] = sample_channel(cfg, realization_rng(master_seed, i)).per_subcarrier
    return ChannelDataset(cfg, out, master_seed)


# ------------------------------------------------------------------- file I/O


def _config_scalars(cfg: ClusterRayConfig):
    return (
        cfg.n_clusters, cfg.n_rays, cfg.angle_spread_deg,
        cfg.n_tx_h, cfg.n_tx_v, cfg.n_rx_h, cfg.n_rx_v,
        cfg.delay_profile_decay, cfg.antenna_spacing_wavelengths, cfg.gain_truncation,
    )


def save_dataset(ds: ChannelDataset, path) -> None:
    cfg = ds.config
    n_f, n_r, n_t = cfg.dims
    if ds.channels.shape[1:] != (n_f, n_r, n_t):
        raise ShapeError("dataset channels do not match config dims")
    header = _HEADER.pack(
        _MAGIC, _VERSION, n_t, n_r, n_f, cfg.n_taps, len(ds), ds.master_seed,
        *[float(x) for x in _config_scalars(cfg)],
    )
    payload = np.ascontiguousarray(ds.channels, dtype="<c16").tobytes()
    Path(path).write_bytes(header + payload)


def load_dataset(path) -> ChannelDataset:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError("file shorter than dataset header")
    (magic, version, n_t, n_r, n_f, n_taps, count, seed, *scalars) = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != _VERSION:
        raise FormatError(f"unsupported dataset version {version}")
    ints = [int(x) for x in (scalars[0], scalars[1], scalars[3], scalars[4], scalars[5], scalars[6])]
    try:
        cfg = ClusterRayConfig(
            n_clusters=ints[0], n_rays=ints[1], angle_spread_deg=scalars[2],
            n_tx_h=ints[2], n_tx_v=ints[3], n_rx_h=ints[4], n_rx_v=ints[5],
            n_subcarriers=n_f, n_taps=n_taps, delay_profile_decay=scalars[7],
            antenna_spacing_wavelengths=scalars[8], gain_truncation=scalars[9],
        )
    except ConfigError as exc:
        raise FormatError(f"invalid config in header: {exc}") from exc
    if cfg.n_tx != n_t or cfg.n_rx != n_r:
        raise FormatError("header array sizes disagree with antenna grid")
    expected = count * n_f * n_r * n_t * 16
    if len(raw) - _HEADER.size != expected:
        raise FormatError(f"payload is {len(raw) - _HEADER.size} bytes, header implies {expected}")
    channels = np.frombuffer(raw, dtype="<c16", offset=_HEADER.size).reshape(count, n_f, n_r, n_t)
    return ChannelDataset(cfg, channels.astype(np.complex128), int(seed))
