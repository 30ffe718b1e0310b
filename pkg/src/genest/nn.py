"""Feed-forward networks with hand-written reverse mode.

Only dense layers with relu / leaky-relu / linear activations are supported;
that is all the generator and critic need. Inputs may be a single vector or a
batch ``(B, in_dim)``; gradients are summed over the batch.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, FormatError, ShapeError

LEAKY_SLOPE = 0.2
ACTIVATIONS = ("linear", "relu", "leaky_relu")

_MAGIC = b"GNET"
_VERSION = 1


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: str = "linear"

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ConfigError("layer dims must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")


@dataclass
class NetworkParams:
    specs: Tuple[LayerSpec, ...]
    weights: List[np.ndarray]  # (out, in)
    biases: List[np.ndarray]  # (out,)

    def __post_init__(self):
        self.specs = tuple(self.specs)
        for a, b in zip(self.specs, self.specs[1:]):
            if a.out_dim != b.in_dim:
                raise ShapeError("consecutive layer dims do not chain")
        for spec, w, b in zip(self.specs, self.weights, self.biases):
            if w.shape != (spec.out_dim, spec.in_dim) or b.shape != (spec.out_dim,):
                raise ShapeError("parameter shapes do not match layer specs")

    @property
    def in_dim(self) -> int:
        return self.specs[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.specs[-1].out_dim

    def arrays(self) -> List[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "NetworkParams":
        arrays = list(arrays)
        return NetworkParams(self.specs, arrays[0::2], arrays[1::2])

    def copy(self) -> "NetworkParams":
        return self.with_arrays([a.copy() for a in self.arrays()])

    def norm(self) -> float:
        return float(np.sqrt(sum(np.sum(a * a) for a in self.arrays())))

    def max_abs(self) -> float:
        return float(max(np.max(np.abs(a)) for a in self.arrays()))


@dataclass
class GradientBundle:
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    input: Optional[np.ndarray] = None

    def arrays(self) -> List[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out


def _act(x, kind):
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "leaky_relu":
        return np.where(x > 0, x, LEAKY_SLOPE * x)
    return x


def _act_grad(pre, kind):
    if kind == "relu":
        return (pre > 0).astype(pre.dtype)
    if kind == "leaky_relu":
        return np.where(pre > 0, 1.0, LEAKY_SLOPE)
    return None


def init_network(dims: Sequence[int], hidden_activation: str, rng: np.random.Generator,
                 output_activation: str = "linear") -> NetworkParams:
    """He-normal weights, zero biases."""
    specs = []
    for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        act = output_activation if i == len(dims) - 2 else hidden_activation
        specs.append(LayerSpec(a, b, act))
    weights = [rng.standard_normal((s.out_dim, s.in_dim)) * np.sqrt(2.0 / s.in_dim) for s in specs]
    biases = [np.zeros(s.out_dim) for s in specs]
    return NetworkParams(tuple(specs), weights, biases)


def make_generator(latent_dim: int, out_dim: int, rng: np.random.Generator,
                   hidden: Sequence[int] = (128, 512)) -> NetworkParams:
    return init_network([latent_dim, *hidden, out_dim], "relu", rng)


def make_critic(in_dim: int, rng: np.random.Generator, hidden: Sequence[int] = (256, 64)) -> NetworkParams:
    return init_network([in_dim, *hidden, 1], "leaky_relu", rng)


def _check_input(net: NetworkParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != net.in_dim or x.ndim > 2:
        raise ShapeError(f"input shape {x.shape} incompatible with in_dim {net.in_dim}")
    return x


def forward(net: NetworkParams, x: np.ndarray) -> np.ndarray:
    a = _check_input(net, x)
    for spec, w, b in zip(net.specs, net.weights, net.biases):
        a = _act(a @ w.T + b, spec.activation)
    return a


def forward_cache(net: NetworkParams, x: np.ndarray):
    """Forward pass keeping layer inputs and pre-activations for :func:`backward`."""
    a = _check_input(net, x)
    inputs, pres = [], []
    for spec, w, b in zip(net.specs, net.weights, net.biases):
        inputs.append(a)
        z = a @ w.T + b
        pres.append(z)
        a = _act(z, spec.activation)
    return a, (inputs, pres)


def backward(net: NetworkParams, x: np.ndarray, upstream: np.ndarray, cache=None,
             param_grads: bool = True) -> GradientBundle:
    """Gradients of ``sum(upstream * forward(net, x))``.

    With ``param_grads=False`` only the input gradient is computed (used by
    latent inversion).
    """
    if cache is None:
        _, cache = forward_cache(net, x)
    inputs, pres = cache
    g = np.asarray(upstream, dtype=float)
    if g.shape != pres[-1].shape:
        raise ShapeError(f"upstream shape {g.shape} != output shape {pres[-1].shape}")
    n = len(net.specs)
    gw: List[Optional[np.ndarray]] = [None] * n
    gb: List[Optional[np.ndarray]] = [None] * n
    for i in range(n - 1, -1, -1):
        d = _act_grad(pres[i], net.specs[i].activation)
        if d is not None:
            g = g * d
        if param_grads:
            if g.ndim == 1:
                gw[i] = np.outer(g, inputs[i])
                gb[i] = g.copy()
            else:
                gw[i] = g.T @ inputs[i]
                gb[i] = g.sum(axis=0)
        g = g @ net.weights[i]
    return GradientBundle(gw, gb, g)


# ------------------------------------------------------------- optimizers


def rmsprop_update(param, grad, state, lr, decay=0.9, eps=1e-8):
    """One RMSprop step on a single array: returns ``(new_param, new_state)``."""
    state = decay * state + (1.0 - decay) * grad * grad
    return param - lr * grad / np.sqrt(state + eps), state


def rmsprop_step(params: NetworkParams, grads: GradientBundle, state, lr: float = 5e-5,
                 decay: float = 0.9, eps: float = 1e-8):
    """Descend ``grads`` with RMSprop. ``state=None`` starts from zeros."""
    arrays = params.arrays()
    garr = grads.arrays()
    if state is None:
        state = [np.zeros_like(a) for a in arrays]
    if len(garr) != len(arrays) or len(state) != len(arrays):
        raise ShapeError("gradient/state structure does not match parameters")
    new_p, new_s = [], []
    for p, g, s in zip(arrays, garr, state):
        if g.shape != p.shape:
            raise ShapeError("gradient shape mismatch")
        p2, s2 = rmsprop_update(p, g, s, lr, decay, eps)
        new_p.append(p2)
        new_s.append(s2)
    return params.with_arrays(new_p), new_s


def clip_weights(params: NetworkParams, clip: float) -> NetworkParams:
    if clip <= 0:
        raise ConfigError("clip must be positive")
    return params.with_arrays([np.clip(a, -clip, clip) for a in params.arrays()])


def lipschitz_bound(net: NetworkParams) -> float:
    """Product of induced infinity norms; activations here are 1-Lipschitz."""
    return float(np.prod([np.abs(w).sum(axis=1).max() for w in net.weights]))


# ---------------------------------------------------------- complex bridge
#
# Real layout of a channel (N_f, N_r, N_t): real parts in C order (k, r, t),
# followed by imaginary parts in the same order.
#   real(k, r, t) at  k*N_r*N_t + r*N_t + t
#   imag(k, r, t) at  N_f*N_r*N_t + k*N_r*N_t + r*N_t + t


def channel_to_real(H: np.ndarray) -> np.ndarray:
    H = np.asarray(H)
    lead = H.shape[:-3]
    flat = H.reshape(*lead, -1)
    return np.concatenate([flat.real, flat.imag], axis=-1)


def real_to_channel(v: np.ndarray, dims) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n_f, n_r, n_t = dims
    n = n_f * n_r * n_t
    if v.shape[-1] != 2 * n:
        raise ShapeError(f"real vector length {v.shape[-1]} != 2*{n}")
    lead = v.shape[:-1]
    return (v[..., :n] + 1j * v[..., n:]).reshape(*lead, n_f, n_r, n_t)


# -------------------------------------------------------------- checkpoints

_ACT_CODES = {name: i for i, name in enumerate(ACTIVATIONS)}


def save_network(net: NetworkParams, path, meta: Optional[dict] = None) -> None:
    parts = [_MAGIC, struct.pack("<HI", _VERSION, len(net.specs))]
    for s in net.specs:
        parts.append(struct.pack("<IIB", s.in_dim, s.out_dim, _ACT_CODES[s.activation]))
    for w, b in zip(net.weights, net.biases):
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    blob = json.dumps(meta or {}, sort_keys=True).encode()
    parts.append(struct.pack("<I", len(blob)))
    parts.append(blob)
    Path(path).write_bytes(b"".join(parts))


def load_network(path):
    """Returns ``(NetworkParams, meta)``."""
    raw = Path(path).read_bytes()
    try:
        if raw[:4] != _MAGIC:
            raise FormatError("bad network magic")
        version, n_layers = struct.unpack_from("<HI", raw, 4)
        if version != _VERSION:
            raise FormatError(f"unsupported network version {version}")
        off = 10
        specs = []
        codes = {v: k for k, v in _ACT_CODES.items()}
        for _ in range(n_layers):
            a, b, code = struct.unpack_from("<IIB", raw, off)
            off += 9
            if code not in codes:
                raise FormatError(f"unknown activation code {code}")
            specs.append(LayerSpec(a, b, codes[code]))
        weights, biases = [], []
        for s in specs:
            nw, nb = s.in_dim * s.out_dim, s.out_dim
            if off + 8 * (nw + nb) > len(raw):
                raise FormatError("truncated parameters")
            weights.append(np.frombuffer(raw, "<f8", nw, off).reshape(s.out_dim, s.in_dim).astype(float))
            off += 8 * nw
            biases.append(np.frombuffer(raw, "<f8", nb, off).astype(float))
            off += 8 * nb
        (meta_len,) = struct.unpack_from("<I", raw, off)
        off += 4
        if off + meta_len != len(raw):
            raise FormatError("trailing or missing metadata bytes")
        meta = json.loads(raw[off:off + meta_len].decode())
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"corrupt network file: {exc}") from exc
    return NetworkParams(tuple(specs), weights, biases), meta
