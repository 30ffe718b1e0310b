"""Hot inner loops, each with a numba path and a vectorized numpy path.

The numba path is used when numba imports and ``GENEST_NUMBA`` is not ``0``.
Both paths compute the same quantity; they agree to rounding, not bit-for-bit,
so reproducibility guarantees hold per backend.

Kernels
-------
slot_forward     y[b, s, :] = W^H H[b, k_s] x_s
slot_adjoint     G[b, k] = sum_{s: k_s = k} (W r[b, s]) x_s^H
accumulate_rays  C[l] = sum_{rays on tap l} g * a_r a_t^H
exceedance       counts[j] = #{i : samples[i] >= t[j]}
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False


def _flag_enabled() -> bool:
    return os.environ.get("GENEST_NUMBA", "1").strip().lower() not in {"0", "false", "no", "off"}


USE_NUMBA = HAVE_NUMBA and _flag_enabled()


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------- numpy paths


def slot_forward_numpy(H, X, slot_k, Wc):
    # H (B, F, R, T), X (S, T), slot_k (S,), Wc = conj(W) (R, Q) -> (B, S, Q)
    Hs = H[:, slot_k]  # (B, S, R, T)
    v = np.einsum("bsrt,st->bsr", Hs, X)
    return v @ Wc


def slot_adjoint_numpy(Rv, X, slot_k, W, n_f):
    # Rv (B, S, Q) -> (B, F, R, T)
    v = Rv @ W.T  # (B, S, R): W r per slot
    B, S, n_r = v.shape
    out = np.zeros((B, n_f, n_r, X.shape[1]), dtype=np.result_type(v, X))
    contrib = np.einsum("bsr,st->bsrt", v, X.conj())
    np.add.at(out, (slice(None), slot_k), contrib)
    return out


def accumulate_rays_numpy(gains, ar, at, tap_idx, n_taps):
    outer = gains[:, None, None] * ar[:, :, None] * at.conj()[:, None, :]
    out = np.zeros((n_taps, ar.shape[1], at.shape[1]), dtype=complex)
    np.add.at(out, tap_idx, outer)
    return out


def exceedance_numpy(samples, t_grid):
    ordered = np.sort(samples)
    below = np.searchsorted(ordered, t_grid, side="left")
    return (ordered.size - below).astype(np.int64)


# ----------------------------------------------------------------- loop paths
# Written in nopython-compatible style; compiled when numba is present.


def _slot_forward_loops(H, X, slot_k, Wc):
    B = H.shape[0]
    n_r = H.shape[2]
    n_t = H.shape[3]
    S = X.shape[0]
    Q = Wc.shape[1]
    out = np.zeros((B, S, Q), dtype=np.complex128)
    v = np.empty(n_r, dtype=np.complex128)
    for b in range(B):
        for s in range(S):
            k = slot_k[s]
            for r in range(n_r):
                acc = 0j
                for t in range(n_t):
                    acc += H[b, k, r, t] * X[s, t]
                v[r] = acc
            for q in range(Q):
                acc = 0j
                for r in range(n_r):
                    acc += v[r] * Wc[r, q]
                out[b, s, q] = acc
    return out


def _slot_adjoint_loops(Rv, X, slot_k, W, n_f):
    B = Rv.shape[0]
    S = Rv.shape[1]
    Q = Rv.shape[2]
    n_r = W.shape[0]
    n_t = X.shape[1]
    out = np.zeros((B, n_f, n_r, n_t), dtype=np.complex128)
    v = np.empty(n_r, dtype=np.complex128)
    for b in range(B):
        for s in range(S):
            k = slot_k[s]
            for r in range(n_r):
                acc = 0j
                for q in range(Q):
                    acc += W[r, q] * Rv[b, s, q]
                v[r] = acc
            for r in range(n_r):
                for t in range(n_t):
                    out[b, k, r, t] += v[r] * np.conj(X[s, t])
    return out


def _accumulate_rays_loops(gains, ar, at, tap_idx, n_taps):
    n_rays = gains.shape[0]
    n_r = ar.shape[1]
    n_t = at.shape[1]
    out = np.zeros((n_taps, n_r, n_t), dtype=np.complex128)
    for i in range(n_rays):
        l = tap_idx[i]
        g = gains[i]
        for r in range(n_r):
            gr = g * ar[i, r]
            for t in range(n_t):
                out[l, r, t] += gr * np.conj(at[i, t])
    return out


def _exceedance_loops(samples, t_grid):
    counts = np.zeros(t_grid.shape[0], dtype=np.int64)
    for i in range(samples.shape[0]):
        x = samples[i]
        for j in range(t_grid.shape[0]):
            if x >= t_grid[j]:
                counts[j] += 1
    return counts


if HAVE_NUMBA:
    _jit = numba.njit(cache=True, nogil=True)
    slot_forward_numba = _jit(_slot_forward_loops)
    slot_adjoint_numba = _jit(_slot_adjoint_loops)
    accumulate_rays_numba = _jit(_accumulate_rays_loops)
    exceedance_numba = _jit(_exceedance_loops)
else:  # pragma: no cover
    slot_forward_numba = _slot_forward_loops
    slot_adjoint_numba = _slot_adjoint_loops
    accumulate_rays_numba = _accumulate_rays_loops
    exceedance_numba = _exceedance_loops


# ---------------------------------------------------------------- dispatchers


def _c128(a):
    return np.ascontiguousarray(a, dtype=np.complex128)


def slot_forward(H, X, slot_k, Wc):
    if USE_NUMBA:
        return slot_forward_numba(_c128(H), _c128(X), np.ascontiguousarray(slot_k, dtype=np.int64), _c128(Wc))
    return slot_forward_numpy(H, X, slot_k, Wc)


def slot_adjoint(Rv, X, slot_k, W, n_f):
    if USE_NUMBA:
        return slot_adjoint_numba(
            _c128(Rv), _c128(X), np.ascontiguousarray(slot_k, dtype=np.int64), _c128(W), int(n_f)
        )
    return slot_adjoint_numpy(Rv, X, slot_k, W, n_f)


def accumulate_rays(gains, ar, at, tap_idx, n_taps):
    if USE_NUMBA:
        return accumulate_rays_numba(
            _c128(gains), _c128(ar), _c128(at), np.ascontiguousarray(tap_idx, dtype=np.int64), int(n_taps)
        )
    return accumulate_rays_numpy(gains, ar, at, tap_idx, n_taps)


def exceedance(samples, t_grid):
    samples = np.ascontiguousarray(samples, dtype=np.float64)
    t_grid = np.ascontiguousarray(t_grid, dtype=np.float64)
    if USE_NUMBA:
        return exceedance_numba(samples, t_grid)
    return exceedance_numpy(samples, t_grid)
