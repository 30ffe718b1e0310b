"""Time each compute kernel under the numba and numpy backends.

Usage::

    python benchmarks/bench_kernels.py [--repeat 20] [--batch 5]

Inputs follow the desk preset shapes. The numba path is warmed up once so
JIT compilation is excluded from the timings. Outputs are also compared so a
backend mismatch shows up here as well as in the test suite.
"""

import argparse
import timeit

import numpy as np

from genest import kernels
from genest.channel import ClusterRayConfig
from genest.measurement import TransceiverConfig


def make_cases(batch: int, rng: np.random.Generator):
    tx = TransceiverConfig()
    ch = ClusterRayConfig()
    n_f, n_r, n_t = ch.dims
    S = tx.n_frames * tx.n_f
    c = lambda *s: rng.standard_normal(s) + 1j * rng.standard_normal(s)
    H = c(batch, n_f, n_r, n_t)
    X = c(S, n_t)
    slot_k = np.tile(np.arange(n_f), tx.n_frames)
    W = c(n_r, tx.n_rx_rf)
    R = c(batch, S, tx.n_rx_rf)
    n_ray = ch.n_clusters * ch.n_rays
    tap_idx = np.repeat(ch.cluster_taps(), ch.n_rays)
    gains, ar, at = c(n_ray), c(n_ray, n_r), c(n_ray, n_t)
    samples = rng.standard_normal(100_000)
    grid = np.linspace(0, 3, 20)
    return {
        "slot_forward": lambda: kernels.slot_forward(H, X, slot_k, W.conj()),
        "slot_adjoint": lambda: kernels.slot_adjoint(R, X, slot_k, W, n_f),
        "accumulate_rays": lambda: kernels.accumulate_rays(gains, ar, at, tap_idx, ch.n_taps),
        "exceedance": lambda: kernels.exceedance(samples, grid),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--batch", type=int, default=5, help="channels per forward/adjoint call")
    args = ap.parse_args(argv)
    if not kernels.HAVE_NUMBA:
        raise SystemExit("numba is not installed")

    results = {}
    for flag in (False, True):
        kernels.USE_NUMBA = flag
        cases = make_cases(args.batch, np.random.default_rng(0))
        for name, fn in cases.items():
            out = fn()  # warm-up / JIT
            best = min(timeit.repeat(fn, number=10, repeat=args.repeat)) / 10
            results.setdefault(name, {})[kernels.backend()] = (best, out)

    print(f"{'kernel':18s} {'numpy [us]':>12s} {'numba [us]':>12s} {'speedup':>8s}  agree")
    for name, r in results.items():
        t_np, o_np = r["numpy"]
        t_nb, o_nb = r["numba"]
        agree = np.allclose(o_np, o_nb, rtol=1e-12, atol=1e-12)
        print(f"{name:18s} {t_np * 1e6:12.1f} {t_nb * 1e6:12.1f} {t_np / t_nb:8.2f}  {agree}")


if __name__ == "__main__":
    main()
