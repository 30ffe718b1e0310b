"""Central finite-difference helpers shared by gradient tests."""

import numpy as np

from genest import nn


def central_diff(f, x, h=1e-6):
    """Gradient of scalar ``f`` at array ``x`` by central differences."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    """``max|a - b| / max|b|``, the max-norm relative error."""
    scale = np.max(np.abs(b))
    return float(np.max(np.abs(a - b)) / scale) if scale > 0 else float(np.max(np.abs(a)))


def random_net(rng, dims=None, hidden="relu"):
    if dims is None:
        depth = int(rng.integers(2, 5))
        dims = [int(d) for d in rng.integers(2, 7, depth + 1)]
    net = nn.init_network(dims, hidden, rng)
    return net.with_arrays([a + 0.1 * rng.standard_normal(a.shape) for a in net.arrays()])


def network_grad_errors(net, x, upstream):
    """Max-norm relative errors of every parameter gradient and the input gradient."""
    grads = nn.backward(net, x, upstream)
    errs = []
    arrays = net.arrays()
    for i, (a, g) in enumerate(zip(arrays, grads.arrays())):
        def f(v, i=i):
            trial = list(arrays)
            trial[i] = v
            return float(np.sum(upstream * nn.forward(net.with_arrays(trial), x)))
        errs.append(rel_err(g, central_diff(f, a)))
    fx = central_diff(lambda v: float(np.sum(upstream * nn.forward(net, v))), x)
    errs.append(rel_err(grads.input, fx))
    return errs
