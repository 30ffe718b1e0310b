import numpy as np
import pytest

from genest import nn
from genest.errors import ConfigError, FormatError, ShapeError

from conftest import crandn
from fd import central_diff, network_grad_errors, random_net, rel_err


def test_identity_layer():
    net = nn.NetworkParams((nn.LayerSpec(3, 3),), [np.eye(3)], [np.zeros(3)])
    x = np.array([1.0, -2.0, 0.5])
    assert np.array_equal(nn.forward(net, x), x)


@pytest.mark.parametrize("act,expect", [("relu", [0.0, 2.0]), ("leaky_relu", [-0.2, 2.0]), ("linear", [-1.0, 2.0])])
def test_activations(act, expect):
    net = nn.NetworkParams((nn.LayerSpec(2, 2, act),), [np.eye(2)], [np.zeros(2)])
    assert np.allclose(nn.forward(net, np.array([-1.0, 2.0])), expect)


def test_linear_weight_grad_closed_form(rng):
    net = nn.init_network([4, 3], "relu", rng)
    x, u = rng.standard_normal(4), rng.standard_normal(3)
    g = nn.backward(net, x, u)
    assert np.allclose(g.weights[0], np.outer(u, x))
    assert np.allclose(g.biases[0], u)
    assert np.allclose(g.input, net.weights[0].T @ u)


def test_inactive_relu_blocks_gradient():
    w1 = np.array([[1.0], [-1.0]])
    net = nn.NetworkParams((nn.LayerSpec(1, 2, "relu"), nn.LayerSpec(2, 1)), [w1, np.ones((1, 2))],
                           [np.zeros(2), np.zeros(1)])
    g = nn.backward(net, np.array([2.0]), np.array([1.0]))
    assert g.weights[0][1, 0] == 0.0 and g.biases[0][1] == 0.0
    assert g.weights[1][0, 1] == 0.0


@pytest.mark.parametrize("seed", range(20))
def test_backward_finite_differences(seed):
    rng = np.random.default_rng(seed)
    hidden = ("relu", "leaky_relu")[seed % 2]
    net = random_net(rng, hidden=hidden)
    x = rng.standard_normal(net.in_dim)
    u = rng.standard_normal(net.out_dim)
    assert max(network_grad_errors(net, x, u)) < 1e-5


def test_batched_backward_sums(rng):
    net = random_net(rng, [3, 5, 2])
    X, U = rng.standard_normal((4, 3)), rng.standard_normal((4, 2))
    g = nn.backward(net, X, U)
    singles = [nn.backward(net, X[i], U[i]) for i in range(4)]
    for j, a in enumerate(g.arrays()):
        assert np.allclose(a, sum(s.arrays()[j] for s in singles))
    assert np.allclose(g.input, np.stack([s.input for s in singles]))


def test_shape_errors(rng):
    net = random_net(rng, [3, 4, 2])
    with pytest.raises(ShapeError):
        nn.forward(net, np.zeros(4))
    with pytest.raises(ShapeError):
        nn.backward(net, np.zeros(3), np.zeros(3))
    with pytest.raises(ShapeError):
        nn.NetworkParams((nn.LayerSpec(3, 4), nn.LayerSpec(5, 2)), [np.zeros((4, 3)), np.zeros((2, 5))],
                         [np.zeros(4), np.zeros(2)])
    with pytest.raises(ConfigError):
        nn.LayerSpec(0, 2)
    with pytest.raises(ConfigError):
        nn.LayerSpec(2, 2, "tanh")


# -------------------------------------------------------------- optimizers


def test_rmsprop_zero_grad(rng):
    net = random_net(rng, [3, 2])
    zero = nn.GradientBundle([np.zeros_like(w) for w in net.weights], [np.zeros_like(b) for b in net.biases])
    new, _ = nn.rmsprop_step(net, zero, None)
    assert all(np.array_equal(a, b) for a, b in zip(new.arrays(), net.arrays()))


def test_rmsprop_hand_value():
    g, lr, decay, eps = 0.3, 5e-5, 0.9, 1e-8
    p, s = nn.rmsprop_update(np.array([1.0]), np.array([g]), np.array([0.0]), lr, decay, eps)
    assert np.isclose(p[0] - 1.0, -lr * g / np.sqrt((1 - decay) * g * g + eps), rtol=1e-14)
    assert np.isclose(s[0], (1 - decay) * g * g)


def test_rmsprop_default_lr():
    import inspect
    assert inspect.signature(nn.rmsprop_step).parameters["lr"].default == 5e-5


def test_rmsprop_shape_mismatch(rng):
    net = random_net(rng, [3, 2])
    bad = nn.GradientBundle([np.zeros((3, 3))], [np.zeros(2)])
    with pytest.raises(ShapeError):
        nn.rmsprop_step(net, bad, None)


def test_clip(rng):
    net = random_net(rng, [3, 4, 2])
    small = net.with_arrays([0.001 * np.tanh(a) for a in net.arrays()])
    assert all(np.array_equal(a, b) for a, b in zip(nn.clip_weights(small, 0.01).arrays(), small.arrays()))
    one = nn.NetworkParams((nn.LayerSpec(1, 1),), [np.array([[0.9]])], [np.array([-0.5])])
    c = nn.clip_weights(one, 0.01)
    assert c.weights[0][0, 0] == 0.01 and c.biases[0][0] == -0.01
    clipped = nn.clip_weights(net, 0.01)
    assert clipped.max_abs() <= 0.01
    twice = nn.clip_weights(clipped, 0.01)
    assert all(np.array_equal(a, b) for a, b in zip(twice.arrays(), clipped.arrays()))
    with pytest.raises(ConfigError):
        nn.clip_weights(net, 0.0)


def test_lipschitz_bound_finite(rng):
    critic = nn.clip_weights(nn.make_critic(8, rng, (6, 4)), 0.01)
    bound = nn.lipschitz_bound(critic)
    assert np.isfinite(bound) and bound > 0
    # empirical slope never exceeds the bound (inf-norm in, inf-norm out)
    x = rng.standard_normal((200, 8))
    d = rng.standard_normal((200, 8)) * 1e-3
    slope = np.abs(nn.forward(critic, x + d) - nn.forward(critic, x))[:, 0] / np.abs(d).max(axis=1)
    assert slope.max() <= bound * (1 + 1e-9)


# ------------------------------------------------------------ complex bridge


def test_bridge_roundtrip(rng):
    H = crandn(rng, 3, 2, 4)
    v = nn.channel_to_real(H)
    assert v.shape == (48,)
    assert np.array_equal(nn.real_to_channel(v, (3, 2, 4)), H)


def test_bridge_real_channel(rng):
    H = rng.standard_normal((2, 2, 2)).astype(complex)
    assert not np.any(nn.channel_to_real(H)[8:])


def test_bridge_strides(rng):
    n_f, n_r, n_t = 3, 2, 4
    H = crandn(rng, n_f, n_r, n_t)
    v = nn.channel_to_real(H)
    assert v[1] == H[0, 0, 1].real
    k, r, t = 2, 1, 3
    assert v[k * n_r * n_t + r * n_t + t] == H[k, r, t].real
    assert v[n_f * n_r * n_t + k * n_r * n_t + r * n_t + t] == H[k, r, t].imag


def test_bridge_length_error():
    with pytest.raises(ShapeError):
        nn.real_to_channel(np.zeros(7), (1, 2, 2))


# --------------------------------------------------------------- checkpoints


def test_checkpoint_roundtrip(tmp_path, rng):
    net = random_net(rng, [4, 6, 3])
    path = tmp_path / "n.gnet"
    nn.save_network(net, path, {"a": 1})
    back, meta = nn.load_network(path)
    assert meta == {"a": 1}
    assert back.specs == net.specs
    assert all(np.array_equal(a, b) for a, b in zip(back.arrays(), net.arrays()))
    assert path.read_bytes()[:4] == b"GNET"


def test_checkpoint_corruption(tmp_path, rng):
    net = random_net(rng, [4, 3])
    path = tmp_path / "n.gnet"
    nn.save_network(net, path)
    raw = path.read_bytes()
    for name, blob in {"magic": b"NOPE" + raw[4:], "truncated": raw[:40], "trailing": raw + b"x",
                       "version": raw[:4] + b"\x09\x00" + raw[6:], "empty": b""}.items():
        bad = tmp_path / name
        bad.write_bytes(blob)
        with pytest.raises(FormatError):
            nn.load_network(bad)
