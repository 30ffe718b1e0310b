import numpy as np
import pytest

from genest import nn
from genest.channel import ClusterRayConfig, generate_dataset
from genest.errors import ConfigError
from genest.wgan import (ChannelGenerator, WganConfig, critic_step, generator_loss_grad, generator_step,
                         sample_channels, stat_match_report, train)

from fd import central_diff, rel_err

TOY_MEAN = np.array([1.0, -0.5])
TOY_CFG = WganConfig(epochs=300, batch_size=50, lr=1e-3, clip=0.01, latent_dim=2,
                     gen_hidden=(32, 32), critic_hidden=(32, 32))


def toy_points(n=1000, seed=0):
    rng = np.random.default_rng(seed)
    return TOY_MEAN + 0.3 * rng.standard_normal((n, 2))


def toy_channels(n=1000, seed=0):
    """2-D points as (1, 1, 1) complex channels: x + iy."""
    pts = toy_points(n, seed)
    return (pts[:, 0] + 1j * pts[:, 1]).reshape(n, 1, 1, 1)


@pytest.fixture(scope="module")
def toy_run():
    return train(toy_channels(), TOY_CFG, 1)


def zero_net(dims, hidden):
    net = nn.init_network(dims, hidden, np.random.default_rng(0))
    return net.with_arrays([np.zeros_like(a) for a in net.arrays()])


def test_config_validation():
    with pytest.raises(ConfigError):
        WganConfig(batch_size=0)
    with pytest.raises(ConfigError):
        WganConfig(clip=0.0)
    assert WganConfig().lr == 5e-5 and WganConfig().critic_steps == 5 and WganConfig().batch_size == 200


# ------------------------------------------------------------------ critic


def test_constant_critic_unchanged(rng):
    critic = zero_net([2, 4, 1], "leaky_relu")
    gen = nn.make_generator(2, 2, rng, (4,))
    new, _, obj = critic_step(critic, gen, toy_points(10), rng, TOY_CFG)
    assert obj == 0.0
    # the output-bias gradient sums +-1/m and may round to ~1e-16
    assert all(np.allclose(a, b, rtol=0, atol=1e-12) for a, b in zip(new.arrays(), critic.arrays()))


def test_critic_step_respects_clip(rng):
    critic = nn.clip_weights(nn.make_critic(2, rng, (8, 8)), 0.01)
    gen = nn.make_generator(2, 2, rng, (8,))
    state = None
    for _ in range(20):
        critic, state, _ = critic_step(critic, gen, toy_points(20), rng, TOY_CFG, state)
        assert critic.max_abs() <= 0.01


def test_critic_objective_increases():
    rng = np.random.default_rng(3)
    critic = nn.clip_weights(nn.make_critic(2, rng, (16, 16)), 0.01)
    gen = nn.make_generator(2, 2, rng, (16,))
    real = toy_points(100)
    z = rng.standard_normal((100, 2))

    def objective(c):
        return float(nn.forward(c, real).mean() - nn.forward(c, nn.forward(gen, z)).mean())

    start = objective(critic)
    state = None
    for _ in range(50):
        critic, state, _ = critic_step(critic, gen, real, rng, TOY_CFG, state)
    assert objective(critic) > start


def test_critic_rejects_empty_batch(rng):
    critic = nn.make_critic(2, rng, (4,))
    with pytest.raises(ConfigError):
        critic_step(critic, nn.make_generator(2, 2, rng, (4,)), np.zeros((0, 2)), rng, TOY_CFG)


# --------------------------------------------------------------- generator


def test_constant_critic_freezes_generator(rng):
    critic = zero_net([2, 4, 1], "leaky_relu")
    gen = nn.make_generator(2, 2, rng, (4,))
    new, _ = generator_step(critic, gen, rng, TOY_CFG)
    assert all(np.array_equal(a, b) for a, b in zip(new.arrays(), gen.arrays()))


@pytest.mark.parametrize("seed", range(3))
def test_generator_gradient_finite_differences(seed):
    rng = np.random.default_rng(seed)
    # perturb off zero biases so no sample sits exactly on an activation kink
    jitter = lambda net: net.with_arrays([a + 0.1 * rng.standard_normal(a.shape) for a in net.arrays()])
    gen = jitter(nn.make_generator(3, 4, rng, (5, 6)))
    critic = jitter(nn.make_critic(4, rng, (5,)))
    z = rng.standard_normal((7, 3))
    _, grads = generator_loss_grad(critic, gen, z)
    arrays = gen.arrays()
    for i, (a, g) in enumerate(zip(arrays, grads.arrays())):
        def loss(v, i=i):
            trial = list(arrays)
            trial[i] = v
            return generator_loss_grad(critic, gen.with_arrays(trial), z)[0]
        assert rel_err(g, central_diff(loss, a)) < 1e-5


def test_generator_step_seeded(rng):
    gen = nn.make_generator(2, 2, rng, (4,))
    critic = nn.make_critic(2, rng, (4,))
    a, _ = generator_step(critic, gen, np.random.default_rng(9), TOY_CFG)
    b, _ = generator_step(critic, gen, np.random.default_rng(9), TOY_CFG)
    assert all(np.array_equal(x, y) for x, y in zip(a.arrays(), b.arrays()))


# ------------------------------------------------------------------ train


def test_zero_epochs():
    gen, log = train(toy_channels(100), TOY_CFG.__class__(epochs=0, batch_size=50, latent_dim=2,
                                                          gen_hidden=(4,), critic_hidden=(4,)), 5)
    assert len(log) == 0
    init = nn.make_generator(2, 2, np.random.default_rng(0), (4,))
    assert gen.net.specs == init.specs


def test_small_dataset_rejected():
    with pytest.raises(ConfigError):
        train(toy_channels(10), TOY_CFG, 0)


def test_training_reproducible():
    cfg = WganConfig(epochs=3, batch_size=20, latent_dim=3, gen_hidden=(8,), critic_hidden=(8,))
    ds = generate_dataset(ClusterRayConfig(n_tx_h=2, n_tx_v=1, n_rx_h=1, n_rx_v=1, n_subcarriers=4, n_taps=2), 60, 3)
    g1, l1 = train(ds, cfg, 7)
    g2, l2 = train(ds, cfg, 7)
    g3, _ = train(ds, cfg, 8)
    assert all(np.array_equal(a, b) for a, b in zip(g1.net.arrays(), g2.net.arrays()))
    assert l1.to_csv() == l2.to_csv()
    assert not np.array_equal(g1.net.weights[0], g3.net.weights[0])
    assert len(l1) == 3 and l1.to_csv().splitlines()[0] == "epoch,critic_objective,gen_norm,critic_norm,seconds"
    assert l1.to_csv().splitlines()[1].endswith(",")  # seconds left blank unless requested
    assert float(l1.to_csv(record_time=True).splitlines()[1].split(",")[-1]) >= 0


def test_toy_mean_matched(toy_run):
    gen, _ = toy_run
    s = sample_channels(gen, 5000, np.random.default_rng(2)).reshape(-1)
    assert abs(s.real.mean() - TOY_MEAN[0]) < 0.1
    assert abs(s.imag.mean() - TOY_MEAN[1]) < 0.1


def test_toy_objective_trend(toy_run):
    _, log = toy_run
    obj = np.array([r[1] for r in log.rows])
    ma = np.abs(np.convolve(obj, np.ones(50) / 50, "valid"))
    thirds = [chunk.mean() for chunk in np.array_split(ma, 3)]
    assert thirds[0] >= thirds[1] >= thirds[2]
    assert all(np.isfinite(log.lipschitz))


def test_best_checkpoint_tracking():
    cfg = WganConfig(epochs=4, batch_size=20, latent_dim=3, gen_hidden=(8,), critic_hidden=(8,),
                     stat_every=2, stat_samples=30)
    ds = generate_dataset(ClusterRayConfig(n_tx_h=2, n_tx_v=1, n_rx_h=1, n_rx_v=1, n_subcarriers=4, n_taps=2), 60, 3)
    _, log = train(ds, cfg, 1)
    assert [e for e, _ in log.stat_history] == [2, 4]
    best = min(log.stat_history, key=lambda r: r[1])
    assert log.best_epoch == best[0] and log.best is not None


# ------------------------------------------------------------------ sampling


def test_sample_channels(toy_run):
    gen, _ = toy_run
    a = sample_channels(gen, 1000, np.random.default_rng(1))
    b = sample_channels(gen, 1000, np.random.default_rng(1))
    assert a.shape == (1000, 1, 1, 1)
    assert np.array_equal(a, b) and np.isfinite(a).all()
    with pytest.raises(ConfigError):
        sample_channels(gen, 0, np.random.default_rng(1))


def test_generator_checkpoint(tmp_path, toy_run):
    gen, _ = toy_run
    gen.save(tmp_path / "g.gnet")
    back = ChannelGenerator.load(tmp_path / "g.gnet")
    z = np.random.default_rng(0).standard_normal((5, 2))
    assert np.array_equal(back(z), gen(z)) and back.dims == gen.dims and back.scale == gen.scale


# ---------------------------------------------------------------- stat match


@pytest.fixture(scope="module")
def desk_real():
    return generate_dataset(ClusterRayConfig(), 1000, 4).channels


def test_stat_match_identical(desk_real):
    rep = stat_match_report(desk_real, desk_real)
    assert rep.total == 0.0
    assert set(rep.as_dict()) == {"second_moment", "freq_autocorr", "spatial_spectrum", "tail", "total"}


def test_stat_match_split_half_vs_untrained(desk_real):
    baseline = stat_match_report(desk_real[:500], desk_real[500:]).total
    cfg = ClusterRayConfig()
    net = nn.make_generator(8, 2 * int(np.prod(cfg.dims)), np.random.default_rng(0))
    untrained = ChannelGenerator(net, cfg.dims, 1.0)
    fake = sample_channels(untrained, 500, np.random.default_rng(1))
    assert stat_match_report(fake, desk_real[:500]).total > 5 * baseline


def test_stat_match_empty():
    with pytest.raises(ConfigError):
        stat_match_report(np.zeros((0, 1, 1, 1)), np.ones((3, 1, 1, 1)))
