"""Small builders shared by estimator, bench and acceptance tests."""

import numpy as np

from genest import nn
from genest.measurement import (TransceiverConfig, build_operator, identity_networks, orthogonal_pilots,
                                sample_phase_networks, sample_pilots)
from genest.wgan import ChannelGenerator


def digital_operator(n_tx, n_rx, n_f, eta=1.0, seed=0, orthogonal=True, n_frames=None):
    cfg = TransceiverConfig.digital(n_tx, n_rx, n_f, n_frames)
    rng = np.random.default_rng(seed)
    pilots = (orthogonal_pilots if orthogonal else sample_pilots)(cfg, eta, rng)
    return build_operator(pilots, *identity_networks(cfg), cfg)


def hybrid_operator(cfg: TransceiverConfig, eta=1.0, seed=0):
    rng = np.random.default_rng(seed)
    pilots = sample_pilots(cfg, eta, rng)
    return build_operator(pilots, *sample_phase_networks(cfg, rng), cfg)


def random_generator(dims, latent=4, hidden=(16, 32), seed=0, scale=1.0):
    rng = np.random.default_rng(seed)
    net = nn.make_generator(latent, 2 * int(np.prod(dims)), rng, hidden)
    net = net.with_arrays([a + 0.05 * rng.standard_normal(a.shape) for a in net.arrays()])
    return ChannelGenerator(net, tuple(dims), scale)
