"""Channel estimators sharing one report type: LS, LMMSE, OMP and GAN inversion."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import scipy.linalg

from . import nn
from .channel import channel_vector, vector_to_channel
from .errors import ConfigError, IllPosedError, ShapeError, SingularMatrixError, UndefinedMetricError
from .linalg import dft_matrix, kron, regularized_hermitian_solve
from .measurement import MeasurementOperator, ReceivedSignal
from .wgan import ChannelGenerator

NMSE_SENTINEL_DB = -200.0


@dataclass
class EstimateReport:
    estimator: str
    estimate: np.ndarray  # (N_f, N_r, N_t)
    residual: float
    nmse_db: Optional[float] = None
    restart_losses: List[float] = field(default_factory=list)
    support: Optional[List[int]] = None
    residual_history: List[float] = field(default_factory=list)


def nmse(truth: np.ndarray, estimate: np.ndarray) -> float:
    """``10 log10(||h - h_hat||^2 / ||h||^2)``; ``-inf`` for an exact estimate."""
    truth = np.asarray(getattr(truth, "per_subcarrier", truth))
    estimate = np.asarray(getattr(estimate, "per_subcarrier", estimate))
    if truth.shape != estimate.shape:
        raise ShapeError(f"shape mismatch {truth.shape} vs {estimate.shape}")
    power = float(np.sum(np.abs(truth) ** 2))
    if power == 0.0:
        raise UndefinedMetricError("NMSE undefined for an all-zero channel")
    err = float(np.sum(np.abs(truth - estimate) ** 2))
    if err == 0.0:
        return -math.inf
    return 10.0 * math.log10(err / power)


def _finish(name, estimate, op, received, truth, **extra):
    res = float(np.linalg.norm(received.y - op.forward(estimate)))
    report = EstimateReport(name, estimate, res, **extra)
    if truth is not None:
        report.nmse_db = nmse(truth, estimate)
    return report


# --------------------------------------------------------------------- LS


def _check_well_posed(op: MeasurementOperator):
    need = op.cfg.n_rx * op.cfg.n_tx
    have = op.slots_per_subcarrier() * op.cfg.n_rx_rf
    if np.any(have < need):
        k = int(np.argmin(have))
        raise IllPosedError(
            f"subcarrier {k} has {int(have[k])} measurements for {need} unknowns; A^H A is singular"
        )


def ls_vector(received: ReceivedSignal, op: MeasurementOperator) -> np.ndarray:
    """LS estimate in stacked-vector form, solved block by block."""
    _check_well_posed(op)
    grams = op.gram_blocks()
    rhs = channel_vector(op.adjoint(received.y)).reshape(op.cfg.n_f, -1)
    out = np.empty_like(rhs)
    for k in range(op.cfg.n_f):
        try:
            out[k] = regularized_hermitian_solve(grams[k], rhs[k], 0.0)
        except SingularMatrixError as exc:
            raise IllPosedError(f"subcarrier {k}: {exc}") from exc
    return out.reshape(-1)


def estimate_ls(received: ReceivedSignal, op: MeasurementOperator, truth=None) -> EstimateReport:
    h = ls_vector(received, op)
    return _finish("ls", vector_to_channel(h, *op.channel_shape), op, received, truth)


# ------------------------------------------------------------------ LMMSE


def channel_covariance(channels: np.ndarray, shrinkage: float = 1e-3) -> np.ndarray:
    """Sample ``E[h h^H]`` of stacked channel vectors plus ``shrinkage * tr/dim * I``."""
    channels = getattr(channels, "channels", channels)
    V = channel_vector(np.asarray(channels))
    R = V.T @ V.conj() / V.shape[0]
    R = 0.5 * (R + R.conj().T)
    if shrinkage:
        R = R + shrinkage * np.real(np.trace(R)) / R.shape[0] * np.eye(R.shape[0])
    return R


def noise_gamma_blocks(op: MeasurementOperator, noise_var: float) -> np.ndarray:
    """Per-subcarrier ``(A^H A)^{-1} A^H E[ww^H] A (A^H A)^{-1}`` (rho-scaled).

    Uses the combined form ``A_k^H (sigma^2 I (x) W^H W) A_k
    = rho sigma^2 sum_s conj(x_s) x_s^T (x) W W^H W W^H``.
    """
    _check_well_posed(op)
    cfg = op.cfg
    grams = op.gram_blocks()
    ww = op.w_rf @ op.w_rf.conj().T
    outer = np.zeros((cfg.n_f, cfg.n_tx, cfg.n_tx), dtype=complex)
    np.add.at(outer, op.slot_k, op.tx.conj()[:, :, None] * op.tx[:, None, :])
    n = cfg.n_rx * cfg.n_tx
    mid = op.rho * noise_var * np.einsum("kab,cd->kacbd", outer, ww @ ww).reshape(cfg.n_f, n, n)
    out = np.empty_like(mid)
    for k in range(cfg.n_f):
        fac = scipy.linalg.cho_factor(grams[k], lower=True)
        x = scipy.linalg.cho_solve(fac, mid[k])
        out[k] = scipy.linalg.cho_solve(fac, x.conj().T).conj().T
    return out


def noise_gamma_dense(op: MeasurementOperator, noise_var: float) -> np.ndarray:
    """Same quantity from the dense operator and dense noise covariance."""
    A = op.dense_matrix()
    cov = noise_var * kron(np.eye(op.n_slots), op.w_rf.conj().T @ op.w_rf)
    G_inv = np.linalg.inv(A.conj().T @ A)
    return G_inv @ A.conj().T @ cov @ A @ G_inv


def estimate_lmmse(received: ReceivedSignal, op: MeasurementOperator, covariance: np.ndarray,
                   truth=None) -> EstimateReport:
    """``R (R + Gamma/rho)^{-1} h_LS`` with ``covariance`` = R over stacked vectors."""
    R = getattr(covariance, "channels", None)
    R = channel_covariance(R) if R is not None else np.asarray(covariance)
    if R.shape != (op.n_cols, op.n_cols):
        raise ShapeError(f"covariance {R.shape} does not match {op.n_cols} unknowns")
    h_ls = ls_vector(received, op)
    system = R.copy()
    if received.noise_var > 0:
        gamma = noise_gamma_blocks(op, received.noise_var)
        blk = gamma.shape[1]
        for k in range(op.cfg.n_f):
            system[k * blk:(k + 1) * blk, k * blk:(k + 1) * blk] += gamma[k]
    system = 0.5 * (system + system.conj().T)
    u = regularized_hermitian_solve(system, h_ls, 0.0)
    h = R @ u
    return _finish("lmmse", vector_to_channel(h, *op.channel_shape), op, received, truth)


# -------------------------------------------------------------------- OMP


def dft_dictionary(n_f: int, n_r: int, n_t: int) -> np.ndarray:
    """Delay-angle DFT basis ``F_{N_f}^H (x) conj(F_{N_t}) (x) F_{N_r}``.

    The factor order follows the stacked-vector layout (subcarrier, tx, rx).
    """
    return kron(dft_matrix(n_f).conj().T, kron(dft_matrix(n_t).conj(), dft_matrix(n_r)))


def omp(Phi: np.ndarray, y: np.ndarray, sparsity: int, tol: float = 0.0):
    """Orthogonal matching pursuit.

    Returns ``(coefficients, support, residual_norms)``; the residual history
    starts with ``||y||``.
    """
    m, n = Phi.shape
    if sparsity < 1:
        raise ConfigError("sparsity must be >= 1")
    if sparsity > m:
        raise ConfigError(f"sparsity {sparsity} exceeds {m} measurements")
    r = y.copy()
    support: List[int] = []
    history = [float(np.linalg.norm(r))]
    coef = np.zeros(0, dtype=complex)
    floor = 1e-12 * max(history[0], 1e-300)
    for _ in range(sparsity):
        if history[-1] <= max(tol, floor):
            break
        corr = np.abs(Phi.conj().T @ r)
        corr[support] = -1.0
        support.append(int(np.argmax(corr)))
        sub = Phi[:, support]
        coef, *_ = np.linalg.lstsq(sub, y, rcond=None)
        r = y - sub @ coef
        history.append(float(np.linalg.norm(r)))
    x = np.zeros(n, dtype=complex)
    x[support] = coef
    return x, support, history


def estimate_omp(received: ReceivedSignal, op: MeasurementOperator, sparsity: int, basis=None,
                 truth=None) -> EstimateReport:
    """OMP on ``A Psi``; stops after ``sparsity`` atoms or once ``||r|| <= sigma sqrt(M)``."""
    if basis is None:
        basis = dft_dictionary(*op.channel_shape)
    if sparsity > op.n_rows:
        raise ConfigError(f"sparsity {sparsity} exceeds {op.n_rows} measurements")
    Phi = op.dense_matrix() @ basis
    tol = math.sqrt(received.noise_var * op.n_rows)
    coef, support, history = omp(Phi, received.y, sparsity, tol)
    h = basis @ coef
    return _finish("omp", vector_to_channel(h, *op.channel_shape), op, received, truth,
                   support=support, residual_history=history)


# -------------------------------------------------------------------- GAN


@dataclass(frozen=True)
class InversionConfig:
    restarts: int = 5
    iterations: int = 200
    step: float = 0.05
    optimizer: str = "gd"  # or "rmsprop"
    line_search: bool = True
    decay: float = 0.9
    eps: float = 1e-8
    fold_output: bool = True
    noise_floor_stop: bool = True  # freeze a restart once its loss reaches the expected noise energy

    def __post_init__(self):
        if self.restarts < 1 or self.iterations < 1:
            raise ConfigError("restarts and iterations must be >= 1")
        if self.step < 0:
            raise ConfigError("step must be non-negative")
        if self.optimizer not in ("rmsprop", "gd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")


def _as_real(y: np.ndarray) -> np.ndarray:
    return np.concatenate([y.real, y.imag], axis=-1)


class LatentObjective:
    """``L(z) = ||y - sqrt(rho) A G(z)||^2`` and its latent gradient, batched over z.

    The literal path maps ``G(z)`` through the operator and pulls the residual
    back with the adjoint. When the output layer is linear the folded path
    precomputes ``A`` composed with that layer, which gives the same values
    at a fraction of the cost.
    """

    def __init__(self, generator: ChannelGenerator, op: MeasurementOperator, y: np.ndarray, fold: bool = True):
        if tuple(generator.dims) != op.channel_shape:
            raise ShapeError(f"generator dims {generator.dims} != operator {op.channel_shape}")
        self.generator = generator
        self.op = op
        self.y = y
        self.fold = fold and generator.net.specs[-1].activation == "linear"
        if self.fold:
            net = generator.net
            self.body = nn.NetworkParams(net.specs[:-1], net.weights[:-1], net.biases[:-1]) if len(net.specs) > 1 else None
            W, b = net.weights[-1], net.biases[-1]
            cols = generator.scale * nn.real_to_channel(W.T, generator.dims)  # one channel per hidden unit
            self.B = _as_real(op.forward(cols)).T  # (2M, hidden)
            self.c = _as_real(y) - _as_real(op.forward(generator.scale * nn.real_to_channel(b, generator.dims)))

    def value_and_grad(self, z: np.ndarray, need_grad: bool = True):
        if self.fold:
            if self.body is None:
                hidden, cache = z, None
            else:
                hidden, cache = nn.forward_cache(self.body, z)
            res = self.c - hidden @ self.B.T  # (R, 2M)
            loss = np.sum(res * res, axis=-1)
            if not need_grad:
                return loss, None
            g_hidden = -2.0 * res @ self.B
            if self.body is None:
                return loss, g_hidden
            return loss, nn.backward(self.body, z, g_hidden, cache, param_grads=False).input
        out, cache = nn.forward_cache(self.generator.net, z)
        h = self.generator.scale * nn.real_to_channel(out, self.generator.dims)
        res = self.y - self.op.forward(h)
        loss = np.sum(np.abs(res) ** 2, axis=-1)
        if not need_grad:
            return loss, None
        g_channel = -2.0 * self.op.adjoint(res)
        upstream = self.generator.scale * nn.channel_to_real(g_channel)
        return loss, nn.backward(self.generator.net, z, upstream, cache, param_grads=False).input


def invert_latent(objective: LatentObjective, z0: np.ndarray, cfg: InversionConfig, record: bool = False,
                  floor: float = 0.0):
    """Minimize the objective from each row of ``z0``.

    Returns ``(best_z, best_loss, history)`` per restart; the best iterate
    (initial point included) is kept, so ``best_loss <= loss(z0)``. A restart
    stops moving once its loss is at or below ``floor``.
    """
    z = np.array(z0, dtype=float)
    loss, grad = objective.value_and_grad(z)
    best_z, best_loss = z.copy(), loss.copy()
    history = [loss.copy()] if record else []
    state = np.zeros_like(z)
    step = np.full(z.shape[0], cfg.step)
    for _ in range(cfg.iterations):
        active = best_loss > floor
        if cfg.step == 0 or not active.any():
            break
        grad = np.where(active[:, None], grad, 0.0)
        if cfg.line_search:
            z, loss, step = _backtrack(objective, z, loss, grad, step, cfg)
            _, grad = objective.value_and_grad(z)
        else:
            if cfg.optimizer == "rmsprop":
                z, state = nn.rmsprop_update(z, grad, state, cfg.step, cfg.decay, cfg.eps)
            else:
                z = z - cfg.step * grad
            loss, grad = objective.value_and_grad(z)
        better = loss < best_loss
        best_z[better] = z[better]
        best_loss[better] = loss[better]
        if record:
            history.append(loss.copy())
    return best_z, best_loss, history


def _backtrack(objective, z, loss, grad, step, cfg, shrink=0.5, armijo=1e-4, max_halvings=40):
    """Armijo backtracking along ``-grad``, per restart; steps grow 2x after success."""
    direction = grad
    if cfg.optimizer == "rmsprop":
        direction = grad / np.sqrt(grad * grad + cfg.eps)
    gnorm = np.sum(grad * direction, axis=1)
    t = step * 2.0
    pending = np.ones(z.shape[0], dtype=bool)
    new_z, new_loss = z.copy(), loss.copy()
    for _ in range(max_halvings):
        cand = z[pending] - t[pending, None] * direction[pending]
        cand_loss, _ = objective.value_and_grad(cand, need_grad=False)
        ok = cand_loss <= loss[pending] - armijo * t[pending] * gnorm[pending]
        idx = np.flatnonzero(pending)
        new_z[idx[ok]] = cand[ok]
        new_loss[idx[ok]] = cand_loss[ok]
        pending[idx[ok]] = False
        t[idx[~ok]] *= shrink
        if not pending.any():
            break
    return new_z, new_loss, t


def noise_energy(op: MeasurementOperator, noise_var: float) -> float:
    """Expected ``||w||^2`` for noise of covariance ``sigma^2 W^H W`` per slot."""
    return float(noise_var * op.n_slots * np.real(np.trace(op.w_rf.conj().T @ op.w_rf)))


def estimate_gan(received: ReceivedSignal, op: MeasurementOperator, generator: ChannelGenerator,
                 inv_cfg: InversionConfig, rng: np.random.Generator, truth=None) -> EstimateReport:
    objective = LatentObjective(generator, op, received.y, fold=inv_cfg.fold_output)
    z0 = rng.standard_normal((inv_cfg.restarts, generator.latent_dim))
    floor = noise_energy(op, received.noise_var) if inv_cfg.noise_floor_stop else 0.0
    best_z, best_loss, _ = invert_latent(objective, z0, inv_cfg, floor=floor)
    winner = int(np.argmin(best_loss))  # first index wins ties
    estimate = generator(best_z[winner])
    return _finish("gan", estimate, op, received, truth, restart_losses=[float(v) for v in best_loss])
