"""AdaMax updates and joint refinement of latent codes over a co-visible set."""

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .decoder import ShapeBasis
from .objective import LossConfig, MultiViewObjective

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


@dataclass
class AdaMaxState:
    step: int = 0
    m: np.ndarray = None
    u: np.ndarray = None
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adamax_step(state: AdaMaxState, params, grad):
    """One AdaMax update. Returns a new state and new parameters."""
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if params.shape != grad.shape:
        raise ValueError(f"gradient shape {grad.shape} != parameter shape {params.shape}")
    bad = np.flatnonzero(~np.isfinite(grad))
    if bad.size:
        raise FloatingPointError(f"non-finite gradient entries at indices {bad.tolist()}")
    m = np.zeros_like(params) if state.m is None else state.m
    u = np.zeros_like(params) if state.u is None else state.u
    t = state.step + 1
    m = state.beta1 * m + (1.0 - state.beta1) * grad
    u = np.maximum(state.beta2 * u, np.abs(grad))
    step = state.lr / (1.0 - state.beta1**t)
    new_params = params - step * m / (u + state.eps)
    return replace(state, step=t, m=m, u=u), new_params


@dataclass
class RefineConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    rel_tol: float = 1e-4
    max_iters: int = 500
    mask_refresh: int = 10
    optimize_alpha: bool = False
    divergence_factor: float = 1e6
    loss: LossConfig = field(default_factory=LossConfig)


@dataclass
class RefineResult:
    z: np.ndarray
    alpha: np.ndarray
    trace: list
    iterations: int
    stop_reason: str
    frozen: object = None


def refine_codes(views, basis: ShapeBasis, init_z=None, alpha=None, config: RefineConfig = None):
    """Jointly optimize the codes of all views (and their mean depths if enabled)."""
    cfg = config or RefineConfig()
    if len(views) < 2:
        raise ValueError("refinement needs at least two views")
    M, K = len(views), basis.latent_dim
    z = np.zeros((M, K)) if init_z is None else np.array(init_z, dtype=np.float64).reshape(M, K)
    alpha = np.ones(M) if alpha is None else np.array(alpha, dtype=np.float64).reshape(M)
    if np.any(alpha <= 0):
        raise ValueError("mean depths must be positive")
    obj = MultiViewObjective(views, basis, cfg.loss)
    state = AdaMaxState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    trace = []
    frozen = None
    reason = "max_iters"
    it = 0
    prev = None
    for it in range(cfg.max_iters):
        refresh = frozen is None or it % cfg.mask_refresh == 0
        if refresh:
            frozen = obj.freeze(z, alpha)
        loss, gz, ga = obj.evaluate(z, alpha, frozen)
        trace.append(loss)
        if not np.isfinite(loss.total) or loss.total > cfg.divergence_factor * max(trace[0].total, 1e-12):
            raise DivergenceError(f"loss diverged at iteration {it}: {loss.total}", trace)
        if prev is not None and not refresh:
            if abs(loss.total - prev) / max(prev, 1e-12) < cfg.rel_tol:
                reason = "converged"
                break
        prev = loss.total
        if cfg.optimize_alpha:
            params, grad = np.concatenate([z.ravel(), alpha]), np.concatenate([gz.ravel(), ga])
        else:
            params, grad = z.ravel(), gz.ravel()
        state, params = adamax_step(state, params, grad)
        z = params[: M * K].reshape(M, K)
        if cfg.optimize_alpha:
            alpha = np.maximum(params[M * K:], 1e-6)
    else:
        it = cfg.max_iters
    if cfg.max_iters > 0 and reason == "max_iters":
        frozen = obj.freeze(z, alpha)
        trace.append(obj.evaluate(z, alpha, frozen, grad=False))
    log.info("refinement stopped after %d iterations (%s)", it, reason)
    return RefineResult(z, alpha, trace, it, reason, frozen)
