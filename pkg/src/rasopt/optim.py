"""Riemannian SGD and the row/column adaptive family built on it.

All step functions are pure: they take the current iterate and optimizer
state and return new ones.  ``G`` is always the (stochastic) Riemannian
gradient at ``U``.  Vectorisation is column-major, so entry ``(i, j)`` of an
``n x r`` matrix sits at position ``j * n + i`` of its vector form.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError

__all__ = [
    "Mode",
    "StepSchedule",
    "RasaConfig",
    "AdaptiveState",
    "VecAdaptiveState",
    "VarBetaState",
    "step_size",
    "rsgd_step",
    "rasa_update_weights",
    "adapt_gradient",
    "rasa_direction",
    "rasa_step",
    "rasa_vec_step",
    "varbeta_step",
    "enforce_weight_bound",
    "kron_weights",
    "vec",
    "unvec",
    "Optimizer",
    "make_optimizer",
    "OPTIMIZERS",
]


def vec(G):
    return np.asarray(G).reshape(-1, order="F")


def unvec(g, n, r):
    return np.asarray(g).reshape((n, r), order="F")


class Mode(str, enum.Enum):
    LEFT = "left"
    RIGHT = "right"
    BOTH = "both"
    VEC = "vec"


@dataclass(frozen=True)
class StepSchedule:
    """Decaying step size ``alpha0 / sqrt(t)``."""

    alpha0: float

    def __post_init__(self):
        if not (self.alpha0 > 0 and math.isfinite(self.alpha0)):
            raise ConfigError(f"alpha0 must be positive, got {self.alpha0}")

    def __call__(self, t: int) -> float:
        return step_size(self, t)


def step_size(schedule: StepSchedule, t: int) -> float:
    if t < 1:
        raise ValueError(f"iteration counter starts at 1, got {t}")
    return schedule.alpha0 / math.sqrt(t)


@dataclass(frozen=True)
class RasaConfig:
    """Hyper-parameters of the adaptive steps.

    ``p`` and ``q`` are the row and column exponents of the adapted gradient
    and must satisfy ``1/p + 1/q = 1/2``.  ``unit_weights`` replaces the
    adaptive weights by exact ones (a diagnostic that turns the method into
    plain RSGD).
    """

    mode: Mode = Mode.BOTH
    beta: float = 0.99
    epsilon: float = 1e-8
    p: float = 4.0
    q: float = 4.0
    unit_weights: bool = False

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if not 0.0 <= self.beta < 1.0:
            raise ConfigError(f"beta must lie in [0, 1), got {self.beta}")
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        if not (self.p > 0 and self.q > 0) or abs(1 / self.p + 1 / self.q - 0.5) > 1e-12:
            raise ConfigError(f"need p, q > 0 with 1/p + 1/q = 1/2, got p={self.p}, q={self.q}")


@dataclass(frozen=True)
class AdaptiveState:
    t: int
    l: np.ndarray
    l_hat: np.ndarray
    r: np.ndarray
    r_hat: np.ndarray

    @classmethod
    def zeros(cls, n, r):
        return cls(0, np.zeros(n), np.zeros(n), np.zeros(r), np.zeros(r))


@dataclass(frozen=True)
class VecAdaptiveState:
    t: int
    v: np.ndarray
    v_hat: np.ndarray

    @classmethod
    def zeros(cls, n, r):
        return cls(0, np.zeros(n * r), np.zeros(n * r))


@dataclass(frozen=True)
class VarBetaState:
    t: int
    l: np.ndarray
    r: np.ndarray
    v: np.ndarray
    v_hat: np.ndarray
    # last enforced row/column statistics, kept for inspection
    p_hat: np.ndarray = field(default=None, repr=False)
    q_hat: np.ndarray = field(default=None, repr=False)

    @classmethod
    def zeros(cls, n, r):
        return cls(0, np.zeros(n), np.zeros(r), np.zeros(n * r), np.zeros(n * r))


def kron_weights(l_hat, r_hat):
    """Vectorised weights ``sqrt(r_hat) (x) sqrt(l_hat)`` of length ``n * r``."""
    return np.kron(np.sqrt(r_hat), np.sqrt(l_hat))


def rsgd_step(manifold, U, G, alpha):
    """One Riemannian SGD step ``R_U(-alpha * G)``.

    ``G`` is re-projected onto the tangent space first, which is the identity
    for an exact Riemannian gradient and keeps the path identical to the
    adaptive steps.
    """
    if not alpha > 0:
        raise ValueError(f"step size must be positive, got {alpha}")
    return manifold.retr(U, -alpha * manifold.proj(U, G))


def rasa_update_weights(state: AdaptiveState, G, beta) -> AdaptiveState:
    n, r = G.shape
    G2 = G * G
    l = beta * state.l + (1 - beta) * G2.sum(axis=1) / r
    rr = beta * state.r + (1 - beta) * G2.sum(axis=0) / n
    return AdaptiveState(
        state.t + 1,
        l,
        np.maximum(state.l_hat, l),
        rr,
        np.maximum(state.r_hat, rr),
    )


def adapt_gradient(G, l_hat, r_hat, cfg: RasaConfig):
    """Scale row ``i`` by ``(l_hat_i + eps)^(-1/p)`` and column ``j`` by ``(r_hat_j + eps)^(-1/q)``."""
    n, r = G.shape
    if np.shape(l_hat) != (n,) or np.shape(r_hat) != (r,):
        raise ValueError("weight lengths do not match the gradient shape")
    if cfg.unit_weights:
        row = np.ones(n)
        col = np.ones(r)
    else:
        row = (l_hat + cfg.epsilon) ** (1.0 / cfg.p) if cfg.mode != Mode.RIGHT else np.ones(n)
        col = (r_hat + cfg.epsilon) ** (1.0 / cfg.q) if cfg.mode != Mode.LEFT else np.ones(r)
    return G / (row[:, None] * col[None, :])


def rasa_direction(manifold, U, G, state: AdaptiveState, cfg: RasaConfig):
    """Update the weights with ``G`` and return the projected adapted direction.

    Returns:
        ``(xi, new_state)`` where the next iterate is ``R_U(-alpha_t * xi)``.
    """
    state = rasa_update_weights(state, G, cfg.beta)
    G_tilde = adapt_gradient(G, state.l_hat, state.r_hat, cfg)
    return manifold.proj(U, G_tilde), state


def rasa_step(manifold, U, G, state: AdaptiveState, cfg: RasaConfig, schedule: StepSchedule):
    xi, state = rasa_direction(manifold, U, G, state, cfg)
    return manifold.retr(U, -schedule(state.t) * xi), state


def rasa_vec_step(manifold, U, G, state: VecAdaptiveState, cfg: RasaConfig, schedule: StepSchedule):
    """Full ``n * r`` elementwise adaptation (AMSGrad-style max on the squares)."""
    n, r = G.shape
    g = vec(G)
    v = cfg.beta * state.v + (1 - cfg.beta) * g * g
    v_hat = np.maximum(state.v_hat, v)
    state = VecAdaptiveState(state.t + 1, v, v_hat)
    G_tilde = unvec(g / np.sqrt(v_hat + cfg.epsilon), n, r)
    xi = manifold.proj(U, G_tilde)
    return manifold.retr(U, -schedule(state.t) * xi), state


def enforce_weight_bound(p, q, G):
    """Raise row/column statistics until ``sqrt(p_i * q_j) >= G_ij**2`` for all entries.

    Rows are fixed first: each row statistic with at least one violated entry
    is raised to the largest violating ``G_ij**2``.  Columns that still have
    violations are then raised to the largest remaining ``G_ij**2``.
    """
    p = np.ascontiguousarray(p, dtype=float)
    q = np.ascontiguousarray(q, dtype=float)
    G = np.ascontiguousarray(G, dtype=float)
    if p.shape != (G.shape[0],) or q.shape != (G.shape[1],):
        raise ValueError("statistic lengths do not match the gradient shape")
    return kernels.enforce_bound(p, q, G)


def varbeta_step(manifold, U, G, state: VarBetaState, schedule: StepSchedule, epsilon=1e-8):
    """Running-average weights (``beta = 1 - 1/t``) with the max taken on the Kronecker weights.

    Materialises the length ``n * r`` weight vector.
    """
    n, r = G.shape
    t = state.t + 1
    beta = 1.0 - 1.0 / t
    G2 = G * G
    p_hat, q_hat = enforce_weight_bound(G2.sum(axis=1) / r, G2.sum(axis=0) / n, G)
    l = beta * state.l + (1 - beta) * p_hat
    rr = beta * state.r + (1 - beta) * q_hat
    v = kron_weights(l, rr)
    v_hat = np.maximum(state.v_hat, v)
    state = VarBetaState(t, l, rr, v, v_hat, p_hat, q_hat)
    G_tilde = unvec(vec(G) / np.sqrt(v_hat + epsilon), n, r)
    xi = manifold.proj(U, G_tilde)
    return manifold.retr(U, -schedule(t) * xi), state


class Optimizer:
    """Uniform driver interface over the step functions.

    ``step`` returns ``(U_next, state)``; ``weights`` exposes the
    monotone weight vectors of a state for auditing.
    """

    def __init__(self, name, schedule, cfg=None):
        self.name = name
        self.schedule = schedule
        self.cfg = cfg

    def __repr__(self):
        return f"Optimizer({self.name!r}, alpha0={self.schedule.alpha0})"

    def init_state(self, n, r):
        if self.name == "rsgd":
            return 0
        if self.name == "rasa-vec":
            return VecAdaptiveState.zeros(n, r)
        if self.name == "rasa-varbeta":
            return VarBetaState.zeros(n, r)
        return AdaptiveState.zeros(n, r)

    def step(self, manifold, U, G, state):
        if self.name == "rsgd":
            t = state + 1
            return rsgd_step(manifold, U, G, self.schedule(t)), t
        if self.name == "rasa-vec":
            return rasa_vec_step(manifold, U, G, state, self.cfg, self.schedule)
        if self.name == "rasa-varbeta":
            return varbeta_step(manifold, U, G, state, self.schedule, self.cfg.epsilon)
        return rasa_step(manifold, U, G, state, self.cfg, self.schedule)

    def weights(self, state):
        if self.name == "rsgd":
            return {}
        if isinstance(state, AdaptiveState):
            return {
                "l_hat": state.l_hat,
                "r_hat": state.r_hat,
                "v_hat": kron_weights(state.l_hat, state.r_hat),
            }
        return {"v_hat": state.v_hat}


OPTIMIZERS = ("rsgd", "rasa-l", "rasa-r", "rasa-lr", "rasa-vec", "rasa-varbeta")
_MODES = {"rasa-l": Mode.LEFT, "rasa-r": Mode.RIGHT, "rasa-lr": Mode.BOTH, "rasa-vec": Mode.VEC}


def make_optimizer(name, alpha0, beta=0.99, epsilon=1e-8, p=4.0, q=4.0, unit_weights=False):
    if name not in OPTIMIZERS:
        raise ConfigError(f"unknown optimizer {name!r}; choose from {', '.join(OPTIMIZERS)}")
    schedule = StepSchedule(alpha0)
    cfg = None
    if name != "rsgd":
        cfg = RasaConfig(
            mode=_MODES.get(name, Mode.BOTH),
            beta=beta,
            epsilon=epsilon,
            p=p,
            q=q,
            unit_weights=unit_weights,
        )
    return Optimizer(name, schedule, cfg)

