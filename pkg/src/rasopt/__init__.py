"""Riemannian adaptive stochastic gradient methods on Stiefel and Grassmann manifolds."""

from ._accel import USE_NUMBA
from .manifolds import Grassmann, Stiefel, make_manifold, qf
from .optim import (
    AdaptiveState,
    Mode,
    RasaConfig,
    StepSchedule,
    VarBetaState,
    VecAdaptiveState,
    adapt_gradient,
    enforce_weight_bound,
    make_optimizer,
    rasa_step,
    rasa_update_weights,
    rasa_vec_step,
    rsgd_step,
    step_size,
    varbeta_step,
)
from .problems import IcaProblem, McProblem, PcaProblem, fd_directional_check

__version__ = "0.1.0"
