"""Model-free DK-iteration for state-feedback mu-synthesis.

The controller step solves a sequence of D-scaled zero-sum LQ games with
double-loop RARL (least-squares policy iteration on simulator data); the
scaling step is a finite-difference descent on ``log D``.  H-infinity norms
are estimated from rollouts by power iteration with time-reversed adjoints.
"""

from .exceptions import (
    DimensionError,
    DivergedError,
    GammaInfeasibleError,
    GradientEvaluationError,
    InsufficientExcitationError,
    SynthesisAborted,
    UnstableLoopError,
)
from .lti import (
    DScaling,
    PartitionedPlant,
    StateSpace,
    apply_d_scaling,
    close_loop,
    load_plant,
    plant_from_dict,
    save_plant,
    scaled_loop,
    zoh_discretize,
)
from .sim import LinearSimulator, ScaledLoop, SystemSimulator, Trajectory, rollout, rollout_with_policies
from .hinf import PowerIterConfig, hinf_exact, hinf_oracle, toeplitz_sigma
from .game import GameCost, RarlConfig, build_game_cost, rarl_solve, riccati_game_oracle
from .dk import DminConfig, KminConfig, SynthesisTrace, approx_dmin, approx_kmin, dk_iterate
from .benchmark import build_spring_mass, initial_controller

__version__ = "0.1.0"
