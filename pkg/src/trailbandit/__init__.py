"""Linear-bandit simulation with tangential forced exploration (TRAiL) and baselines."""
from .geometry import (ActionSet, Ellipsoid, GeometryError, LpBall, ProjectionError,
                       SingularHessianError, Sphere, nabla_a_star, project, reward_max_action,
                       tangent_basis)
from .constants import GeometryConstants, ParameterSpace, derive_constants, estimate_constants
from .estimation import RlsState, confidence_radius, f_delta, lambda_min, rls_init, rls_update
from .policies import PerturbationSpec, PolicyConfig, policy_step
from .environment import (BanditEnvironment, MetricTrace, PriorSpec, observe, per_step_regret,
                          run_episode, sample_theta_star)

__version__ = "0.1.0"
