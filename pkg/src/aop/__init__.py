"""Adaptive online planning: a reset-free control agent that interpolates
between sampling-based planning and model-free policy control, spending
planning compute only when its value ensemble is uncertain; plus exact
environments, baselines, and a regret laboratory."""

from .agent import (
    AgentConfig,
    LifetimeError,
    LifetimeLog,
    average_lifetime_reward,
    planning_fraction,
    run_lifetime,
)
from .ensemble import ValueBuffer, ValueEnsemble
from .envs import (
    MazeLifelongEnv,
    SinkChainLifelongEnv,
    WorldSchedule,
    model_rollout,
    schedule_worlds,
)
from .nn import AdamState, DimensionError, Mlp, adam_step
from .planner import (
    HorizonConfig,
    PlannerConfig,
    PlanRng,
    improvement,
    mppi_update,
    plan_step,
    select_horizon,
    should_terminate,
)
from .priors import BcPrior, PolicyBuffer, Td3Prior, prior_rollout
from .regret import (
    RegretReport,
    TabularMdp,
    h_horizon_plan,
    lemma_sweep,
    make_delayed_reward_chain,
    ranking_matrix,
    regret_report,
    value_iteration,
)
from .trajectory import Trajectory, discounted_return

__version__ = "0.1.0"
