"""Sampling-based trajectory optimizer with adaptive per-timestep compute.

The planning step at each timestep (the unified update loop):

1. roll the model-free prior for a full-horizon candidate, compare it against
   the previous plan advanced by one step (both re-rolled through the current
   model, so no stale rewards survive a world change), and keep the better;
2. pick the optimization horizon H_t from the ensemble's uncertainty: full
   horizon when the member spread at the current state exceeds sigma_thres,
   otherwise the longest H whose consistency error exceeds eps_thres;
3. refine the first H_t actions with softmax-weighted noisy rollouts
   (weights proportional to exp(return / lambda)), stopping early when the
   relative improvement falls below a threshold, with continue-probability
   eps_plan;
4. reattach the untouched tail so a full-length plan is always available for
   the next step's shift and consistency evaluation.

Reproducibility contract: every population member draws its noise from its
own counter-based stream keyed by (seed, timestep, iteration, member), and
weighted reductions accumulate in fixed member order, so results are
identical for any rollout worker count, including one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .trajectory import Trajectory, discounted_return

__all__ = [
    "PlannerConfig",
    "HorizonConfig",
    "PlanRng",
    "PlanRecord",
    "mppi_update",
    "select_horizon",
    "choose_horizon",
    "improvement",
    "should_terminate",
    "plan_step",
]

_DOMAIN_NOISE = 0
_DOMAIN_TERMINATION = 1
_DOMAIN_EXPLORE = 2

# matches the reference-implementation defaults: temperature, noise, 40
# trajectories per iteration, up to 8 iterations, improvement thresholds
# 0.01 (first iteration) / 0.05 (later), continue probability 0.2
@dataclass
class PlannerConfig:
    lam: float = 0.01
    noise_std: float = 0.1
    pop_size: int = 40
    max_iters: int = 8
    delta_thres_first: float = 0.01
    delta_thres_later: float = 0.05
    eps_plan: float = 0.2

    def __post_init__(self):
        if self.lam <= 0 or self.noise_std <= 0 or self.pop_size <= 0 or self.max_iters <= 0:
            raise ValueError("lam, noise_std, pop_size, max_iters must be positive")
        if not 0.0 <= self.eps_plan <= 1.0:
            raise ValueError(f"eps_plan must be in [0, 1], got {self.eps_plan}")


@dataclass
class HorizonConfig:
    h_full: int = 80
    h_min: int = 1
    sigma_thres: float = 8.0
    eps_thres: float = 25.0

    def __post_init__(self):
        if not 1 <= self.h_min <= self.h_full:
            raise ValueError(f"need 1 <= h_min <= h_full, got {self.h_min}, {self.h_full}")


class PlanRng:
    """Counter-based random streams for one planning timestep.

    Philox counters are (member, iteration, timestep, domain) under a fixed
    per-agent key, so any draw is reproducible in isolation: workers never
    share stream state.
    """

    def __init__(self, key: np.ndarray, timestep: int):
        self._key = key
        self.timestep = int(timestep)

    @staticmethod
    def derive_key(seed: int) -> np.ndarray:
        return np.random.SeedSequence([int(seed), 0x706C616E]).generate_state(2, np.uint64)

    def member_stream(self, iteration: int, member: int) -> np.random.Generator:
        counter = [member, iteration, self.timestep, _DOMAIN_NOISE]
        return np.random.Generator(np.random.Philox(counter=counter, key=self._key))

    def termination_coin(self, iteration: int) -> float:
        counter = [0, iteration, self.timestep, _DOMAIN_TERMINATION]
        g = np.random.Generator(np.random.Philox(counter=counter, key=self._key))
        return float(g.uniform())

    def explore_stream(self) -> np.random.Generator:
        counter = [0, 0, self.timestep, _DOMAIN_EXPLORE]
        return np.random.Generator(np.random.Philox(counter=counter, key=self._key))


@dataclass
class PopulationBatch:
    """Flattened transitions from one iteration's rollouts, for the policy buffer."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray


@dataclass
class PlanRecord:
    """Per-timestep planning telemetry streamed to the harness."""

    t: int
    horizon: int
    iterations: int
    rolled_timesteps: int
    sigma: float | None
    eps: float | None  # mean of the consistency-error curve over [h_min, h_full]
    deltas: list[float] = field(default_factory=list)
    source: str = "shifted"  # which candidate won the argmax: prior | shifted
    score: float = 0.0
    denominator_clamped: bool = False


def _terminal_values(ens, end_states: np.ndarray):
    if ens is None:
        return np.zeros(end_states.shape[0])
    return np.atleast_1d(ens.aggregate(end_states))


def _score_rollout(rewards: np.ndarray, gamma: float, terminal: float) -> float:
    return discounted_return(rewards, gamma, terminal)


def mppi_update(base: Trajectory, model, ens, cfg: PlannerConfig, horizon: int, rng: PlanRng,
                iteration: int, gamma: float):
    """One softmax-weighted update of the first `horizon` actions of `base`.

    Samples pop_size action sequences around the base (member 0 keeps the
    base unperturbed when pop_size > 1), rolls each through the model from
    its snapshot state, scores them with the discounted return plus the
    aggregated terminal value, and returns the weight-averaged trajectory
    re-rolled through the model, plus the population transitions.
    """
    act_dim = base.actions.shape[1] if base.actions.ndim == 2 else model.action_dim
    base_actions = np.zeros((horizon, act_dim))
    take = min(horizon, len(base))
    base_actions[:take] = base.actions[:take]

    pop = np.empty((cfg.pop_size, horizon, act_dim))
    first_noisy = 0
    if cfg.pop_size > 1:
        pop[0] = base_actions  # elite retention
        first_noisy = 1
    for k in range(first_noisy, cfg.pop_size):
        g = rng.member_stream(iteration, k)
        noise = g.standard_normal((horizon, act_dim)) * cfg.noise_std
        pop[k] = np.clip(base_actions + noise, -1.0, 1.0)

    obs, rew = model.rollout_population(pop)
    terminals = _terminal_values(ens, obs[:, -1, :])
    scores = np.empty(cfg.pop_size)
    for k in range(cfg.pop_size):
        scores[k] = _score_rollout(rew[k], gamma, float(terminals[k]))

    z = (scores - scores.max()) / cfg.lam
    e = np.exp(z)
    weights = e / np.sum(e)

    new_actions = np.zeros((horizon, act_dim))
    for k in range(cfg.pop_size):  # fixed member order
        new_actions += weights[k] * pop[k]

    new_obs, new_rew, _ = model.rollout(new_actions)
    terminal = float(_terminal_values(ens, new_obs[-1][None, :])[0])
    new_traj = Trajectory(new_obs, new_actions, new_rew,
                          _score_rollout(new_rew, gamma, terminal))

    batch = PopulationBatch(
        states=obs[:, :-1, :].reshape(-1, obs.shape[2]),
        actions=pop.reshape(-1, act_dim),
        rewards=rew.reshape(-1),
        next_states=obs[:, 1:, :].reshape(-1, obs.shape[2]),
    )
    return new_traj, batch, weights


def choose_horizon(sigma: float, eps_curve: np.ndarray, hcfg: HorizonConfig) -> int:
    """The horizon rule on precomputed signals.

    Full horizon when the member spread is at or above sigma_thres; otherwise
    the longest H in [h_min, h_full] whose consistency error exceeds
    eps_thres, falling back to h_min when none does. eps_curve[i] is the
    error at horizon h_min + i.
    """
    if sigma >= hcfg.sigma_thres:
        return hcfg.h_full
    above = np.nonzero(eps_curve > hcfg.eps_thres)[0]
    if above.size == 0:
        return hcfg.h_min
    return int(hcfg.h_min + above[-1])


def select_horizon(ens, prior_traj: Trajectory, hcfg: HorizonConfig) -> int:
    """Pick this timestep's planning horizon from a full-length trajectory."""
    if len(prior_traj) < hcfg.h_full:
        raise ValueError(f"trajectory length {len(prior_traj)} < h_full {hcfg.h_full}")
    sigma = ens.ensemble_std(prior_traj.states[0])
    eps_curve = ens.bellman_curve(prior_traj.states, prior_traj.rewards, hcfg.h_min, hcfg.h_full)
    return choose_horizon(sigma, eps_curve, hcfg)


def improvement(prev: Trajectory, next_: Trajectory) -> float:
    """Relative improvement (R(next) - R(prev)) / |R(prev)|."""
    delta, _ = improvement_with_flag(prev.return_estimate, next_.return_estimate)
    return delta


def improvement_with_flag(prev_score: float, next_score: float, floor: float = 1e-8):
    """As `improvement`, with the denominator floored at 1e-8 for near-zero
    previous scores; the flag reports that the floor was applied."""
    denom = abs(prev_score)
    clamped = denom < floor
    return (next_score - prev_score) / max(denom, floor), clamped


def should_terminate(delta: float, iter_index: int, cfg: PlannerConfig, coin: float) -> bool:
    """Stop planning when improvement stalls, with probability 1 - eps_plan.

    `iter_index` is 1-based; the first iteration uses the tighter threshold.
    `coin` is a uniform [0, 1) draw supplied by the caller.
    """
    if iter_index < 1:
        raise ValueError(f"iter_index must be >= 1, got {iter_index}")
    thres = cfg.delta_thres_first if iter_index == 1 else cfg.delta_thres_later
    if delta < thres:
        return coin < 1.0 - cfg.eps_plan
    return False


def _roll_and_score(model, actions: np.ndarray, ens, gamma: float) -> Trajectory:
    obs, rew, _ = model.rollout(actions)
    terminal = float(_terminal_values(ens, obs[-1][None, :])[0])
    return Trajectory(obs, np.asarray(actions, dtype=np.float64), rew,
                      _score_rollout(rew, gamma, terminal))


def _truncated(traj: Trajectory, h: int, ens, gamma: float) -> Trajectory:
    """First h steps of a trajectory, re-scored at the h-step objective
    (no model call: states are already known)."""
    terminal = float(_terminal_values(ens, traj.states[h][None, :])[0])
    return Trajectory(traj.states[: h + 1], traj.actions[:h], traj.rewards[:h],
                      _score_rollout(traj.rewards[:h], gamma, terminal))


def plan_step(prev_plan_actions: np.ndarray, prior, model, ens, cfg: PlannerConfig,
              hcfg: HorizonConfig, gamma: float, rng: PlanRng):
    """Full planning step from the model's snapshot state.

    `prev_plan_actions` is the previous final plan already advanced by one
    action (zero appended); it is re-rolled here through the current model.
    Returns (action, PlanRecord, final full-length Trajectory, population
    batches for the policy buffer).
    """
    h_full = hcfg.h_full
    shifted = _roll_and_score(model, prev_plan_actions, ens, gamma)

    plan, source = shifted, "shifted"
    if prior is not None:
        p_obs, p_acts, p_rew = model.rollout_policy(lambda k, o: prior.action(o), h_full)
        terminal = float(_terminal_values(ens, p_obs[-1][None, :])[0])
        prior_traj = Trajectory(p_obs, p_acts, p_rew, _score_rollout(p_rew, gamma, terminal))
        if prior_traj.return_estimate > shifted.return_estimate:  # ties keep the shifted plan
            plan, source = prior_traj, "prior"

    if ens is not None:
        sigma = ens.ensemble_std(plan.states[0])
        eps_curve = ens.bellman_curve(plan.states, plan.rewards, hcfg.h_min, h_full)
        h_t = choose_horizon(sigma, eps_curve, hcfg)
        eps_mean = float(eps_curve.mean())
    else:
        sigma, eps_mean = None, None
        h_t = h_full

    tail_actions = plan.actions[h_t:]
    current = _truncated(plan, h_t, ens, gamma)

    record = PlanRecord(t=rng.timestep, horizon=h_t, iterations=0, rolled_timesteps=0,
                        sigma=sigma, eps=eps_mean, source=source)
    batches = []
    for k in range(1, cfg.max_iters + 1):
        new_traj, batch, _ = mppi_update(current, model, ens, cfg, h_t, rng, k, gamma)
        batches.append(batch)
        record.iterations += 1
        record.rolled_timesteps += cfg.pop_size * h_t
        delta, dflag = improvement_with_flag(current.return_estimate, new_traj.return_estimate)
        record.deltas.append(float(delta))
        record.denominator_clamped |= dflag
        current = new_traj
        if should_terminate(delta, k, cfg, rng.termination_coin(k)):
            break

    final_actions = np.concatenate([current.actions, tail_actions], axis=0)
    final = _roll_and_score(model, final_actions, ens, gamma)
    record.score = final.return_estimate
    return final.actions[0].copy(), record, final, batches
