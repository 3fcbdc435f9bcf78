"""The reset-free lifetime loop and its config-derived baselines.

One unified per-timestep loop drives every mode:

* aop-bc / aop-td3: value ensemble + prior, adaptive horizon, early stopping;
* polo: value ensemble, no prior, full horizon, exactly 3 iterations;
* mpc-8 / mpc-3: no ensemble (zero terminal value), no prior, full horizon,
  exactly 8 or 3 iterations — the planning-only special case;
* td3-only: no planner at all; one exploration-noised policy rollout of
  length 256 through the model per step, executing its first action.

The agent is never told about world changes: the model snapshot silently
reflects them, and the world index recorded in the log is bookkeeping for
analysis only — no decision reads it.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from .ensemble import ValueBuffer, ValueEnsemble
from .planner import HorizonConfig, PlannerConfig, PlanRng, plan_step
from .priors import SOURCE_FINAL, SOURCE_POPULATION, BcPrior, PolicyBuffer, Td3Prior

__all__ = [
    "MODES",
    "AgentConfig",
    "StepLog",
    "LifetimeLog",
    "LifetimeError",
    "run_lifetime",
    "planning_fraction",
    "average_lifetime_reward",
]

MODES = ("aop-bc", "aop-td3", "polo", "mpc-8", "mpc-3", "td3-only")


@dataclass
class AgentConfig:
    """Everything a lifetime run depends on besides the environment itself."""

    mode: str = "aop-bc"
    gamma: float = 0.99
    seed: int = 0
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    horizon: HorizonConfig = field(default_factory=HorizonConfig)
    update_every: int = 4
    hidden: tuple = (64, 64)
    learning_rate: float = 1e-3
    value_members: int = 6
    kappa: float = 1e-2
    value_train_steps: int = 32
    value_batch: int = 32
    value_bootstrap_span: int = 32
    bc_train_steps: int = 400
    bc_batch: int = 64
    td3_train_steps: int = 128
    td3_batch: int = 100
    td3_only_train_steps: int = 256
    td3_only_horizon: int = 256
    td3_only_noise: float = 0.2
    buffer_capacity: int = 100_000

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma}")

    def resolve(self) -> "AgentConfig":
        """Apply the mode's forced settings (a copy; the original is untouched).

        The baselines are pure config reductions of the same loop: forced
        iteration counts come from eps_plan=1 (terminate with probability 0)
        and forced full horizon from sigma_thres=0 (the spread is always >= 0).
        """
        cfg = dataclasses.replace(self, planner=dataclasses.replace(self.planner),
                                  horizon=dataclasses.replace(self.horizon))
        if cfg.mode in ("mpc-8", "mpc-3"):
            cfg.planner.max_iters = 8 if cfg.mode == "mpc-8" else 3
            cfg.planner.eps_plan = 1.0
            cfg.horizon.sigma_thres = 0.0
        elif cfg.mode == "polo":
            cfg.planner.max_iters = 3
            cfg.planner.eps_plan = 1.0
            cfg.horizon.sigma_thres = 0.0
        return cfg

    @property
    def uses_ensemble(self) -> bool:
        return self.mode in ("aop-bc", "aop-td3", "polo")

    @property
    def prior_kind(self) -> str | None:
        return {"aop-bc": "bc", "aop-td3": "td3"}.get(self.mode)

    @property
    def mpc8_budget(self) -> int:
        """Model timesteps an 8-iteration full-horizon planner rolls per step:
        the denominator of every planning fraction."""
        return 8 * self.planner.pop_size * self.horizon.h_full


@dataclass
class StepLog:
    """One per-timestep record; append-only, one per env step."""

    t: int
    reward: float
    rolled: int
    horizon: int
    iterations: int
    sigma: float | None
    eps: float | None
    world_index: int
    source: str
    contact: bool
    clamped: bool
    obs: list
    action: list
    deltas: list = field(default_factory=list)  # per-iteration plan improvement

    def to_doc(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class LifetimeLog:
    meta: dict = field(default_factory=dict)
    records: list[StepLog] = field(default_factory=list)

    def append(self, rec: StepLog) -> None:
        self.records.append(rec)

    def __len__(self) -> int:
        return len(self.records)

    def rewards(self) -> np.ndarray:
        return np.array([r.reward for r in self.records])

    def rolled(self) -> np.ndarray:
        return np.array([r.rolled for r in self.records], dtype=np.int64)

    def horizons(self) -> np.ndarray:
        return np.array([r.horizon for r in self.records], dtype=np.int64)

    def sigmas(self) -> np.ndarray:
        return np.array([np.nan if r.sigma is None else r.sigma for r in self.records])

    def epss(self) -> np.ndarray:
        return np.array([np.nan if r.eps is None else r.eps for r in self.records])

    def world_indices(self) -> np.ndarray:
        return np.array([r.world_index for r in self.records], dtype=np.int64)

    def save_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(json.dumps({"meta": self.meta}) + "\n")
            for r in self.records:
                fh.write(json.dumps(r.to_doc()) + "\n")

    @classmethod
    def load_jsonl(cls, path) -> "LifetimeLog":
        log = cls()
        with open(path) as fh:
            first = json.loads(fh.readline())
            log.meta = first.get("meta", {})
            for line in fh:
                doc = json.loads(line)
                log.append(StepLog(**doc))
        return log


class LifetimeError(RuntimeError):
    """A component failed mid-lifetime; the partial log is preserved."""

    def __init__(self, step: int, log: LifetimeLog, cause: BaseException):
        super().__init__(f"lifetime aborted at step {step}: {cause!r}")
        self.step = step
        self.log = log
        self.cause = cause


def planning_fraction(log: LifetimeLog) -> float:
    """Planner-rolled model timesteps as a fraction of the 8-iteration
    full-horizon budget over the same lifetime."""
    if len(log) == 0:
        raise ValueError("empty lifetime log")
    denom = log.meta["mpc8_budget"] * len(log)
    return float(log.rolled().sum() / denom)


def average_lifetime_reward(log: LifetimeLog) -> float:
    if len(log) == 0:
        raise ValueError("empty lifetime log")
    return float(log.rewards().mean())


def _make_prior(cfg: AgentConfig, obs_dim: int, act_dim: int, rng: np.random.Generator):
    if cfg.prior_kind == "bc":
        return BcPrior(obs_dim, act_dim, cfg.hidden, cfg.learning_rate, rng=rng)
    if cfg.prior_kind == "td3" or cfg.mode == "td3-only":
        return Td3Prior(obs_dim, act_dim, cfg.hidden, cfg.learning_rate, gamma=cfg.gamma, rng=rng)
    return None


def run_lifetime(env, cfg: AgentConfig, total_steps: int, probe=None,
                 checkpoint_dir=None) -> LifetimeLog:
    """Execute exactly `total_steps` env steps with no resets.

    Model-free updates run at the end of every `update_every`-th step. A
    `probe` callable, if given, is invoked after every step as
    probe(t, prior, model) for planner-free prior evaluations. With a
    `checkpoint_dir`, the final ensemble members and prior networks are
    serialized there (flat-array JSON). Component errors raise LifetimeError
    carrying the partial log.
    """
    if total_steps <= 0:
        raise ValueError(f"total_steps must be positive, got {total_steps}")
    cfg = cfg.resolve()
    obs_dim, act_dim = env.obs_dim, env.action_dim

    ss = np.random.SeedSequence(cfg.seed)
    ens_ss, prior_ss, bc_rng_ss, td3_rng_ss = ss.spawn(4)
    ens = None
    if cfg.uses_ensemble:
        ens = ValueEnsemble(
            obs_dim, cfg.value_members, cfg.kappa, cfg.gamma, cfg.hidden,
            cfg.learning_rate, cfg.value_bootstrap_span, np.random.default_rng(ens_ss),
        )
    prior = _make_prior(cfg, obs_dim, act_dim, np.random.default_rng(prior_ss))
    prior_train_rng = np.random.default_rng(
        bc_rng_ss if cfg.prior_kind == "bc" else td3_rng_ss
    )

    vbuf = ValueBuffer(cfg.buffer_capacity, obs_dim, act_dim)
    pbuf = PolicyBuffer(cfg.buffer_capacity, obs_dim, act_dim)
    key = PlanRng.derive_key(cfg.seed)

    log = LifetimeLog(meta={
        "mode": cfg.mode,
        "seed": cfg.seed,
        "gamma": cfg.gamma,
        "mpc8_budget": cfg.mpc8_budget,
        "total_steps": total_steps,
    })

    h_full = cfg.horizon.h_full
    plan_actions = np.zeros((h_full, act_dim))
    t = 0
    try:
        for t in range(total_steps):
            model = env.model()
            rng = PlanRng(key, t)
            if cfg.mode == "td3-only":
                action, rec_fields = _td3_only_step(cfg, prior, model, rng, pbuf)
            else:
                action, rec, final, batches = plan_step(
                    plan_actions, prior, model, ens, cfg.planner, cfg.horizon, cfg.gamma, rng
                )
                for b in batches:
                    pbuf.add_batch(b.states, b.actions, b.rewards, b.next_states, SOURCE_POPULATION)
                pbuf.add_batch(final.states[:-1], final.actions, final.rewards,
                               final.states[1:], SOURCE_FINAL)
                plan_actions = np.concatenate([final.actions[1:], np.zeros((1, act_dim))])
                rec_fields = dict(rolled=rec.rolled_timesteps, horizon=rec.horizon,
                                  iterations=rec.iterations, sigma=rec.sigma, eps=rec.eps,
                                  source=rec.source, deltas=rec.deltas)

            obs_before = env.observe()
            result = env.step(action)
            vbuf.add(obs_before, action, result.obs, result.reward)
            log.append(StepLog(
                t=t, reward=result.reward, world_index=result.world_index,
                contact=result.contact, clamped=result.clamped,
                obs=[float(x) for x in obs_before], action=[float(a) for a in action],
                **rec_fields,
            ))

            if (t + 1) % cfg.update_every == 0:
                if ens is not None and len(vbuf) > 0:
                    ens.train(vbuf, cfg.value_train_steps, cfg.value_batch)
                if cfg.prior_kind == "bc" and len(pbuf) > 0:
                    prior.update(pbuf, cfg.bc_train_steps, cfg.bc_batch, prior_train_rng)
                elif cfg.prior_kind == "td3" and len(pbuf) >= cfg.td3_batch:
                    prior.update(pbuf, cfg.td3_train_steps, cfg.td3_batch, prior_train_rng)
                elif cfg.mode == "td3-only" and len(pbuf) >= cfg.td3_batch:
                    prior.update(pbuf, cfg.td3_only_train_steps, cfg.td3_batch, prior_train_rng)
            if probe is not None:
                probe(t, prior, env.model())
    except Exception as exc:  # preserve the partial log for post-mortems
        raise LifetimeError(t, log, exc) from exc
    if checkpoint_dir is not None:
        _save_checkpoints(checkpoint_dir, cfg, ens, prior)
    return log


def _save_checkpoints(checkpoint_dir, cfg: AgentConfig, ens, prior) -> None:
    from pathlib import Path

    out = Path(checkpoint_dir)
    out.mkdir(parents=True, exist_ok=True)
    prefix = f"{cfg.mode}-seed{cfg.seed}"
    if ens is not None:
        ens.save(str(out / f"{prefix}.value"))
    if isinstance(prior, BcPrior):
        prior.net.save(out / f"{prefix}.policy.json")
    elif isinstance(prior, Td3Prior):
        prior.save(str(out / f"{prefix}.policy"))


def _td3_only_step(cfg: AgentConfig, prior: Td3Prior, model, rng: PlanRng, pbuf: PolicyBuffer):
    """One policy-optimization step: a single exploration-noised rollout,
    executing its first action (no planning iterations)."""
    h = cfg.td3_only_horizon
    noise = rng.explore_stream().standard_normal((h, model.action_dim)) * cfg.td3_only_noise
    obs, acts, rew = model.rollout_policy(
        lambda k, o: np.clip(prior.action(o) + noise[k], -1.0, 1.0), h
    )
    pbuf.add_batch(obs[:-1], acts, rew, obs[1:], SOURCE_POPULATION)
    fields = dict(rolled=h, horizon=0, iterations=0, sigma=None, eps=None, source="prior")
    return acts[0].copy(), fields
