"""Experiment runner: specs, seeded runs, sweeps, probes, and report CSVs.

A run is a pure function of its spec: the spec serializes to JSON, is echoed
next to its outputs, and re-running the echoed spec reproduces the logs bit
for bit. Every summary number is recomputed from the raw JSONL logs rather
than carried through memory, so nothing in a summary depends on hidden state.

Parallelism: independent seeds and grid cells run as separate processes;
worker count comes from the AOP_WORKERS environment variable (default 1).
"""

from __future__ import annotations

import csv
import dataclasses
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .agent import (
    MODES,
    AgentConfig,
    LifetimeLog,
    average_lifetime_reward,
    planning_fraction,
    run_lifetime,
)
from .envs import MazeLifelongEnv, SinkChainLifelongEnv, schedule_worlds
from .priors import prior_rollout

__all__ = [
    "ExperimentSpec",
    "RunSummary",
    "SpecError",
    "build_env",
    "build_agent_config",
    "run",
    "summarize_logs",
    "sweep_thresholds",
    "degradation_probe",
    "report",
    "worker_count",
]


class SpecError(ValueError):
    """Spec validation failure; the message names the offending field."""


@dataclass
class ExperimentSpec:
    """Everything that defines a run. All fields JSON-serializable."""

    name: str = "run"
    env_kind: str = "maze"  # maze | sink-chain
    reward_mode: str = "dense"  # dense | sparse (maze only)
    schedule_kind: str = "cw"  # ns | cw
    schedule_seed: int = 0
    period: int = 1000
    n_periods: int = 10
    mode: str = "aop-bc"
    lifetime: int = 10_000
    seeds: tuple = (0, 1, 2, 3, 4)
    out_dir: str = "runs"
    save_checkpoints: bool = False
    overrides: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.env_kind not in ("maze", "sink-chain"):
            raise SpecError(f"env_kind: expected maze|sink-chain, got {self.env_kind!r}")
        if self.reward_mode not in ("dense", "sparse"):
            raise SpecError(f"reward_mode: expected dense|sparse, got {self.reward_mode!r}")
        if self.schedule_kind not in ("ns", "cw"):
            raise SpecError(f"schedule_kind: expected ns|cw, got {self.schedule_kind!r}")
        if self.mode not in MODES:
            raise SpecError(f"mode: expected one of {MODES}, got {self.mode!r}")
        if self.period <= 0:
            raise SpecError(f"period: must be positive, got {self.period}")
        if self.lifetime <= 0:
            raise SpecError(f"lifetime: must be positive, got {self.lifetime}")
        if not self.seeds:
            raise SpecError("seeds: need at least one seed")

    def to_json(self) -> str:
        doc = dataclasses.asdict(self)
        doc["seeds"] = list(self.seeds)
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentSpec":
        doc = json.loads(text)
        doc["seeds"] = tuple(doc.get("seeds", (0,)))
        return cls(**doc)

    def with_overrides(self, extra: dict) -> "ExperimentSpec":
        spec = dataclasses.replace(self, overrides={**self.overrides, **extra})
        return spec


def worker_count() -> int:
    return max(1, int(os.environ.get("AOP_WORKERS", "1")))


def _coerce(current, raw):
    if isinstance(current, bool):
        return raw in (True, "true", "1", "True")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    return raw


def apply_overrides(cfg: AgentConfig, overrides: dict) -> AgentConfig:
    """Dotted-path config overrides, e.g. {"planner.pop_size": 20}."""
    cfg = dataclasses.replace(cfg, planner=dataclasses.replace(cfg.planner),
                              horizon=dataclasses.replace(cfg.horizon))
    for key, raw in overrides.items():
        target = cfg
        parts = key.split(".")
        for p in parts[:-1]:
            if not hasattr(target, p):
                raise SpecError(f"overrides: unknown config group {p!r} in {key!r}")
            target = getattr(target, p)
        leaf = parts[-1]
        if not hasattr(target, leaf):
            raise SpecError(f"overrides: unknown config field {leaf!r} in {key!r}")
        setattr(target, leaf, _coerce(getattr(target, leaf), raw))
    return cfg


def build_env(spec: ExperimentSpec):
    schedule = schedule_worlds(spec.schedule_kind, spec.period, spec.schedule_seed,
                               n_periods=spec.n_periods, env_kind=spec.env_kind)
    if spec.env_kind == "maze":
        return MazeLifelongEnv(schedule, spec.reward_mode)
    return SinkChainLifelongEnv(schedule)


def build_agent_config(spec: ExperimentSpec, seed: int) -> AgentConfig:
    cfg = AgentConfig(mode=spec.mode, seed=seed)
    if spec.reward_mode == "sparse":
        # sparse settings zero both uncertainty thresholds so exploration is
        # never cut short (full horizon every step)
        cfg.horizon.sigma_thres = 0.0
        cfg.horizon.eps_thres = 0.0
    return apply_overrides(cfg, spec.overrides)


def _run_one_seed(args) -> str:
    spec_json, seed, out_path = args
    spec = ExperimentSpec.from_json(spec_json)
    env = build_env(spec)
    cfg = build_agent_config(spec, seed)
    ckpt = Path(out_path).parent / "checkpoints" if spec.save_checkpoints else None
    log = run_lifetime(env, cfg, spec.lifetime, checkpoint_dir=ckpt)
    log.meta.update({
        "spec_name": spec.name,
        "env_kind": spec.env_kind,
        "reward_mode": spec.reward_mode,
        "schedule_kind": spec.schedule_kind,
        "schedule_seed": spec.schedule_seed,
        "period": spec.period,
    })
    log.save_jsonl(out_path)
    return out_path


@dataclass
class RunSummary:
    """Cross-seed statistics, always recomputed from the raw logs."""

    name: str
    mode: str
    n_seeds: int
    avg_reward: float
    reward_std: float  # across seeds
    planning_fraction: float
    planning_fraction_min: float
    planning_fraction_max: float
    per_seed_reward: list
    per_seed_fraction: list
    log_paths: list

    def to_row(self) -> list:
        return [self.name, self.mode, self.n_seeds, self.avg_reward, self.reward_std,
                self.planning_fraction, self.planning_fraction_min, self.planning_fraction_max]


def summarize_logs(name: str, paths) -> RunSummary:
    paths = [str(p) for p in paths]
    logs = [LifetimeLog.load_jsonl(p) for p in paths]
    rewards = [average_lifetime_reward(g) for g in logs]
    fracs = [planning_fraction(g) for g in logs]
    return RunSummary(
        name=name,
        mode=logs[0].meta.get("mode", "?"),
        n_seeds=len(logs),
        avg_reward=float(np.mean(rewards)),
        reward_std=float(np.std(rewards)),
        planning_fraction=float(np.mean(fracs)),
        planning_fraction_min=float(np.min(fracs)),
        planning_fraction_max=float(np.max(fracs)),
        per_seed_reward=rewards,
        per_seed_fraction=fracs,
        log_paths=paths,
    )


def run(spec: ExperimentSpec, workers: int | None = None) -> RunSummary:
    """Execute a spec: one JSONL log per seed, a spec echo, and a summary CSV."""
    spec.validate()
    out = Path(spec.out_dir) / spec.name
    out.mkdir(parents=True, exist_ok=True)
    (out / "spec.json").write_text(spec.to_json())
    jobs = [(spec.to_json(), seed, str(out / f"seed{seed}.jsonl")) for seed in spec.seeds]
    workers = worker_count() if workers is None else workers
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            paths = list(ex.map(_run_one_seed, jobs))
    else:
        paths = [_run_one_seed(j) for j in jobs]
    summary = summarize_logs(spec.name, paths)
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["name", "mode", "n_seeds", "avg_reward", "reward_std",
                    "planning_fraction", "planning_fraction_min", "planning_fraction_max"])
        w.writerow(summary.to_row())
        w.writerow([])
        w.writerow(["seed", "avg_reward", "planning_fraction"])
        for seed, r, f in zip(spec.seeds, summary.per_seed_reward, summary.per_seed_fraction):
            w.writerow([seed, r, f])
    return summary


def sweep_thresholds(base_spec: ExperimentSpec, sigma_values, eps_values,
                     workers: int | None = None) -> list[dict]:
    """Grid over the two uncertainty thresholds; one run per cell.

    Writes sweep.csv under the base spec's output directory and returns the
    rows as dicts.
    """
    for v in list(sigma_values) + list(eps_values):
        if v < 0:
            raise SpecError(f"sweep values must be non-negative, got {v}")
    rows = []
    out = Path(base_spec.out_dir) / base_spec.name
    out.mkdir(parents=True, exist_ok=True)
    for sv in sigma_values:
        for ev in eps_values:
            cell = dataclasses.replace(
                base_spec,
                name=f"{base_spec.name}-s{sv}-e{ev}",
                out_dir=str(out),
            ).with_overrides({"horizon.sigma_thres": sv, "horizon.eps_thres": ev})
            summary = run(cell, workers=workers)
            rows.append({
                "sigma_thres": sv,
                "eps_thres": ev,
                "avg_reward": summary.avg_reward,
                "reward_std": summary.reward_std,
                "planning_fraction": summary.planning_fraction,
            })
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["sigma_thres", "eps_thres", "avg_reward",
                                           "reward_std", "planning_fraction"])
        w.writeheader()
        w.writerows(rows)
    return rows


def degradation_probe(spec: ExperimentSpec, probe_every: int = 200, probe_len: int = 200,
                      seed: int | None = None) -> list[dict]:
    """Run one lifetime, periodically scoring the prior with the planner off.

    Every `probe_every` steps the current prior is rolled deterministically
    for `probe_len` steps from the lifetime's fixed starting state inside a
    frozen snapshot of the current world; the mean per-step reward is the
    probe score. Writes probe.csv; returns the rows.
    """
    spec.validate()
    if spec.mode not in ("aop-bc", "aop-td3", "td3-only"):
        raise SpecError(f"mode: {spec.mode} has no prior to probe")
    env = build_env(spec)
    probe_state = env.state()
    cfg = build_agent_config(spec, spec.seeds[0] if seed is None else seed)
    rows: list[dict] = []

    def probe(t, prior, model):
        if prior is None or (t + 1) % probe_every != 0:
            return
        traj = prior_rollout(prior, model, probe_len, state=probe_state)
        rows.append({
            "t": t,
            "world_index": len([e for e in env.schedule.entries if e.timestep <= t]) - 1,
            "score": float(traj.rewards.mean()),
        })

    log = run_lifetime(env, cfg, spec.lifetime, probe=probe)
    out = Path(spec.out_dir) / spec.name
    out.mkdir(parents=True, exist_ok=True)
    log.save_jsonl(out / f"probe-lifetime-seed{cfg.seed}.jsonl")
    with open(out / "probe.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["t", "world_index", "score"])
        w.writeheader()
        w.writerows(rows)
    return rows


def _moving_average(x: np.ndarray, window: int) -> np.ndarray:
    if window <= 1:
        return x.astype(float)
    kernel = np.ones(window) / window
    return np.convolve(x, kernel, mode="valid")


def per_world_phases(log: LifetimeLog) -> list[dict]:
    """First- vs last-quartile statistics within each world visit."""
    idx = log.world_indices()
    rolled = log.rolled()
    eps = log.epss()
    rows = []
    for w in np.unique(idx):
        span = np.nonzero(idx == w)[0]
        q = max(1, len(span) // 4)
        first, last = span[:q], span[-q:]
        rows.append({
            "world_index": int(w),
            "steps": len(span),
            "first_quartile_planning": float(rolled[first].mean()),
            "last_quartile_planning": float(rolled[last].mean()),
            "first_quartile_eps": float(np.nanmean(eps[first])) if not np.all(np.isnan(eps[first])) else "",
            "last_quartile_eps": float(np.nanmean(eps[last])) if not np.all(np.isnan(eps[last])) else "",
        })
    return rows


def report(log_paths, out_dir, window: int = 100) -> dict:
    """Figure-data CSVs from raw logs.

    Emits reward_curve.csv (per-path moving average), traces.csv (sigma /
    consistency error / horizon / planning per step with world indices),
    world_changes.csv, plan_by_time_since_change.csv, and world_phases.csv
    (first vs last quartile planning and error per world visit).
    """
    paths = [str(p) for p in log_paths]
    missing = [p for p in paths if not Path(p).exists()]
    if missing:
        raise FileNotFoundError(f"missing logs: {missing}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    logs = [LifetimeLog.load_jsonl(p) for p in paths]

    with open(out / "reward_curve.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "t", "reward_smoothed"])
        for p, g in zip(paths, logs):
            smooth = _moving_average(g.rewards(), window)
            for i, v in enumerate(smooth):
                w.writerow([p, i + window - 1, v])

    with open(out / "traces.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "t", "sigma", "eps", "horizon", "rolled", "world_index"])
        for p, g in zip(paths, logs):
            for r in g.records:
                w.writerow([p, r.t, r.sigma, r.eps, r.horizon, r.rolled, r.world_index])

    with open(out / "world_changes.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "t", "world_index"])
        for p, g in zip(paths, logs):
            idx = g.world_indices()
            change_at = np.nonzero(np.diff(idx) != 0)[0] + 1
            for t in change_at:
                w.writerow([p, int(t), int(idx[t])])

    with open(out / "plan_by_time_since_change.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_since_change", "mean_rolled", "mean_eps", "n"])
        since: dict[int, list] = {}
        for g in logs:
            idx = g.world_indices()
            rolled = g.rolled()
            eps = g.epss()
            last_change = 0
            for t in range(len(g)):
                if t > 0 and idx[t] != idx[t - 1]:
                    last_change = t
                since.setdefault(t - last_change, []).append((rolled[t], eps[t]))
        for k in sorted(since):
            vals = since[k]
            eps_vals = [v[1] for v in vals if not np.isnan(v[1])]
            w.writerow([k, float(np.mean([v[0] for v in vals])),
                        float(np.mean(eps_vals)) if eps_vals else "", len(vals)])

    with open(out / "world_phases.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["path", "world_index", "steps",
                                           "first_quartile_planning", "last_quartile_planning",
                                           "first_quartile_eps", "last_quartile_eps"])
        w.writeheader()
        for p, g in zip(paths, logs):
            for row in per_world_phases(g):
                w.writerow({"path": p, **row})

    return {"out_dir": str(out), "n_logs": len(logs)}
