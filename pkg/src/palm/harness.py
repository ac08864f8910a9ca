"""Experiment configuration, seeded trials, per-trial CSVs and aggregation."""

from __future__ import annotations

import csv
import glob as globlib
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import domains
from .baselines import DEFAULT_ALPHA, DEFAULT_EPSILON, QLearningAgent, flat_rmax_context
from .core import ConfigurationError, PalmError, split_rng
from .executor import DEFAULT_CALL_BUDGET, DEFAULT_EPISODE_BUDGET, ExecutionContext
from .lamdp import load_hierarchy, read_hierarchy_text
from .rmax import TabularModel, default_m

log = logging.getLogger(__name__)

CSV_COLUMNS = ("episode", "steps", "cum_steps", "reward", "cum_reward", "wall_ms", "unknown_total", "outcome")
SUMMARY_COLUMNS = ("episode", "n", "cum_steps_mean", "cum_steps_ci", "cum_reward_mean", "cum_reward_ci",
                   "steps_mean", "steps_ci")
ALGORITHMS = ("palm", "rmax-flat", "qlearning")
MODEL_SUFFIX = ".model"


class MissingFileError(PalmError):
    """A hierarchy or model file named by a configuration does not exist."""


class AggregationError(PalmError):
    pass


@dataclass
class TransferSpec:
    lamdp: str
    model: str
    frozen: bool = True


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce a set of trials.

    ``m`` defaults to 1 on deterministic variants and 5 on stochastic ones.
    ``output`` holds one CSV per trial plus each trial's model store.
    """

    variant: str
    algorithm: str = "palm"
    hierarchy: str | None = None
    episodes: int = 100
    trials: int = 20
    seed: int = 0
    gamma: float = 0.95
    m: int | None = None
    tolerance: float = 1e-6
    max_iterations: int = 10_000
    gating: bool = True
    episode_budget: int = DEFAULT_EPISODE_BUDGET
    call_budget: int = DEFAULT_CALL_BUDGET
    alpha: float = DEFAULT_ALPHA
    epsilon: float = DEFAULT_EPSILON
    transfer: list[TransferSpec] = field(default_factory=list)
    resample_each_episode: bool = False
    output: str = "runs"
    workers: int = 1
    audit: bool = False
    base_dir: str = "."

    @property
    def known_threshold(self) -> int:
        return self.m if self.m is not None else default_m(domains.is_stochastic(self.variant))

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def trial_seed(self, index: int) -> int:
        return self.seed + index


_KEYS = {
    "variant", "algorithm", "hierarchy", "episodes", "trials", "seed", "gamma", "m", "tolerance",
    "max_iterations", "gating", "budgets", "alpha", "epsilon", "transfer", "resample_each_episode",
    "output", "workers", "audit",
}


def _require(cond: bool, name: str, message: str) -> None:
    if not cond:
        raise ConfigurationError(f"{name}: {message}")


def _int(raw: dict, name: str, default, minimum: int | None = None):
    value = raw.get(name, default)
    if value is None:
        return None
    _require(isinstance(value, int) and not isinstance(value, bool), name, "must be an integer")
    if minimum is not None:
        _require(value >= minimum, name, f"must be at least {minimum}")
    return value


def _float(raw: dict, name: str, default) -> float:
    value = raw.get(name, default)
    _require(isinstance(value, (int, float)) and not isinstance(value, bool), name, "must be a number")
    return float(value)


def _bool(raw: dict, name: str, default: bool) -> bool:
    value = raw.get(name, default)
    _require(isinstance(value, bool), name, "must be true or false")
    return value


def config_from_dict(raw: dict, base_dir: str | Path = ".") -> ExperimentConfig:
    """Validate a parsed config mapping; errors name the offending field."""
    if not isinstance(raw, dict):
        raise ConfigurationError("config: top level must be a mapping")
    unknown = sorted(set(raw) - _KEYS)
    if unknown:
        raise ConfigurationError(f"{unknown[0]}: unknown config key")
    _require("variant" in raw, "variant", "is required")
    variant = raw["variant"]
    _require(isinstance(variant, str) and variant in domains.variant_names(), "variant",
             f"unknown task variant {variant!r}")
    algorithm = raw.get("algorithm", "palm")
    _require(algorithm in ALGORITHMS, "algorithm", f"must be one of {', '.join(ALGORITHMS)}")
    hierarchy = raw.get("hierarchy")
    if algorithm == "palm":
        _require(isinstance(hierarchy, str), "hierarchy", "is required for palm")
    else:
        _require(hierarchy is None, "hierarchy", f"is not used by {algorithm}")

    budgets = raw.get("budgets", {}) or {}
    _require(isinstance(budgets, dict) and set(budgets) <= {"episode", "call"}, "budgets",
             "must be a mapping with keys episode and call")
    episode_budget = _int(budgets, "episode", DEFAULT_EPISODE_BUDGET, 1)
    call_budget = _int(budgets, "call", DEFAULT_CALL_BUDGET, 1)

    gamma = _float(raw, "gamma", 0.95)
    _require(0.0 < gamma < 1.0, "gamma", "must lie in (0, 1)")
    tolerance = _float(raw, "tolerance", 1e-6)
    _require(tolerance > 0, "tolerance", "must be positive")
    alpha = _float(raw, "alpha", DEFAULT_ALPHA)
    _require(0.0 < alpha <= 1.0, "alpha", "must lie in (0, 1]")
    epsilon = _float(raw, "epsilon", DEFAULT_EPSILON)
    _require(0.0 <= epsilon <= 1.0, "epsilon", "must lie in [0, 1]")

    transfer_raw = raw.get("transfer") or []
    if isinstance(transfer_raw, dict):
        transfer_raw = [transfer_raw]
    _require(isinstance(transfer_raw, list), "transfer", "must be a mapping or a list of mappings")
    transfer = []
    for item in transfer_raw:
        _require(isinstance(item, dict) and {"lamdp", "model"} <= set(item) <= {"lamdp", "model", "frozen"},
                 "transfer", "entries need lamdp and model (and optionally frozen)")
        _require(isinstance(item.get("frozen", True), bool), "transfer.frozen", "must be true or false")
        transfer.append(TransferSpec(str(item["lamdp"]), str(item["model"]), item.get("frozen", True)))
    _require(not transfer or algorithm == "palm", "transfer", "only applies to palm")

    output = raw.get("output", "runs")
    _require(isinstance(output, str) and output, "output", "must be a directory path")

    return ExperimentConfig(
        variant=variant,
        algorithm=algorithm,
        hierarchy=hierarchy,
        episodes=_int(raw, "episodes", 100, 1),
        trials=_int(raw, "trials", 20, 1),
        seed=_int(raw, "seed", 0, 0),
        gamma=gamma,
        m=_int(raw, "m", None, 1),
        tolerance=tolerance,
        max_iterations=_int(raw, "max_iterations", 10_000, 1),
        gating=_bool(raw, "gating", True),
        episode_budget=episode_budget,
        call_budget=call_budget,
        alpha=alpha,
        epsilon=epsilon,
        transfer=transfer,
        resample_each_episode=_bool(raw, "resample_each_episode", False),
        output=output,
        workers=_int(raw, "workers", 1, 1),
        audit=_bool(raw, "audit", False),
        base_dir=str(base_dir),
    )


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise MissingFileError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"config: not valid YAML ({exc})") from exc
    return config_from_dict(raw, path.parent)


def check_files(config: ExperimentConfig) -> None:
    """Fail fast when a referenced hierarchy or model file is missing."""
    if config.hierarchy is not None:
        try:
            read_hierarchy_text(_hierarchy_source(config))
        except FileNotFoundError as exc:
            raise MissingFileError(str(exc)) from None
    for t in config.transfer:
        if not config.resolve(t.model).exists():
            raise MissingFileError(f"model file not found: {t.model}")


def _hierarchy_source(config: ExperimentConfig) -> str | Path:
    local = config.resolve(config.hierarchy)
    return local if local.exists() else config.hierarchy


# -- trials -----------------------------------------------------------------------


def build_agent(config: ExperimentConfig, env, rng):
    if config.algorithm == "qlearning":
        return QLearningAgent(env, rng, config.alpha, config.epsilon, config.episode_budget)
    kwargs = dict(
        m=config.known_threshold, gating=config.gating, episode_budget=config.episode_budget,
        call_budget=config.call_budget, tolerance=config.tolerance,
        max_iterations=config.max_iterations, audit=config.audit,
    )
    if config.algorithm == "rmax-flat":
        return flat_rmax_context(env, rng, **kwargs)
    ctx = ExecutionContext(load_hierarchy(_hierarchy_source(config)), env, rng, **kwargs)
    for t in config.transfer:
        ctx.attach_transferred_model(t.lamdp, config.resolve(t.model), t.frozen)
    return ctx


def trial_csv_path(config: ExperimentConfig, index: int) -> Path:
    return config.resolve(config.output) / f"trial_{index:03d}.csv"


def model_store_path(config: ExperimentConfig, index: int) -> Path:
    return config.resolve(config.output) / "models" / f"trial_{index:03d}"


def run_trial(config: ExperimentConfig, index: int) -> Path:
    """Run one trial; writes its CSV, model store and optional audit log."""
    task_rng, env_rng = split_rng(config.trial_seed(index), 2)
    env, _ = domains.make_task(config.variant, task_rng, config.gamma)
    agent = build_agent(config, env, env_rng)
    out = trial_csv_path(config, index)
    out.parent.mkdir(parents=True, exist_ok=True)
    audit_file = out.with_suffix(".audit.jsonl").open("w") if config.audit else None
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    cum_steps, cum_reward = 0, 0.0
    try:
        for e in range(config.episodes):
            if config.resample_each_episode and e > 0:
                env, _ = domains.make_task(config.variant, task_rng, config.gamma)
                agent.set_task(env)
            rec = agent.run_episode(e)
            cum_steps += rec.steps
            cum_reward += rec.reward
            writer.writerow([e, rec.steps, cum_steps, repr(float(rec.reward)), repr(float(cum_reward)),
                             f"{rec.wall_ms:.3f}", rec.unknown_total, rec.outcome])
            if audit_file is not None and rec.audit:
                for a in rec.audit:
                    audit_file.write(json.dumps({"episode": e, **a.as_dict()}) + "\n")
    finally:
        if audit_file is not None:
            audit_file.close()
    out.write_text(buf.getvalue())
    store = model_store_path(config, index)
    store.mkdir(parents=True, exist_ok=True)
    for name, model in agent.models.items():
        (store / f"{name}{MODEL_SUFFIX}").write_bytes(model.serialize())
    log.info("trial %d done: %s", index, out)
    return out


def run(config: ExperimentConfig) -> list[Path]:
    """All trials of an experiment, optionally in a process pool."""
    check_files(config)
    out = config.resolve(config.output)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(asdict(config), indent=2, sort_keys=True) + "\n")
    indices = range(config.trials)
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            return list(pool.map(run_trial, [config] * config.trials, indices))
    return [run_trial(config, i) for i in indices]


# -- results ----------------------------------------------------------------------


def read_trial_csv(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != CSV_COLUMNS:
        raise AggregationError(f"{path}: unexpected CSV header")
    body = rows[1:]
    cols = {name: [r[i] for r in body] for i, name in enumerate(CSV_COLUMNS)}
    out = {name: np.array(cols[name], dtype=float) for name in CSV_COLUMNS if name != "outcome"}
    out["outcome"] = np.array(cols["outcome"])
    return out


def confidence_interval(samples: np.ndarray, axis: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Mean and normal-approximation 95% half-width (1.96 sd / sqrt n)."""
    n = samples.shape[axis]
    mean = samples.mean(axis=axis)
    if n < 2:
        return mean, np.zeros_like(mean)
    return mean, 1.96 * samples.std(axis=axis, ddof=1) / np.sqrt(n)


def aggregate(paths) -> list[dict]:
    """Per-episode means and 95% half-widths across trial CSVs."""
    paths = sorted(str(p) for p in paths)
    if not paths:
        raise AggregationError("no CSV files to aggregate")
    trials = [read_trial_csv(p) for p in paths]
    lengths = {len(t["episode"]) for t in trials}
    if len(lengths) != 1:
        raise AggregationError("trial CSVs have different episode counts")
    stack = {k: np.stack([t[k] for t in trials]) for k in ("cum_steps", "cum_reward", "steps")}
    summary = {k: confidence_interval(v) for k, v in stack.items()}
    rows = []
    for e in range(lengths.pop()):
        rows.append({
            "episode": e,
            "n": len(trials),
            "cum_steps_mean": summary["cum_steps"][0][e],
            "cum_steps_ci": summary["cum_steps"][1][e],
            "cum_reward_mean": summary["cum_reward"][0][e],
            "cum_reward_ci": summary["cum_reward"][1][e],
            "steps_mean": summary["steps"][0][e],
            "steps_ci": summary["steps"][1][e],
        })
    return rows


def aggregate_glob(pattern: str) -> list[dict]:
    return aggregate(globlib.glob(pattern))


def write_summary(rows: list[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for r in rows:
            writer.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for k, v in r.items()})


def export_model(store: str | Path, name: str, output: str | Path) -> Path:
    """Copy one subtask's model out of a trial's model store, validating it."""
    store = Path(store)
    if not store.is_dir():
        raise MissingFileError(f"model store not found: {store}")
    src = store / f"{name}{MODEL_SUFFIX}"
    if not src.exists():
        available = sorted(p.stem for p in store.glob(f"*{MODEL_SUFFIX}"))
        raise ConfigurationError(f"no subtask named {name!r} in store (have {', '.join(available)})")
    data = src.read_bytes()
    TabularModel.deserialize(data)
    output = Path(output)
    output.parent.mkdir(parents=True, exist_ok=True)
    output.write_bytes(data)
    return output
