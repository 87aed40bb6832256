"""Experiment harness: JSON-configured training runs with on-disk artifacts.

An experiment trains the same environment repeatedly — once per run seed and
estimator — and persists everything needed to reproduce or re-aggregate the
comparison later:

- ``config.json``: the normalized experiment description as executed;
- ``trace_<estimator>_run<r>.csv``: one row per training iteration (floats
  written with ``repr`` so files are byte-identical across equal-seed runs);
- ``manifest.json``: seeds, package version, config digest, wall time;
- ``rmse.csv``: per-iteration root-mean-square errors against the reference
  optimum, one column pair per estimator (when a reference is available).

Run ``r`` derives its seed as ``mix_seed(base_seed, r)``; random policy
initializations are keyed the same way.  Neither depends on the estimator,
so "pot" and "sa" runs see identical randomness and identical starting
points — the comparison isolates the estimator itself.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .evt import ThresholdConfig, cvar_sa
from .gpd_env import GpdEnv, GpdEnvConfig, cvar_closed_form
from .hedging import HedgeConfig, HedgeMarket, HedgingEnv, brute_force_curve
from .training import TrainConfig, mix_seed, rmse_report, train

__all__ = [
    "SCHEMA_VERSION",
    "ConfigError",
    "ExperimentSpec",
    "SweepSpec",
    "load_spec",
    "load_sweep_spec",
    "run_experiment",
    "run_sweep",
    "report",
    "read_trace",
]

SCHEMA_VERSION = 1

_ENVIRONMENTS = ("gpd", "hedging")
_ESTIMATORS = ("pot", "sa")

_TRAIN_KEYS = {
    "theta0", "n", "iterations", "eps", "alpha", "step_size",
    "beta1", "beta2", "eps_hat", "threshold",
}
_THRESHOLD_KEYS = {"quantile_levels", "xi_max", "significance", "fit_method", "min_excesses"}


class ConfigError(ValueError):
    """A config file failed validation; the CLI maps this to exit code 2."""


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigError(message)


def _check_keys(section: dict, allowed: set, where: str) -> None:
    unknown = set(section) - allowed
    _require(not unknown, f"unknown key(s) in {where}: {sorted(unknown)}")


# =============================================================================
# Experiment specification
# =============================================================================


@dataclass(frozen=True)
class ExperimentSpec:
    """A validated experiment: environment, training template, run layout."""

    name: str
    environment: str
    env_params: dict
    train: TrainConfig
    estimators: tuple[str, ...]
    runs: int
    base_seed: int
    theta0_random: tuple[float, float] | None
    reference: tuple[tuple[float, ...], float] | None

    def normalized(self) -> dict:
        """Canonical dict form — what gets hashed and written to config.json."""
        train = {
            "theta0": (
                {"random": {"low": self.theta0_random[0], "high": self.theta0_random[1]}}
                if self.theta0_random is not None
                else list(self.train.theta0)
            ),
            "n": self.train.n,
            "iterations": self.train.iterations,
            "eps": self.train.eps,
            "alpha": self.train.alpha,
            "step_size": self.train.step_size,
            "beta1": self.train.beta1,
            "beta2": self.train.beta2,
            "eps_hat": self.train.eps_hat,
            "threshold": {
                "quantile_levels": list(self.train.threshold.quantile_levels),
                "xi_max": self.train.threshold.xi_max,
                "significance": self.train.threshold.significance,
                "fit_method": self.train.threshold.fit_method,
                "min_excesses": self.train.threshold.min_excesses,
            },
        }
        out = {
            "schema_version": SCHEMA_VERSION,
            "name": self.name,
            "environment": {"name": self.environment, "params": dict(self.env_params)},
            "train": train,
            "estimators": list(self.estimators),
            "runs": self.runs,
            "base_seed": self.base_seed,
        }
        if self.reference is not None:
            out["reference"] = {
                "theta_star": list(self.reference[0]),
                "j_star": self.reference[1],
            }
        return out

    def digest(self) -> str:
        canon = json.dumps(self.normalized(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()


def _parse_threshold(section: dict) -> ThresholdConfig:
    _check_keys(section, _THRESHOLD_KEYS, "train.threshold")
    kwargs = dict(section)
    if "quantile_levels" in kwargs:
        kwargs["quantile_levels"] = tuple(float(q) for q in kwargs["quantile_levels"])
    try:
        return ThresholdConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid train.threshold: {exc}") from exc


def _parse_theta0(raw, dim_hint: int | None):
    """Returns (fixed tuple or placeholder, random bounds or None)."""
    if isinstance(raw, dict):
        _check_keys(raw, {"random"}, "train.theta0")
        bounds = raw.get("random")
        _require(
            isinstance(bounds, dict) and set(bounds) == {"low", "high"},
            'train.theta0.random needs exactly {"low": ..., "high": ...}',
        )
        low, high = float(bounds["low"]), float(bounds["high"])
        _require(low < high, "train.theta0.random needs low < high")
        dim = dim_hint if dim_hint is not None else 1
        return tuple([low] * dim), (low, high)
    _require(
        isinstance(raw, (list, tuple)) and len(raw) >= 1,
        "train.theta0 must be a non-empty list or a random-init object",
    )
    return tuple(float(v) for v in raw), None


def build_environment(name: str, params: dict):
    """Instantiate a registered environment from its JSON parameter block."""
    _require(name in _ENVIRONMENTS, f"unknown environment {name!r}, expected one of {_ENVIRONMENTS}")
    try:
        if name == "gpd":
            return GpdEnv(GpdEnvConfig(**params))
        return HedgingEnv(market=HedgeMarket.default(), cfg=HedgeConfig(**params))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid parameters for environment {name!r}: {exc}") from exc


def _default_reference(spec_env: str, env, alpha: float):
    """Closed-form optimum where the environment provides one."""
    if spec_env != "gpd":
        return None
    theta_star = tuple(float(v) for v in env.optimal_theta)
    j_star = float(env.cvar_oracle(env.optimal_theta, alpha))
    return theta_star, j_star


def load_spec(source) -> ExperimentSpec:
    """Parse and validate an experiment config (path, JSON text, or dict)."""
    raw = _load_json(source)
    _check_keys(
        raw,
        {"schema_version", "name", "environment", "train", "estimators", "runs",
         "base_seed", "reference"},
        "experiment config",
    )
    _require(raw.get("schema_version") == SCHEMA_VERSION,
             f"schema_version must be {SCHEMA_VERSION}")
    name = raw.get("name")
    _require(isinstance(name, str) and name, "name must be a non-empty string")

    env_section = raw.get("environment")
    _require(isinstance(env_section, dict), "environment section is required")
    _check_keys(env_section, {"name", "params"}, "environment")
    env_name = env_section.get("name")
    env_params = env_section.get("params", {})
    _require(isinstance(env_params, dict), "environment.params must be an object")
    env = build_environment(env_name, env_params)

    train_section = raw.get("train")
    _require(isinstance(train_section, dict), "train section is required")
    _check_keys(train_section, _TRAIN_KEYS, "train")
    theta0, theta0_random = _parse_theta0(train_section.get("theta0", [1.0]), env.dim)
    _require(
        len(theta0) == env.dim,
        f"train.theta0 has {len(theta0)} components, environment wants {env.dim}",
    )
    threshold = _parse_threshold(train_section.get("threshold", {}))
    kwargs = {
        k: train_section[k]
        for k in ("n", "iterations", "eps", "alpha", "step_size", "beta1", "beta2", "eps_hat")
        if k in train_section
    }
    try:
        train_cfg = TrainConfig(theta0=theta0, threshold=threshold, **kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid train section: {exc}") from exc

    estimators = tuple(raw.get("estimators", list(_ESTIMATORS)))
    _require(len(estimators) >= 1 and len(set(estimators)) == len(estimators),
             "estimators must be non-empty and unique")
    _require(set(estimators) <= set(_ESTIMATORS),
             f"estimators must be drawn from {_ESTIMATORS}")

    runs = raw.get("runs", 1)
    _require(isinstance(runs, int) and runs >= 1, "runs must be a positive integer")
    base_seed = raw.get("base_seed", 0)
    _require(isinstance(base_seed, int) and base_seed >= 0,
             "base_seed must be a non-negative integer")

    reference = None
    if "reference" in raw:
        ref = raw["reference"]
        _require(isinstance(ref, dict), "reference must be an object")
        _check_keys(ref, {"theta_star", "j_star"}, "reference")
        _require("theta_star" in ref and "j_star" in ref,
                 "reference needs both theta_star and j_star")
        theta_star = tuple(float(v) for v in ref["theta_star"])
        _require(len(theta_star) == env.dim,
                 f"reference.theta_star has {len(theta_star)} components, "
                 f"environment wants {env.dim}")
        reference = (theta_star, float(ref["j_star"]))
    else:
        reference = _default_reference(env_name, env, train_cfg.alpha)

    return ExperimentSpec(
        name=name,
        environment=env_name,
        env_params=dict(env_params),
        train=train_cfg,
        estimators=estimators,
        runs=runs,
        base_seed=base_seed,
        theta0_random=theta0_random,
        reference=reference,
    )


def _load_json(source) -> dict:
    if isinstance(source, dict):
        return dict(source)
    try:
        is_file = Path(source).exists()
    except OSError:  # e.g. JSON text long enough to overflow PATH_MAX
        is_file = False
    text = Path(source).read_text() if is_file else str(source)
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    _require(isinstance(raw, dict), "config must be a JSON object")
    return raw


# =============================================================================
# Trace files
# =============================================================================


def trace_filename(estimator: str, run: int) -> str:
    return f"trace_{estimator}_run{run:03d}.csv"


def write_trace(path, trace) -> None:
    """One CSV row per iteration; floats via ``repr`` so equal runs produce
    byte-identical files (timings deliberately stay out of the trace)."""
    dim = trace.records[0].theta.size
    lines = [",".join(["iteration", *(f"theta_{i}" for i in range(dim)), "j_hat", "method", "u"])]
    for rec in trace.records:
        lines.append(
            ",".join(
                [
                    str(rec.iteration),
                    *(repr(float(v)) for v in rec.theta),
                    repr(float(rec.j_hat)),
                    rec.method,
                    repr(float(rec.u)),
                ]
            )
        )
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    theta: np.ndarray
    j_hat: float
    method: str
    u: float


@dataclass(frozen=True)
class Trace:
    records: list[TraceRecord]


def read_trace(path) -> Trace:
    """Inverse of :func:`write_trace`, with header validation."""
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise ConfigError(f"{path}: empty trace file")
    header = lines[0].split(",")
    if (
        len(header) < 4
        or header[0] != "iteration"
        or header[-3:] != ["j_hat", "method", "u"]
        or any(h != f"theta_{i}" for i, h in enumerate(header[1:-3]))
    ):
        raise ConfigError(f"{path}: unrecognized trace header {lines[0]!r}")
    dim = len(header) - 4
    records = []
    for line in lines[1:]:
        cells = line.split(",")
        if len(cells) != len(header):
            raise ConfigError(f"{path}: row has {len(cells)} cells, expected {len(header)}")
        records.append(
            TraceRecord(
                iteration=int(cells[0]),
                theta=np.array([float(c) for c in cells[1 : 1 + dim]]),
                j_hat=float(cells[1 + dim]),
                method=cells[2 + dim],
                u=float(cells[3 + dim]),
            )
        )
    return Trace(records=records)


# =============================================================================
# Running and reporting
# =============================================================================


def _run_theta0(spec: ExperimentSpec, run: int) -> tuple[float, ...]:
    if spec.theta0_random is None:
        return spec.train.theta0
    low, high = spec.theta0_random
    rng = np.random.default_rng(mix_seed(spec.base_seed, 100_000 + run))
    dim = len(spec.train.theta0)
    return tuple(float(v) for v in rng.uniform(low, high, size=dim))


def run_experiment(spec: ExperimentSpec, out_dir, progress=None) -> dict:
    """Execute all runs of ``spec``, write artifacts into ``out_dir``.

    Returns the manifest dict.  ``progress`` (optional) is called with a
    one-line string after each completed run.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    env = build_environment(spec.environment, spec.env_params)
    started = time.perf_counter()
    seeds = {}
    final_thetas: dict[str, list[list[float]]] = {}
    for estimator in spec.estimators:
        seeds[estimator] = []
        final_thetas[estimator] = []
        for run in range(spec.runs):
            run_seed = mix_seed(spec.base_seed, run)
            cfg = dataclasses.replace(
                spec.train,
                estimator=estimator,
                base_seed=run_seed,
                theta0=_run_theta0(spec, run),
            )
            trace = train(env, cfg)
            write_trace(out / trace_filename(estimator, run), trace)
            seeds[estimator].append(run_seed)
            final_thetas[estimator].append([float(v) for v in trace.final_theta])
            if progress is not None:
                progress(
                    f"{spec.name}: estimator={estimator} run={run + 1}/{spec.runs} "
                    f"final_theta={np.array2string(trace.final_theta, precision=4)}"
                )
    config = spec.normalized()
    (out / "config.json").write_text(json.dumps(config, indent=2) + "\n")
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "name": spec.name,
        "package_version": __version__,
        "config_sha256": spec.digest(),
        "seeds": seeds,
        "final_thetas": final_thetas,
        "wall_time_s": time.perf_counter() - started,
        "finished_at": datetime.now(timezone.utc).isoformat(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest


def report(out_dir, make_figures: bool = True) -> dict:
    """Re-aggregate the traces in ``out_dir`` into RMSE tables and figures.

    Reads everything back from disk (never from memory), so it validates the
    full artifact round trip.  Returns a summary dict keyed by estimator.
    """
    out = Path(out_dir)
    config_path = out / "config.json"
    if not config_path.exists():
        raise ConfigError(f"{out}: no config.json — not an experiment directory")
    spec = load_spec(config_path)
    traces = {
        estimator: [read_trace(out / trace_filename(estimator, run)) for run in range(spec.runs)]
        for estimator in spec.estimators
    }
    summary: dict[str, dict] = {}
    if spec.reference is None:
        for estimator, trs in traces.items():
            finals = np.stack([tr.records[-1].theta for tr in trs])
            summary[estimator] = {"mean_final_theta": finals.mean(axis=0).tolist()}
        return summary

    theta_star, j_star = spec.reference
    iterations = np.arange(len(next(iter(traces.values()))[0].records))
    columns = {}
    for estimator, trs in traces.items():
        rmse_theta, rmse_j = rmse_report(trs, theta_star, j_star)
        columns[estimator] = (rmse_theta, rmse_j)
        finals = np.stack([tr.records[-1].theta for tr in trs])
        dist = np.linalg.norm(finals - np.asarray(theta_star), axis=1)
        summary[estimator] = {
            "final_rmse_theta": float(rmse_theta[-1]),
            "final_rmse_j": float(rmse_j[-1]),
            "median_final_theta_error": float(np.median(dist)),
        }

    header = ["iteration"]
    for estimator in spec.estimators:
        header += [f"rmse_theta_{estimator}", f"rmse_j_{estimator}"]
    lines = [",".join(header)]
    for j in iterations:
        cells = [str(int(j))]
        for estimator in spec.estimators:
            rmse_theta, rmse_j = columns[estimator]
            cells += [repr(float(rmse_theta[j])), repr(float(rmse_j[j]))]
        lines.append(",".join(cells))
    (out / "rmse.csv").write_text("\n".join(lines) + "\n")

    if make_figures:
        from .figures import save_rmse_figure

        save_rmse_figure(iterations, columns, out / "rmse.png")
    return summary


# =============================================================================
# Policy sweeps
# =============================================================================


@dataclass(frozen=True)
class SweepSpec:
    """A validated one-dimensional policy sweep."""

    name: str
    environment: str
    env_params: dict
    thetas: tuple[float, ...]
    n: int
    seed: int
    alpha: float

    def normalized(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "name": self.name,
            "environment": {"name": self.environment, "params": dict(self.env_params)},
            "sweep": {
                "thetas": list(self.thetas),
                "n": self.n,
                "seed": self.seed,
                "alpha": self.alpha,
            },
        }

    def digest(self) -> str:
        canon = json.dumps(self.normalized(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()


def load_sweep_spec(source) -> SweepSpec:
    """Parse and validate a sweep config (path, JSON text, or dict)."""
    raw = _load_json(source)
    _check_keys(raw, {"schema_version", "name", "environment", "sweep"}, "sweep config")
    _require(raw.get("schema_version") == SCHEMA_VERSION,
             f"schema_version must be {SCHEMA_VERSION}")
    name = raw.get("name")
    _require(isinstance(name, str) and name, "name must be a non-empty string")
    env_section = raw.get("environment")
    _require(isinstance(env_section, dict), "environment section is required")
    _check_keys(env_section, {"name", "params"}, "environment")
    env_name = env_section.get("name")
    env_params = env_section.get("params", {})
    env = build_environment(env_name, env_params)
    _require(env.dim == 1, "sweeps require a one-dimensional policy")

    section = raw.get("sweep")
    _require(isinstance(section, dict), "sweep section is required")
    _check_keys(section, {"low", "high", "count", "thetas", "n", "seed", "alpha"}, "sweep")
    if "thetas" in section:
        _require(
            all(k not in section for k in ("low", "high", "count")),
            "give either sweep.thetas or low/high/count, not both",
        )
        thetas = tuple(float(v) for v in section["thetas"])
    else:
        _require(
            all(k in section for k in ("low", "high", "count")),
            "sweep needs low, high and count (or an explicit thetas list)",
        )
        low, high, count = float(section["low"]), float(section["high"]), section["count"]
        _require(isinstance(count, int) and count >= 2, "sweep.count must be an integer >= 2")
        _require(low < high, "sweep needs low < high")
        thetas = tuple(float(v) for v in np.linspace(low, high, count))
    _require(len(thetas) >= 2, "sweep needs at least two policy values")

    n = section.get("n", 100_000)
    _require(isinstance(n, int) and n >= 2, "sweep.n must be an integer >= 2")
    seed = section.get("seed", 0)
    _require(isinstance(seed, int) and seed >= 0, "sweep.seed must be a non-negative integer")
    alpha = float(section.get("alpha", 0.999))
    _require(0.0 < alpha < 1.0, "sweep.alpha must lie in (0, 1)")
    return SweepSpec(
        name=name,
        environment=env_name,
        env_params=dict(env_params),
        thetas=thetas,
        n=n,
        seed=seed,
        alpha=alpha,
    )


def run_sweep(spec: SweepSpec, out_dir, make_figures: bool = True) -> dict:
    """Evaluate the sample-average CVaR over the policy grid; write artifacts.

    Every policy value is scored on the same simulated batch (common random
    numbers), so the curve is smooth and its argmin meaningful.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    thetas = np.array(spec.thetas)
    started = time.perf_counter()
    if spec.environment == "hedging":
        cfg = HedgeConfig(**{**spec.env_params, "alpha": spec.alpha})
        _, values = brute_force_curve(
            HedgeMarket.default(), cfg, thetas, n_paths=spec.n, seed=spec.seed
        )
    else:
        env = build_environment(spec.environment, spec.env_params)
        values = np.array(
            [
                cvar_sa(env.sample_costs(np.array([th]), spec.n, spec.seed), spec.alpha)
                for th in thetas
            ]
        )
    lines = ["theta,cvar"]
    lines += [f"{repr(float(t))},{repr(float(v))}" for t, v in zip(thetas, values)]
    (out / "sweep.csv").write_text("\n".join(lines) + "\n")

    best = int(np.argmin(values))
    summary = {
        "schema_version": SCHEMA_VERSION,
        "name": spec.name,
        "package_version": __version__,
        "config_sha256": spec.digest(),
        "argmin_theta": float(thetas[best]),
        "min_cvar": float(values[best]),
        "n": spec.n,
        "seed": spec.seed,
        "alpha": spec.alpha,
        "wall_time_s": time.perf_counter() - started,
    }
    (out / "sweep.json").write_text(json.dumps(summary, indent=2) + "\n")
    if make_figures:
        from .figures import save_sweep_figure

        save_sweep_figure(thetas, values, out / "sweep.png")
    return summary
