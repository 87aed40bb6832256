"""Command-line interface: tail fits, CVaR estimates, experiments, sweeps.

Exit codes: 0 on success, 2 for configuration/usage problems (bad config
file, malformed sample, unknown preset), 3 for runtime failures.
"""

from __future__ import annotations

import argparse
import json
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from .evt import CvarEstimate, ThresholdConfig, cvar_sa, estimate_cvar, select_threshold
from .experiment import (
    ConfigError,
    load_spec,
    load_sweep_spec,
    report,
    run_experiment,
    run_sweep,
)

__all__ = ["main"]


def _read_sample(path: str) -> np.ndarray:
    source = Path(path)
    if not source.exists():
        raise ConfigError(f"sample file not found: {path}")
    values = []
    for lineno, line in enumerate(source.read_text().splitlines(), start=1):
        text = line.strip()
        if not text:
            continue
        try:
            values.append(float(text))
        except ValueError:
            raise ConfigError(f"{path}:{lineno}: not a number: {text!r}") from None
    if len(values) < 2:
        raise ConfigError(f"{path}: need at least two observations")
    return np.array(values)


def _preset_names() -> list[str]:
    root = resources.files("tailpg").joinpath("presets")
    return sorted(p.name[: -len(".json")] for p in root.iterdir() if p.name.endswith(".json"))


def _resolve_config(token: str) -> str:
    """A config argument is a file path or the name of a shipped preset."""
    if Path(token).exists():
        return token
    candidate = resources.files("tailpg").joinpath("presets", f"{token}.json")
    if candidate.is_file():
        return candidate.read_text()
    raise ConfigError(
        f"no config file or preset named {token!r}; shipped presets: {', '.join(_preset_names())}"
    )


def _add_threshold_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--method", choices=["mle", "mom"], default=None,
                        help="tail fit method (default mle)")
    parser.add_argument("--significance", type=float, default=None,
                        help="forward-stop significance for threshold selection")
    parser.add_argument("--xi-max", dest="xi_max", type=float, default=None,
                        help="largest acceptable fitted shape")
    parser.add_argument("--min-excesses", dest="min_excesses", type=int, default=None,
                        help="smallest usable number of threshold exceedances")


def _threshold_config(args: argparse.Namespace) -> ThresholdConfig:
    kwargs = {}
    if args.method is not None:
        kwargs["fit_method"] = args.method
    if args.significance is not None:
        kwargs["significance"] = args.significance
    if args.xi_max is not None:
        kwargs["xi_max"] = args.xi_max
    if args.min_excesses is not None:
        kwargs["min_excesses"] = args.min_excesses
    try:
        return ThresholdConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _emit(payload: dict) -> None:
    print(json.dumps(payload, indent=2))


def _cmd_fit_tail(args: argparse.Namespace) -> int:
    sample = _read_sample(args.sample)
    fit = select_threshold(sample, _threshold_config(args))
    payload: dict = {"n": int(sample.size), "fallback": fit.fallback}
    if not fit.fallback:
        payload.update(
            u=fit.u,
            xi=fit.params.xi,
            sigma=fit.params.sigma,
            fu_hat=fit.fu_hat,
            k=fit.k,
        )
    _emit(payload)
    return 0


def _cmd_cvar(args: argparse.Namespace) -> int:
    sample = _read_sample(args.sample)
    if not 0.0 < args.level < 1.0:
        raise ConfigError(f"--level must lie in (0, 1), got {args.level}")
    if args.estimator == "sa":
        est = CvarEstimate(value=cvar_sa(sample, args.level), method="sa", level=args.level)
    else:
        est = estimate_cvar(sample, args.level, _threshold_config(args))
    payload = {"cvar": est.value, "method": est.method, "level": est.level, "n": int(sample.size)}
    if est.fit is not None and not est.fit.fallback:
        payload.update(u=est.fit.u, xi=est.fit.params.xi, sigma=est.fit.params.sigma,
                       fu_hat=est.fit.fu_hat, k=est.fit.k)
    _emit(payload)
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    spec = load_spec(_resolve_config(args.config))
    manifest = run_experiment(
        spec, args.out, progress=lambda msg: print(msg, file=sys.stderr)
    )
    summary = report(args.out, make_figures=not args.no_figures)
    _emit(
        {
            "name": spec.name,
            "out_dir": str(args.out),
            "config_sha256": manifest["config_sha256"],
            "wall_time_s": manifest["wall_time_s"],
            "summary": summary,
        }
    )
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    _emit(report(args.out_dir, make_figures=not args.no_figures))
    return 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    spec = load_sweep_spec(_resolve_config(args.config))
    _emit(run_sweep(spec, args.out, make_figures=not args.no_figures))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tailpg",
        description="Tail-risk policy gradients: extreme-quantile CVaR tooling.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit-tail", help="select a tail threshold and fit the excess law")
    fit.add_argument("sample", help="text file with one cost per line")
    _add_threshold_options(fit)
    fit.set_defaults(handler=_cmd_fit_tail)

    cvar = sub.add_parser("cvar", help="estimate the CVaR of a sample")
    cvar.add_argument("sample", help="text file with one cost per line")
    cvar.add_argument("--level", type=float, required=True, help="confidence level in (0, 1)")
    cvar.add_argument("--estimator", choices=["pot", "sa"], default="pot")
    _add_threshold_options(cvar)
    cvar.set_defaults(handler=_cmd_cvar)

    tr = sub.add_parser("train", help="run a training experiment from a config or preset")
    tr.add_argument("config", help="JSON config path or preset name")
    tr.add_argument("--out", required=True, help="artifact directory")
    tr.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    tr.set_defaults(handler=_cmd_train)

    rep = sub.add_parser("report", help="re-aggregate an experiment directory")
    rep.add_argument("out_dir", help="directory written by `tailpg train`")
    rep.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    rep.set_defaults(handler=_cmd_report)

    sweep = sub.add_parser("sweep-theta", help="brute-force a one-dimensional policy grid")
    sweep.add_argument("config", help="JSON sweep config path or preset name")
    sweep.add_argument("--out", required=True, help="artifact directory")
    sweep.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    sweep.set_defaults(handler=_cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 — CLI boundary
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
