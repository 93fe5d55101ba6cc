"""
Command line front end.

    ofbm <validate|gamma|exact|telegraph|partial-sums|verify|calibrate|plot>
         [--config FILE] [--out DIR] [--seed N] [--replicates N] [--levels A,B,C]
         [--scheme NAME] [--settings INI] [--trials N]
"""

import argparse
import json
import os
import sys
from typing import Callable, Dict, List, Optional

from loguru import logger

from . import __version__
from .diagnostics import Scheme, calibration_exceedance_rate, run_convergence_study
from .errors import ConfigError, InvalidInputError, InvalidModelError, OfbmError
from .exact_sampler import ExactSampler
from .metrics import write_metrics
from .model import (
    gamma_mason_xiao,
    is_time_reversible_params,
    kernel_square_integrability,
    require_valid,
    spectral_covariance,
    validate_spec,
)
from .partial_sums import PartialSumConfig, PartialSumSampler
from .plotting import plot_errors, plot_paths
from .rng import Role, RngStream
from .runconfig import SCHEMES, RunConfig, default_run_config, load_run_config
from .settings import Settings, setup_logging
from .storage import read_paths_csv, read_report, write_paths_csv, write_report
from .telegraph import TelegraphSampler

COMMANDS = ("validate", "gamma", "exact", "telegraph", "partial-sums", "verify", "calibrate", "plot")
CALIBRATION_RATE = 0.01


def _levels(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"levels must be comma separated integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ofbm", description="OFBM simulation and verification toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="run configuration (JSON)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--replicates", type=int)
        p.add_argument("--levels", type=_levels)
        p.add_argument("--scheme", choices=SCHEMES, help="built-in configuration when --config is absent")
        p.add_argument("--settings", help="settings INI file (default config/config.ini)")
        if name == "calibrate":
            p.add_argument("--trials", type=int, default=100, help="exact Brownian runs to draw")
    return parser


class CommandContext:
    """Resolved configuration shared by the subcommands."""

    def __init__(self, args: argparse.Namespace, settings: Settings):
        self.args = args
        self.settings = settings
        self.threads = settings.worker_threads

    def run_config(self, default_scheme: str) -> RunConfig:
        args = self.args
        if args.config:
            cfg = load_run_config(args.config, self.settings.quadrature())
        else:
            cfg = default_run_config(args.scheme or default_scheme, self.settings.quadrature())
        if args.seed is not None and not (0 <= args.seed < 2**64):
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {args.seed}")
        return cfg.with_overrides(seed=args.seed, replicates=args.replicates, levels=args.levels)

    def output_dir(self, cfg: Optional[RunConfig] = None) -> str:
        if self.args.out:
            return self.args.out
        if cfg is not None and cfg.output_dir:
            return cfg.output_dir
        label = cfg.label if cfg is not None else ""
        return os.path.join(self.settings.output_dir, label)

    @property
    def z_threshold(self) -> float:
        return self.settings.z_threshold


def _emit(payload: dict):
    print(json.dumps(payload, sort_keys=True, indent=2))


def cmd_validate(ctx: CommandContext) -> int:
    cfg = ctx.run_config("exact")
    spec = cfg.spec()
    report = validate_spec(spec, cfg.quadrature)
    payload = report.to_dict()
    if report.passed:
        square = kernel_square_integrability(spec, 1.0, cfg.quadrature)
        payload["square_integrability"] = {
            "l2_norm_sq": square.l2_norm_sq,
            "decay_ratio": square.decay_ratio,
            "required_ratio": square.required_ratio,
            "pass": square.passed,
        }
        payload["time_reversible"] = is_time_reversible_params(spec)
    _emit(payload)
    if not report.passed:
        raise InvalidModelError(f"model {spec.label} failed validation", report)
    return 0


def cmd_gamma(ctx: CommandContext) -> int:
    cfg = ctx.run_config("exact")
    D = cfg.spec().D
    gamma = gamma_mason_xiao(D, cfg.quadrature)
    for row in gamma:
        print(" ".join(f"{v:.6f}" for v in row))
    return 0


def _stream(cfg: RunConfig) -> RngStream:
    # same key as the top level of `verify`
    return RngStream(cfg.seed).child(Role.NOISE, len(cfg.levels) - 1)


def _require_scheme(cfg: RunConfig, scheme: str):
    if cfg.scheme != scheme:
        raise ConfigError(f"configuration is for scheme {cfg.scheme!r}, command needs {scheme!r}")


def _write_paths(ctx: CommandContext, cfg: RunConfig, paths) -> int:
    out = ctx.output_dir(cfg)
    target = os.path.join(out, cfg.paths_file)
    write_paths_csv(target, paths)
    _emit({"scheme": cfg.scheme, "replicates": len(paths), "paths": target})
    return 0


def _exact_gamma(cfg: RunConfig):
    spec = cfg.spec()
    gamma = cfg.exact_gamma()
    if gamma is None:
        require_valid(spec, cfg.quadrature)
        if not is_time_reversible_params(spec):
            raise InvalidInputError("exact sampling needs a time-reversible model")
        gamma = spectral_covariance(1.0, 1.0, spec, cfg.quadrature)
    return spec, gamma


def cmd_exact(ctx: CommandContext) -> int:
    cfg = ctx.run_config("exact")
    _require_scheme(cfg, "exact")
    spec, gamma = _exact_gamma(cfg)
    sampler = ExactSampler(cfg.times(), spec.D, gamma)
    return _write_paths(ctx, cfg, sampler.sample_many(_stream(cfg), cfg.replicates, ctx.threads))


def cmd_telegraph(ctx: CommandContext) -> int:
    cfg = ctx.run_config("telegraph")
    _require_scheme(cfg, "telegraph")
    sampler = TelegraphSampler(cfg.spec(), cfg.levels[-1], cfg.times(), cfg.quadrature)
    return _write_paths(ctx, cfg, sampler.sample_many(_stream(cfg), cfg.replicates, ctx.threads))


def cmd_partial_sums(ctx: CommandContext) -> int:
    cfg = ctx.run_config("partial-sums")
    _require_scheme(cfg, "partial-sums")
    part = PartialSumConfig.for_fgn(cfg.levels[-1], cfg.hurst)
    sampler = PartialSumSampler(cfg.covariance_sequence(), part, cfg.times())
    return _write_paths(ctx, cfg, sampler.sample_many(_stream(cfg), cfg.replicates, ctx.threads))


def cmd_verify(ctx: CommandContext) -> int:
    cfg = ctx.run_config(ctx.args.scheme or "partial-sums")
    scheme = Scheme(cfg.scheme)
    threshold = cfg.z_threshold or ctx.z_threshold
    gamma = None
    if scheme is Scheme.PARTIAL_SUMS:
        model = cfg.covariance_sequence()
    elif scheme is Scheme.EXACT:
        model, gamma = _exact_gamma(cfg)
    else:
        model = cfg.spec()
    report = run_convergence_study(
        scheme, model, cfg.levels, cfg.times(), cfg.replicates, cfg.quadrature, cfg.seed,
        z_threshold=threshold, threads=ctx.threads, self_similarity_c=cfg.self_similarity_c,
        gamma=gamma, se_floor=ctx.settings.se_floor,
    )
    payload = report.to_dict()
    payload["config_echo"] = cfg.echo
    payload["tool_version"] = __version__

    out = ctx.output_dir(cfg)
    write_report(os.path.join(out, cfg.report_file), payload)
    if report.paths:
        write_paths_csv(os.path.join(out, cfg.paths_file), report.paths)
    _emit({"scheme": scheme.value, "pass": report.passed, "report": os.path.join(out, cfg.report_file)})
    return 0 if report.passed else 1


def cmd_calibrate(ctx: CommandContext) -> int:
    """Share of exact Brownian runs whose max z exceeds the threshold; at most 1% passes."""
    args = ctx.args
    trials = args.trials
    replicates = args.replicates if args.replicates is not None else 1000
    seed = args.seed if args.seed is not None else 0
    if trials < 1 or replicates < 2:
        raise InvalidInputError(f"need trials >= 1 and replicates >= 2, got {trials} and {replicates}")
    if not (0 <= seed < 2**64):
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {seed}")
    rate = calibration_exceedance_rate(trials, replicates, RngStream(seed), threshold=ctx.z_threshold,
                                       threads=ctx.threads)
    passed = rate <= CALIBRATION_RATE
    _emit({"trials": trials, "replicates": replicates, "z_threshold": ctx.z_threshold,
           "exceedance_rate": rate, "pass": passed})
    return 0 if passed else 1


def cmd_plot(ctx: CommandContext) -> int:
    cfg = None
    if ctx.args.config or ctx.args.scheme:
        cfg = ctx.run_config(ctx.args.scheme or "exact")
    out = ctx.output_dir(cfg)
    paths_file = os.path.join(out, cfg.paths_file if cfg else "paths.csv")
    report_file = os.path.join(out, cfg.report_file if cfg else "report.json")
    written = []
    if os.path.exists(paths_file):
        target = os.path.join(out, "paths.svg")
        plot_paths(read_paths_csv(paths_file), target, title=cfg.label if cfg else "")
        written.append(target)
    if os.path.exists(report_file):
        report = read_report(report_file)
        if report.get("levels"):
            target = os.path.join(out, "errors.svg")
            plot_errors(report, target)
            written.append(target)
    if not written:
        raise InvalidInputError(f"nothing to plot in {out}")
    _emit({"plots": written})
    return 0


HANDLERS: Dict[str, Callable[[CommandContext], int]] = {
    "validate": cmd_validate,
    "gamma": cmd_gamma,
    "exact": cmd_exact,
    "telegraph": cmd_telegraph,
    "partial-sums": cmd_partial_sums,
    "verify": cmd_verify,
    "calibrate": cmd_calibrate,
    "plot": cmd_plot,
}


def run_command(argv: Optional[List[str]] = None) -> int:
    """Run one subcommand and return its exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else 2

    try:
        settings = Settings(args.settings)
    except (OfbmError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    setup_logging(settings)
    try:
        code = HANDLERS[args.command](CommandContext(args, settings))
    except OfbmError as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        code = e.exit_code
    except Exception as e:
        logger.exception(f"Unexpected error in {args.command}: {e}")
        code = 1
    finally:
        if settings.metrics_enabled:
            try:
                write_metrics(settings.metrics_file)
            except OSError as e:
                logger.warning(f"Could not write metrics to {settings.metrics_file}: {e}")
    return code


def main():
    """Main entry point."""
    sys.exit(run_command())
