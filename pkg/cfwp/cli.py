"""Command-line entry point: ``python -m cfwp <command> --config run.json``.

Exit codes: 0 clean result, 2 a definite negative finding (a failed
hypothesis, a candidate bound state, a failed identity), 3 inconclusive,
64 invalid configuration, 74 unreadable input or unwritable output.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from pydantic import ValidationError

from .errors import CfwpError, ConfigError, FileAccessError
from .models.schemas import RunConfig, SolverOptions
from .services import export
from .services.geometry import CfwpGeometry, GeometryService
from .services.hypotheses import HypothesisService
from .services.verdict import VerdictService
from .settings import DEFAULT_WINDOW, Settings, configure_logging

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FINDING = 2
EXIT_INCONCLUSIVE = 3
EXIT_CONFIG = 64
EXIT_IO = 74


# 配置读取
def apply_override(doc: Dict[str, Any], assignment: str) -> None:
    """--set a.b.c=value，value 先按 JSON 解析，失败则当作字符串"""
    key, sep, raw = assignment.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"--set expects key.path=value, got {assignment!r}")
    try:
        value = json.loads(raw)
    except ValueError:
        value = raw
    parts = key.strip().split(".")
    node = doc
    for part in parts[:-1]:
        child = node.get(part)
        if child is None:
            child = node[part] = {}
        if not isinstance(child, dict):
            raise ConfigError(f"--set {key}: '{part}' is not an object")
        node = child
    node[parts[-1]] = value


def load_config(path: Optional[str], overrides: Sequence[str] = ()) -> RunConfig:
    if not path:
        raise ConfigError("--config is required")
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise FileAccessError(f"cannot read config {path}: {exc.strerror or exc}", path=path)
    try:
        doc = json.loads(text)
    except ValueError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}", path=path)
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must be a JSON object", path=path)
    for assignment in overrides:
        apply_override(doc, assignment)
    try:
        return RunConfig.model_validate(doc)
    except ValidationError as exc:
        problems = "; ".join(f"{'.'.join(str(p) for p in e['loc'])}: {e['msg']}" for e in exc.errors())
        raise ConfigError(f"config {path} is invalid: {problems}", path=path)


def resolve_window(config: RunConfig, settings: Settings) -> Tuple[float, float]:
    """默认值 < 配置文件 < CFWP_WINDOW"""
    if settings.window_overridden():
        return settings.window_bounds
    if config.window is not None:
        return tuple(config.window)
    return DEFAULT_WINDOW


def resolve_options(config: RunConfig, args: argparse.Namespace, settings: Settings) -> SolverOptions:
    solver = config.solver
    rel_tol = solver.rel_tol if "rel_tol" in solver.model_fields_set else settings.rel_tol
    if args.tol is not None:
        rel_tol = args.tol
    try:
        return solver.model_copy(update={"rel_tol": SolverOptions(rel_tol=rel_tol).rel_tol})
    except ValidationError as exc:
        raise ConfigError(f"invalid tolerance {rel_tol!r}: {exc.errors()[0]['msg']}")


def _geometry(config: RunConfig, settings: Settings) -> CfwpGeometry:
    geom = GeometryService.from_config(config.geometry, resolve_window(config, settings))
    logger.info("geometry %s loaded (m=%d, window %g..%g)", geom.name, geom.m, *geom.window)
    return geom


def _emit(doc: Any, out: Optional[str]) -> None:
    if out:
        export.write_json(out, doc)
        logger.info("report written to %s", out)
    else:
        sys.stdout.write(export.dumps(doc))


def _out_path(args: argparse.Namespace, config: RunConfig) -> Optional[str]:
    return args.out or config.output.out


def _csv_dir(args: argparse.Namespace, config: RunConfig) -> Optional[str]:
    return args.csv_dir or config.output.csv_dir


# 子命令
def cmd_check(args: argparse.Namespace, settings: Settings) -> int:
    config = load_config(args.config, args.set)
    geom = _geometry(config, settings)
    reports = HypothesisService.check_all(geom, resolve_options(config, args, settings).probe_x)
    aggregate = HypothesisService.aggregate(reports)
    _emit({"geometry": geom.descriptor(), "hypotheses": reports, "aggregate": aggregate}, _out_path(args, config))
    logger.info("check finished: %s", aggregate)
    return {"holds": EXIT_OK, "fails": EXIT_FINDING}.get(aggregate, EXIT_INCONCLUSIVE)


def cmd_solve_mode(args: argparse.Namespace, settings: Settings) -> int:
    config = load_config(args.config, args.set)
    if config.mode is None:
        raise ConfigError("solve-mode needs a 'mode' block")
    geom = _geometry(config, settings)
    service = VerdictService(resolve_options(config, args, settings))
    trajectories: List = []
    verdict = service.classify_mode(geom, config.mode, keep=trajectories)
    _emit(verdict, _out_path(args, config))
    csv_dir = _csv_dir(args, config)
    if csv_dir:
        for i, traj in enumerate(trajectories):
            export.write_text(Path(csv_dir) / f"trajectory_{i}.csv", export.trajectory_csv(traj))
        logger.info("%d trajectory file(s) written to %s", len(trajectories), csv_dir)
    logger.info("solve-mode finished: %s", verdict.verdict)
    return {"no-L2": EXIT_OK, "candidate-L2": EXIT_FINDING}.get(verdict.verdict, EXIT_INCONCLUSIVE)


def cmd_sweep(args: argparse.Namespace, settings: Settings) -> int:
    config = load_config(args.config, args.set)
    if config.sweep is None:
        raise ConfigError("sweep needs a 'sweep' block")
    service = VerdictService(resolve_options(config, args, settings))
    jobs = args.jobs if args.jobs is not None else settings.jobs
    report = service.sweep(config.geometry, config.sweep, resolve_window(config, settings), jobs)
    _emit(report.to_document(), _out_path(args, config))
    counts = report.summary.counts
    if counts["candidate-L2"]:
        return EXIT_FINDING
    return EXIT_OK if counts["no-L2"] == report.summary.total else EXIT_INCONCLUSIVE


def cmd_lemmas(args: argparse.Namespace, settings: Settings) -> int:
    config = load_config(args.config, args.set)
    if config.mode is None:
        raise ConfigError("lemmas needs a 'mode' block")
    geom = _geometry(config, settings)
    report = VerdictService(resolve_options(config, args, settings)).verify_identities(geom, config.mode)
    _emit(report, _out_path(args, config))
    logger.info("lemmas finished: %s", "all passed" if report.all_passed else "failures present")
    return EXIT_OK if report.all_passed else EXIT_FINDING


def cmd_reparam(args: argparse.Namespace, settings: Settings) -> int:
    config = load_config(args.config, args.set)
    geom = _geometry(config, settings)
    samples = config.reparam.samples
    if geom.gamma is None:
        s = geom.probe_grid(samples)
        alpha, beta = geom.alpha(s), geom.beta(s)
    else:
        result = GeometryService.reparametrize(geom)
        s, alpha, beta = result.table(samples)
        try:
            limits = GeometryService.completion_limits(result.geometry)
            logger.info("completion limits alpha/s -> %.6g, beta/s -> %.6g (smooth: %s)", *limits)
        except CfwpError as exc:
            logger.warning("completion limits unavailable: %s", exc.detail)
    text = export.reparam_csv(s, alpha, beta)
    out = _out_path(args, config)
    if out:
        export.write_text(out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_schema(args: argparse.Namespace, settings: Settings) -> int:
    _emit(RunConfig.model_json_schema(by_alias=True), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cfwp", description="Radial Dirac-mode analysis on CFWP metrics")
    commands = parser.add_subparsers(dest="command", required=True)
    handlers = {
        "check": (cmd_check, "evaluate the vanishing hypotheses"),
        "solve-mode": (cmd_solve_mode, "classify a single mode"),
        "sweep": (cmd_sweep, "classify a grid of modes"),
        "lemmas": (cmd_lemmas, "run the identity suite for one mode"),
        "reparam": (cmd_reparam, "tabulate the conformally reparametrized profiles"),
        "schema": (cmd_schema, "print the run-config JSON schema"),
    }
    for name, (handler, help_text) in handlers.items():
        sub = commands.add_parser(name, help=help_text)
        sub.set_defaults(handler=handler)
        sub.add_argument("--out", help="write the report here instead of stdout")
        sub.add_argument("--log-level", help="override CFWP_LOG_LEVEL")
        if name == "schema":
            continue
        sub.add_argument("--config", help="run config (JSON)")
        sub.add_argument("--csv-dir", help="directory for trajectory CSV files")
        sub.add_argument("--jobs", type=int, help="concurrent mode classifications")
        sub.add_argument("--tol", type=float, help="relative integration tolerance")
        sub.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                         help="override a config entry, e.g. --set mode.lambda=2")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        settings = Settings()
    except ValidationError as exc:
        configure_logging("INFO")
        logger.error("invalid CFWP_* environment: %s", exc.errors()[0]["msg"])
        return EXIT_CONFIG
    configure_logging(args.log_level or settings.log_level)
    if getattr(args, "jobs", None) is not None and args.jobs < 1:
        logger.error("--jobs must be >= 1")
        return EXIT_CONFIG
    logger.info("cfwp %s started", args.command)
    try:
        return args.handler(args, settings)
    except CfwpError as exc:
        logger.error("%s: %s", type(exc).__name__, exc.detail)
        if exc.exit_code is not None:
            return exc.exit_code
        # 配置内容引起的计算前错误（表达式、参数）按配置错误处理
        return EXIT_CONFIG if exc.status_code == 422 else EXIT_INCONCLUSIVE
