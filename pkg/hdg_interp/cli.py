"""Command-line entry point: ``hdg-interp sweep ...``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from .config import DegreeConfig, Settings, TimeConfig, configure_logging, get_settings, load_config_file
from .errors import ConfigurationError, MeshIntegrityError
from .mesh import read_mesh_file
from .problems import get_problem
from .study import emit_csv, emit_gnuplot, emit_snapshots, run_sweep

logger = logging.getLogger(__name__)

DEFAULTS: Dict[str, str] = {
    "variant": "A",
    "k": "0",
    "levels": "2,4,8,16,32",
    "dt_policy": "h",
    "problem": "chaffee_infante",
    "custom": "",
    "ic": "l2",
    "t": "1.0",
    "out": "sweep.csv",
    "newton": "false",
    "tol": "1e-10",
    "max_iter": "50",
    "mesh_file": "",
    "db": "",
    "plot_data": "",
    "snapshots": "",
    "log_level": "",
}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off", ""}


def _float_list(raw: str) -> List[float]:
    return [float(v) for v in raw.replace(" ", "").split(",") if v]


def _int_list(raw: str) -> List[int]:
    try:
        return [int(v) for v in raw.replace(" ", "").split(",") if v]
    except ValueError as exc:
        raise ConfigurationError(f"levels must be a comma-separated list of integers, got {raw!r}") from exc


def _flag(raw: str) -> bool:
    value = raw.strip().lower()
    if value in _TRUE:
        return True
    if value in _FALSE:
        return False
    raise ConfigurationError(f"expected a boolean, got {raw!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hdg-interp", description="Interpolatory HDG convergence studies")
    sub = parser.add_subparsers(dest="command", required=True)

    sweep = sub.add_parser("sweep", help="run a convergence sweep over mesh levels")
    sweep.add_argument("--variant", choices=["A", "B", "C", "a", "b", "c"])
    sweep.add_argument("--k", type=int)
    sweep.add_argument("--levels", help="comma-separated subdivisions per side, e.g. 2,4,8")
    sweep.add_argument("--dt-policy", dest="dt_policy", help="h, h2 or fixed:VAL")
    sweep.add_argument("--problem", choices=["chaffee_infante", "linear_poly", "linear_sine", "custom"])
    sweep.add_argument("--custom", help="module:attribute of a ManufacturedProblem factory (with --problem custom)")
    sweep.add_argument("--ic", choices=["l2", "elliptic"])
    sweep.add_argument("--T", dest="t", type=float)
    sweep.add_argument("--out")
    sweep.add_argument("--newton", action="store_const", const="true")
    sweep.add_argument("--tol", type=float)
    sweep.add_argument("--max-iter", dest="max_iter", type=int)
    sweep.add_argument("--mesh-file", dest="mesh_file")
    sweep.add_argument("--config", help="file of key = value lines mirroring the flags")
    sweep.add_argument(
        "--db",
        nargs="?",
        const="true",
        help="also record the sweep in this SQLite file (bare flag: the HDG_DB_PATH database)",
    )
    sweep.add_argument("--plot-data", dest="plot_data", help="gnuplot data file with h and the three errors")
    sweep.add_argument("--snapshots", help="comma-separated intermediate times to report errors at")
    sweep.add_argument("--log-level", dest="log_level")
    return parser


def resolve_options(args: argparse.Namespace, file_values: Dict[str, str]) -> Dict[str, str]:
    """Merge defaults, config-file values and flags, in that order."""
    options = dict(DEFAULTS)
    for key, value in file_values.items():
        if key not in DEFAULTS:
            raise ConfigurationError(f"unknown config key {key!r}")
        options[key] = value
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            options[key] = str(value)
    levels_given = "levels" in file_values or getattr(args, "levels", None) is not None
    if options["mesh_file"] and levels_given:
        raise ConfigurationError("--levels and --mesh-file are mutually exclusive")
    return options


def _db_target(raw: str, settings: Settings) -> Optional[Path]:
    value = raw.strip()
    if value.lower() in _FALSE:
        return None
    if value.lower() in _TRUE:
        return settings.db_path
    return Path(value)


def run_sweep_command(options: Dict[str, str], settings: Settings) -> int:
    config = DegreeConfig(options["variant"], int(options["k"]))
    T = float(options["t"])
    time_config = TimeConfig(
        T=T,
        dt_policy=options["dt_policy"],
        tol=float(options["tol"]),
        max_iter=int(options["max_iter"]),
        ic_mode=options["ic"],
        newton=_flag(options["newton"]),
        output_times=tuple(_float_list(options["snapshots"])),
    )
    problem = get_problem(options["problem"], T, options["custom"])
    mesh = read_mesh_file(options["mesh_file"]) if options["mesh_file"] else None
    levels = _int_list(options["levels"]) if mesh is None else []
    db_path = _db_target(options["db"], settings)

    logger.info(
        "sweep %s on %s, levels=%s, dt policy %s, ic %s, T=%g",
        config.label(),
        problem.name,
        levels if mesh is None else options["mesh_file"],
        time_config.dt_policy,
        time_config.ic_mode,
        T,
    )
    result = run_sweep(config.variant, config.k, levels, time_config, problem, mesh=mesh, workers=settings.threads)

    out = Path(options["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    emit_csv(result, out)
    if options["plot_data"]:
        emit_gnuplot(result, options["plot_data"])
    if time_config.output_times:
        snapshots = out.with_name(f"{out.stem}_snapshots.csv")
        emit_snapshots(result).to_csv(snapshots, index=False, float_format="%.5e", lineterminator="\n")
    if db_path is not None:
        from .db import get_engine, record_sweep

        run_id = record_sweep(
            result,
            get_engine(db_path),
            problem=problem.name,
            dt_policy=time_config.dt_policy,
            ic_mode=time_config.ic_mode,
            T=T,
        )
        logger.info("recorded sweep as run %d in %s", run_id, db_path)

    if not result.ok:
        logger.error("%d level(s) failed: %s", len(result.failures), ", ".join(result.failures))
        return 1
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        settings = get_settings()
        file_values = load_config_file(Path(args.config)) if args.config else {}
        options = resolve_options(args, file_values)
    except ConfigurationError as exc:
        parser.error(str(exc))
    configure_logging(options["log_level"] or settings.log_level)

    try:
        return run_sweep_command(options, settings)
    except (ConfigurationError, MeshIntegrityError, ValueError) as exc:
        print(f"hdg-interp: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
