from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .config import DegreeConfig, TimeConfig
from .errors import ConfigurationError, HDGError
from .hdg_assembly import FieldState, HDGDiscretization
from .mesh import Mesh, build_uniform_square
from .problems import ManufacturedProblem
from .time_stepper import integrate

logger = logging.getLogger(__name__)

CSV_COLUMNS = [
    "variant",
    "k",
    "n",
    "h",
    "dt",
    "err_q",
    "rate_q",
    "err_u",
    "rate_u",
    "err_ustar",
    "rate_ustar",
    "walltime_s",
    "factorizations",
    "picard_total",
]


class ErrorNorms(NamedTuple):
    e_q: float
    e_u: float
    e_ustar: float


def error_norms(
    disc: HDGDiscretization,
    state: FieldState,
    problem: ManufacturedProblem,
    t: Optional[float] = None,
) -> ErrorNorms:
    """L2 errors of q_h, u_h and u_h* with the over-integrated element rule."""
    t = state.t if t is None else t
    x, y = disc.data_points[..., 0], disc.data_points[..., 1]
    w = disc.data_weights
    phi = disc.data_phi
    nk, nl = disc.nk, disc.nl

    qx = np.einsum("eqi,ei->eq", phi[:, :, :nk], state.q[:, :nk])
    qy = np.einsum("eqi,ei->eq", phi[:, :, :nk], state.q[:, nk:])
    uh = np.einsum("eqi,ei->eq", phi[:, :, :nl], state.u)
    us = np.einsum("eqi,ei->eq", phi, state.ustar)

    u_exact = np.broadcast_to(problem.u(x, y, t), w.shape)
    q_exact_x, q_exact_y = problem.q(x, y, t)
    e_q = np.sum(w * ((np.broadcast_to(q_exact_x, w.shape) - qx) ** 2 + (np.broadcast_to(q_exact_y, w.shape) - qy) ** 2))
    e_u = np.sum(w * (u_exact - uh) ** 2)
    e_s = np.sum(w * (u_exact - us) ** 2)
    return ErrorNorms(math.sqrt(e_q), math.sqrt(e_u), math.sqrt(e_s))


@dataclass
class LevelResult:
    n: Optional[int]
    h: float
    dt: float
    steps: int
    errors: ErrorNorms
    walltime_s: float
    factorizations: int
    picard_total: int
    max_picard: int
    max_flux_residual: float
    snapshots: List[Tuple[float, ErrorNorms]] = field(default_factory=list)


def convergence_rates(errors: Sequence[float], sizes: Sequence[float]) -> List[float]:
    """log(e_{i-1}/e_i) / log(h_{i-1}/h_i); log2 of the error ratio when h halves. NaN for the first level."""
    rates = [math.nan] if errors else []
    for i in range(1, len(errors)):
        e0, e1, h0, h1 = errors[i - 1], errors[i], sizes[i - 1], sizes[i]
        if e0 > 0 and e1 > 0 and h0 != h1:
            rates.append(math.log(e0 / e1) / math.log(h0 / h1))
        else:
            rates.append(math.nan)
    return rates


@dataclass
class SweepResult:
    variant: str
    k: int
    levels: List[LevelResult] = field(default_factory=list)
    failures: Dict[str, str] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.failures

    @property
    def frame(self) -> pd.DataFrame:
        if not self.levels:
            return pd.DataFrame(columns=CSV_COLUMNS)
        sizes = [lvl.h for lvl in self.levels]
        df = pd.DataFrame(
            {
                "variant": self.variant,
                "k": self.k,
                "n": pd.array([lvl.n for lvl in self.levels], dtype="Int64"),
                "h": sizes,
                "dt": [lvl.dt for lvl in self.levels],
                "err_q": [lvl.errors.e_q for lvl in self.levels],
                "err_u": [lvl.errors.e_u for lvl in self.levels],
                "err_ustar": [lvl.errors.e_ustar for lvl in self.levels],
                "walltime_s": [lvl.walltime_s for lvl in self.levels],
                "factorizations": [lvl.factorizations for lvl in self.levels],
                "picard_total": [lvl.picard_total for lvl in self.levels],
            }
        )
        for name in ("q", "u", "ustar"):
            df[f"rate_{name}"] = convergence_rates(df[f"err_{name}"].tolist(), sizes)
        return df[CSV_COLUMNS]


def _run_level(
    mesh: Mesh,
    config: DegreeConfig,
    time_config: TimeConfig,
    problem: ManufacturedProblem,
    workers: int = 1,
) -> LevelResult:
    start = time.perf_counter()
    disc = HDGDiscretization(mesh, config, workers=workers)
    trajectory = integrate(mesh, config, time_config, problem, disc=disc)
    final = trajectory.final
    errors = error_norms(disc, final, problem, time_config.T)
    snapshots = [(s.t, error_norms(disc, s, problem)) for s in trajectory.states[1:-1]]
    elapsed = time.perf_counter() - start
    return LevelResult(
        n=mesh.subdivisions or None,
        h=mesh.h,
        dt=trajectory.dt,
        steps=trajectory.steps,
        errors=errors,
        walltime_s=elapsed,
        factorizations=trajectory.factorizations,
        picard_total=trajectory.picard_total,
        max_picard=trajectory.max_iterations,
        max_flux_residual=trajectory.max_flux_residual,
        snapshots=snapshots,
    )


def run_sweep(
    variant: str,
    k: int,
    levels: Sequence[int],
    time_config: TimeConfig,
    problem: ManufacturedProblem,
    mesh: Optional[Mesh] = None,
    workers: int = 1,
) -> SweepResult:
    """Integrate the problem on each refinement level and collect errors at T.

    With ``mesh`` given, that mesh is the only level and ``levels`` is
    ignored. Failed levels are recorded in ``failures`` and the sweep moves
    on. The ``workers`` budget is split between concurrent levels and the
    element assembly inside each level.
    """
    config = DegreeConfig(variant, k)
    levels = list(levels)
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ConfigurationError(f"levels must be strictly increasing, got {levels}")
    result = SweepResult(variant=config.variant, k=config.k)

    jobs: List[Tuple[str, Mesh]] = []
    if mesh is not None:
        if levels:
            logger.warning("levels %s ignored; sweeping the given mesh only", levels)
        jobs.append(("mesh-file", mesh))
    else:
        for n in levels:
            jobs.append((str(n), build_uniform_square(n)))
    if not jobs:
        return result

    level_workers = max(1, min(workers, len(jobs)))
    element_workers = max(1, workers // level_workers)

    def run(job: Tuple[str, Mesh]) -> Union[LevelResult, HDGError]:
        label, level_mesh = job
        try:
            return _run_level(level_mesh, config, time_config, problem, workers=element_workers)
        except HDGError as exc:
            return exc

    if level_workers > 1:
        with ThreadPoolExecutor(max_workers=level_workers) as pool:
            outcomes = list(pool.map(run, jobs))
    else:
        outcomes = [run(job) for job in jobs]

    for (label, _), outcome in zip(jobs, outcomes):
        if isinstance(outcome, HDGError):
            result.failures[label] = str(outcome)
            logger.warning("level %s failed: %s", label, outcome)
            continue
        result.levels.append(outcome)
        e = outcome.errors
        logger.info(
            "%s level %s: h=%.4e dt=%.4e err_q=%.3e err_u=%.3e err_ustar=%.3e (%.2fs, %d inner iterations)",
            config.label(),
            label,
            outcome.h,
            outcome.dt,
            e.e_q,
            e.e_u,
            e.e_ustar,
            outcome.walltime_s,
            outcome.picard_total,
        )
    return result


def emit_csv(result: SweepResult, path: Union[str, Path]) -> None:
    result.frame.to_csv(path, index=False, float_format="%.5e", na_rep="", lineterminator="\n")


def emit_gnuplot(result: SweepResult, path: Union[str, Path]) -> None:
    """Whitespace-separated columns h err_q err_u err_ustar for gnuplot's ``plot ... using``."""
    df = result.frame
    data = df[["h", "err_q", "err_u", "err_ustar"]].to_numpy(dtype=float)
    header = f"{result.variant} k={result.k}\nh err_q err_u err_ustar"
    np.savetxt(path, data, fmt="%.6e", header=header)


def emit_snapshots(result: SweepResult) -> pd.DataFrame:
    rows = []
    for lvl in result.levels:
        for t, e in lvl.snapshots:
            rows.append({"n": lvl.n, "t": t, "err_q": e.e_q, "err_u": e.e_u, "err_ustar": e.e_ustar})
    return pd.DataFrame(rows, columns=["n", "t", "err_q", "err_u", "err_ustar"])
