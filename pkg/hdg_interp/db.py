from __future__ import annotations

import math
from datetime import datetime
from pathlib import Path
from typing import Optional, Union

import pandas as pd
from sqlalchemy import (
    Column,
    DateTime,
    Float,
    ForeignKey,
    Integer,
    MetaData,
    String,
    Table,
    create_engine,
    insert,
)
from sqlalchemy.engine import Engine
from sqlalchemy.sql import select

from .config import default_db_path
from .study import SweepResult


def get_engine(path: Optional[Union[str, Path]] = None, echo: bool = False) -> Engine:
    db_path = Path(path) if path is not None else default_db_path()
    db_path.parent.mkdir(parents=True, exist_ok=True)
    return create_engine(f"sqlite:///{db_path}", echo=echo, future=True)


metadata = MetaData()

sweep_runs = Table(
    "sweep_runs",
    metadata,
    Column("id", Integer, primary_key=True),
    Column("created_at", DateTime, nullable=False, default=datetime.utcnow),
    Column("variant", String(1), nullable=False),
    Column("k", Integer, nullable=False),
    Column("problem", String(64), nullable=True),
    Column("dt_policy", String(32), nullable=True),
    Column("ic_mode", String(32), nullable=True),
    Column("T", Float, nullable=True),
    Column("failures", Integer, nullable=False, default=0),
)

sweep_levels = Table(
    "sweep_levels",
    metadata,
    Column("id", Integer, primary_key=True),
    Column("run_id", Integer, ForeignKey("sweep_runs.id"), nullable=False),
    Column("n", Integer, nullable=True),
    Column("h", Float, nullable=False),
    Column("dt", Float, nullable=False),
    Column("err_q", Float, nullable=False),
    Column("rate_q", Float, nullable=True),
    Column("err_u", Float, nullable=False),
    Column("rate_u", Float, nullable=True),
    Column("err_ustar", Float, nullable=False),
    Column("rate_ustar", Float, nullable=True),
    Column("walltime_s", Float, nullable=False),
    Column("factorizations", Integer, nullable=False),
    Column("picard_total", Integer, nullable=False),
)


def init_db(engine: Optional[Engine] = None) -> None:
    if engine is None:
        engine = get_engine()
    metadata.create_all(engine)


def _nullable(value) -> Optional[float]:
    if value is None or pd.isna(value):
        return None
    value = float(value)
    return None if math.isnan(value) else value


def record_sweep(
    result: SweepResult,
    engine: Optional[Engine] = None,
    problem: Optional[str] = None,
    dt_policy: Optional[str] = None,
    ic_mode: Optional[str] = None,
    T: Optional[float] = None,
) -> int:
    """Store a sweep and its per-level rows; returns the run id."""
    if engine is None:
        engine = get_engine()
    init_db(engine)
    frame = result.frame
    with engine.begin() as conn:
        run_id = conn.execute(
            insert(sweep_runs).values(
                variant=result.variant,
                k=result.k,
                problem=problem,
                dt_policy=dt_policy,
                ic_mode=ic_mode,
                T=T,
                failures=len(result.failures),
            )
        ).inserted_primary_key[0]
        rows = []
        for rec in frame.to_dict(orient="records"):
            rows.append(
                {
                    "run_id": run_id,
                    "n": None if pd.isna(rec["n"]) else int(rec["n"]),
                    "h": float(rec["h"]),
                    "dt": float(rec["dt"]),
                    "err_q": float(rec["err_q"]),
                    "rate_q": _nullable(rec["rate_q"]),
                    "err_u": float(rec["err_u"]),
                    "rate_u": _nullable(rec["rate_u"]),
                    "err_ustar": float(rec["err_ustar"]),
                    "rate_ustar": _nullable(rec["rate_ustar"]),
                    "walltime_s": float(rec["walltime_s"]),
                    "factorizations": int(rec["factorizations"]),
                    "picard_total": int(rec["picard_total"]),
                }
            )
        if rows:
            conn.execute(insert(sweep_levels), rows)
    return int(run_id)


def load_sweep(run_id: int, engine: Optional[Engine] = None) -> pd.DataFrame:
    """Per-level rows of one stored sweep, in the CSV column order."""
    if engine is None:
        engine = get_engine()
    init_db(engine)
    query = (
        select(
            sweep_runs.c.variant,
            sweep_runs.c.k,
            sweep_levels.c.n,
            sweep_levels.c.h,
            sweep_levels.c.dt,
            sweep_levels.c.err_q,
            sweep_levels.c.rate_q,
            sweep_levels.c.err_u,
            sweep_levels.c.rate_u,
            sweep_levels.c.err_ustar,
            sweep_levels.c.rate_ustar,
            sweep_levels.c.walltime_s,
            sweep_levels.c.factorizations,
            sweep_levels.c.picard_total,
        )
        .select_from(sweep_levels.join(sweep_runs, sweep_levels.c.run_id == sweep_runs.c.id))
        .where(sweep_runs.c.id == run_id)
        .order_by(sweep_levels.c.id)
    )
    with engine.begin() as conn:
        return pd.DataFrame(conn.execute(query).mappings().all())
