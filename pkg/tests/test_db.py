from __future__ import annotations

import math

import pandas as pd
import pytest
from sqlalchemy import inspect, select

from hdg_interp.db import get_engine, init_db, load_sweep, record_sweep, sweep_runs
from hdg_interp.study import CSV_COLUMNS, ErrorNorms, LevelResult, SweepResult


def level(n, e_u):
    return LevelResult(
        n=n,
        h=math.sqrt(2.0) / n if n else 0.35,
        dt=1.0 / n if n else 0.25,
        steps=n or 4,
        errors=ErrorNorms(2.0 * e_u, e_u, e_u / 2.0),
        walltime_s=0.01,
        factorizations=1,
        picard_total=3 * (n or 4),
        max_picard=3,
        max_flux_residual=0.0,
    )


@pytest.fixture
def engine(tmp_path):
    return get_engine(tmp_path / "nested" / "results.db")


def test_init_db_creates_tables(engine, tmp_path):
    init_db(engine)
    assert (tmp_path / "nested" / "results.db").exists()
    assert {"sweep_runs", "sweep_levels"} <= set(inspect(engine).get_table_names())


def test_record_and_load_round_trip(engine):
    result = SweepResult("A", 0, levels=[level(2, 1e-2), level(4, 2.5e-3), level(8, 6.25e-4)])
    run_id = record_sweep(result, engine, problem="chaffee_infante", dt_policy="h", ic_mode="l2_projection", T=1.0)
    loaded = load_sweep(run_id, engine)
    assert list(loaded.columns) == CSV_COLUMNS
    assert list(loaded["n"]) == [2, 4, 8]
    assert loaded["rate_u"].isna().iloc[0]
    assert list(loaded["rate_u"].iloc[1:]) == pytest.approx([2.0, 2.0])
    pd.testing.assert_series_equal(loaded["err_q"], result.frame["err_q"], check_names=True)

    with engine.begin() as conn:
        run = conn.execute(select(sweep_runs).where(sweep_runs.c.id == run_id)).mappings().one()
    assert run["variant"] == "A" and run["problem"] == "chaffee_infante"
    assert run["failures"] == 0
    assert run["created_at"] is not None


def test_runs_are_kept_apart(engine):
    first = record_sweep(SweepResult("B", 1, levels=[level(2, 1e-3)]), engine)
    second = record_sweep(
        SweepResult("C", 2, levels=[level(2, 1e-4), level(4, 1e-5)], failures={"8": "diverged"}), engine
    )
    assert second == first + 1
    assert len(load_sweep(first, engine)) == 1
    loaded = load_sweep(second, engine)
    assert set(loaded["variant"]) == {"C"}
    assert len(loaded) == 2
    with engine.begin() as conn:
        assert conn.execute(select(sweep_runs.c.failures).where(sweep_runs.c.id == second)).scalar_one() == 1


def test_empty_and_unknown_runs(engine):
    run_id = record_sweep(SweepResult("A", 0), engine)
    assert load_sweep(run_id, engine).empty
    assert load_sweep(run_id + 10, engine).empty


def test_level_without_subdivisions(engine):
    run_id = record_sweep(SweepResult("A", 0, levels=[level(None, 1e-2)]), engine)
    loaded = load_sweep(run_id, engine)
    assert loaded["n"].isna().iloc[0]


def test_default_engine_follows_environment(monkeypatch, tmp_path):
    db = tmp_path / "env" / "runs.db"
    monkeypatch.setenv("HDG_DB_PATH", str(db))
    run_id = record_sweep(SweepResult("A", 1, levels=[level(2, 4e-3), level(4, 1e-3)]))
    assert db.exists()
    loaded = load_sweep(run_id, get_engine(db))
    assert list(loaded["n"]) == [2, 4]
    assert list(loaded["err_u"]) == pytest.approx([4e-3, 1e-3])
    pd.testing.assert_frame_equal(load_sweep(run_id), loaded)
