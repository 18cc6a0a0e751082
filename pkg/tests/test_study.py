from __future__ import annotations

import logging
import math
import re

import numpy as np
import pandas as pd
import pytest

from hdg_interp import study
from hdg_interp.config import TimeConfig
from hdg_interp.errors import ConfigurationError
from hdg_interp.hdg_assembly import HDGDiscretization
from hdg_interp.mesh import Mesh, build_uniform_square
from hdg_interp.problems import (
    ManufacturedProblem,
    chaffee_infante,
    get_problem,
    linear_poly,
    linear_sine,
)
from hdg_interp.study import (
    CSV_COLUMNS,
    convergence_rates,
    emit_csv,
    emit_gnuplot,
    emit_snapshots,
    error_norms,
    run_sweep,
)
from hdg_interp.time_stepper import NO_REACTION

HEADER = "variant,k,n,h,dt,err_q,rate_q,err_u,rate_u,err_ustar,rate_ustar,walltime_s,factorizations,picard_total"


def nan_problem(T: float = 1.0) -> ManufacturedProblem:
    def nan_field(x, y, t):
        return np.full_like(np.asarray(x, dtype=float), np.nan)

    return ManufacturedProblem(
        "nan",
        nan_field,
        nan_field,
        lambda x, y, t: (nan_field(x, y, t), nan_field(x, y, t)),
        nan_field,
        NO_REACTION,
        T,
    )


@pytest.mark.parametrize("factory", [chaffee_infante, linear_sine, linear_poly])
def test_manufactured_problem_is_self_consistent(rng, factory):
    problem = factory()
    x, y = rng.uniform(0.05, 0.95, size=(2, 100))
    t = rng.uniform(0.05, 0.95, size=100)
    eps = 1e-5

    residual = problem.u_t(x, y, t) - problem.laplacian(x, y, t) + problem.nonlinearity.F(problem.u(x, y, t))
    np.testing.assert_allclose(residual - problem.source(x, y, t), 0.0, atol=1e-12)

    fd_t = (problem.u(x, y, t + eps) - problem.u(x, y, t - eps)) / (2.0 * eps)
    np.testing.assert_allclose(problem.u_t(x, y, t), fd_t, atol=1e-8)

    qx, qy = problem.q(x, y, t)
    fd_x = (problem.u(x + eps, y, t) - problem.u(x - eps, y, t)) / (2.0 * eps)
    fd_y = (problem.u(x, y + eps, t) - problem.u(x, y - eps, t)) / (2.0 * eps)
    np.testing.assert_allclose(qx, -fd_x, atol=1e-8)
    np.testing.assert_allclose(qy, -fd_y, atol=1e-8)

    d = 1e-3
    fd_lap = (
        problem.u(x + d, y, t) + problem.u(x - d, y, t) + problem.u(x, y + d, t) + problem.u(x, y - d, t)
        - 4.0 * problem.u(x, y, t)
    ) / d**2
    np.testing.assert_allclose(problem.laplacian(x, y, t), fd_lap, atol=1e-4)


def test_problems_vanish_on_the_boundary():
    s = np.linspace(0.0, 1.0, 11)
    for problem in (chaffee_infante(), linear_sine(), linear_poly()):
        for x, y in ((s, 0 * s), (s, 0 * s + 1), (0 * s, s), (0 * s + 1, s)):
            np.testing.assert_allclose(problem.u(x, y, 0.7), 0.0, atol=1e-15)


def test_problem_lookup():
    assert get_problem("chaffee_infante").name == "chaffee_infante"
    assert get_problem("linear_sine", T=0.5).T == 0.5
    custom = get_problem("custom", T=2.0, custom="hdg_interp.problems:linear_poly")
    assert custom.name == "linear_poly" and custom.T == 2.0
    with pytest.raises(ConfigurationError):
        get_problem("allen_cahn")


@pytest.mark.parametrize(
    "spec", ["", "no_colon", "hdg_interp.missing_module:factory", "hdg_interp.problems:nope", "math:sqrt"]
)
def test_bad_custom_problem(spec):
    with pytest.raises(ConfigurationError):
        get_problem("custom", custom=spec)


def test_convergence_rates():
    rates = convergence_rates([1.0, 0.25, 0.0625, 0.0], [1.0, 0.5, 0.25, 0.125])
    assert math.isnan(rates[0])
    assert rates[1] == pytest.approx(2.0)
    assert rates[2] == pytest.approx(2.0)
    assert math.isnan(rates[3])
    assert convergence_rates([], []) == []


def test_error_norms_of_zero_state(make_disc):
    disc = make_disc("B", 1, 4)
    zero = disc.zero_state()
    assert error_norms(disc, zero, chaffee_infante(), t=0.0) == (0.0, 0.0, 0.0)
    e = error_norms(disc, zero, linear_poly(), t=0.0)
    # |bubble|_L2 = 1/30 and |grad bubble|_L2 = 1/sqrt(45) on the unit square
    assert e.e_u == pytest.approx(1.0 / 30.0, rel=1e-12)
    assert e.e_ustar == pytest.approx(1.0 / 30.0, rel=1e-12)
    assert e.e_q == pytest.approx(1.0 / math.sqrt(45.0), rel=1e-12)


def test_linear_sweep_rates():
    result = run_sweep("A", 1, [4, 8], TimeConfig(T=1.0, dt_policy="h2"), linear_sine())
    assert result.ok
    frame = result.frame
    assert list(frame["n"]) == [4, 8]
    assert frame["rate_q"].iloc[1] == pytest.approx(2.0, abs=0.4)
    assert frame["rate_u"].iloc[1] == pytest.approx(3.0, abs=0.4)
    assert frame["rate_ustar"].iloc[1] == pytest.approx(3.0, abs=0.4)
    assert list(frame["factorizations"]) == [1, 1]
    assert [lvl.picard_total for lvl in result.levels] == [lvl.steps for lvl in result.levels]
    assert list(frame["dt"]) == pytest.approx([1.0 / 16.0, 1.0 / 64.0])


def test_empty_sweep(tmp_path):
    result = run_sweep("A", 0, [], TimeConfig(), chaffee_infante())
    assert result.ok and result.levels == []
    path = tmp_path / "empty.csv"
    emit_csv(result, path)
    assert path.read_text() == HEADER + "\n"


@pytest.mark.parametrize("levels", [[4, 2], [2, 2, 4]])
def test_levels_must_increase(levels):
    with pytest.raises(ConfigurationError):
        run_sweep("A", 0, levels, TimeConfig(), chaffee_infante())


def test_invalid_configuration_is_rejected_before_running():
    with pytest.raises(ConfigurationError):
        run_sweep("C", 0, [2], TimeConfig(), chaffee_infante())


def test_failed_levels_are_recorded():
    result = run_sweep("A", 0, [1, 2], TimeConfig(), nan_problem())
    assert not result.ok
    assert sorted(result.failures) == ["1", "2"]
    assert "non-finite" in result.failures["1"]
    assert result.frame.empty


def test_csv_format(tmp_path):
    result = run_sweep("A", 0, [2, 4, 8], TimeConfig(T=0.5), linear_sine())
    path = tmp_path / "sweep.csv"
    emit_csv(result, path)
    raw = path.read_bytes()
    assert b"\r" not in raw
    lines = raw.decode().splitlines()
    assert lines[0] == HEADER
    assert len(lines) == 4
    first = lines[1].split(",")
    assert first[:3] == ["A", "0", "2"]
    assert first[CSV_COLUMNS.index("rate_q")] == ""
    assert re.fullmatch(r"\d\.\d{5}e[+-]\d{2}", first[CSV_COLUMNS.index("err_u")])

    frame = pd.read_csv(path)
    assert list(frame.columns) == CSV_COLUMNS
    assert frame["rate_u"].isna().iloc[0]
    assert frame["rate_u"].notna().iloc[1:].all()
    for name in ("q", "u", "ustar"):
        errors = frame[f"err_{name}"].to_numpy()
        recomputed = np.log2(errors[:-1] / errors[1:])
        np.testing.assert_allclose(frame[f"rate_{name}"].to_numpy()[1:], recomputed, rtol=0, atol=1e-4)


def test_single_level_csv(tmp_path):
    result = run_sweep("B", 1, [2], TimeConfig(T=0.25), linear_sine())
    path = tmp_path / "one.csv"
    emit_csv(result, path)
    assert len(path.read_text().splitlines()) == 2


def test_sweeps_are_deterministic():
    config = TimeConfig(T=0.5)
    a = run_sweep("B", 1, [2, 4], config, chaffee_infante()).frame
    b = run_sweep("B", 1, [2, 4], config, chaffee_infante()).frame
    c = run_sweep("B", 1, [2, 4], config, chaffee_infante(), workers=2).frame
    columns = ["err_q", "err_u", "err_ustar", "rate_q", "rate_u", "rate_ustar", "picard_total"]
    pd.testing.assert_frame_equal(a[columns], b[columns])
    pd.testing.assert_frame_equal(a[columns], c[columns])


def test_sweep_on_explicit_mesh():
    square = build_uniform_square(4)
    mesh = Mesh.from_arrays(np.array(square.vertices), np.array(square.triangles))
    result = run_sweep("A", 0, [], TimeConfig(T=0.5), linear_sine(), mesh=mesh)
    assert result.ok
    frame = result.frame
    assert len(frame) == 1
    assert frame["n"].isna().iloc[0]
    reference = run_sweep("A", 0, [4], TimeConfig(T=0.5), linear_sine()).frame
    assert frame["err_u"].iloc[0] == pytest.approx(reference["err_u"].iloc[0], rel=1e-10)


def test_levels_beside_explicit_mesh_are_ignored_with_a_warning(caplog):
    with caplog.at_level(logging.WARNING, logger="hdg_interp.study"):
        result = run_sweep("A", 0, [2, 4], TimeConfig(T=0.5), linear_sine(), mesh=build_uniform_square(2))
    assert len(result.levels) == 1
    assert result.levels[0].n == 2
    assert any("ignored" in record.getMessage() for record in caplog.records)


@pytest.mark.parametrize("levels, workers, expected", [([4], 4, [4]), ([2, 4], 4, [2, 2]), ([2, 4], 1, [1, 1])])
def test_worker_budget_reaches_assembly(monkeypatch, levels, workers, expected):
    seen = []

    class RecordingDiscretization(HDGDiscretization):
        def __init__(self, mesh, config, workers=None):
            seen.append(workers)
            super().__init__(mesh, config, workers=workers)

    monkeypatch.setattr(study, "HDGDiscretization", RecordingDiscretization)
    threaded = run_sweep("A", 1, levels, TimeConfig(T=0.25), linear_sine(), workers=workers)
    assert sorted(seen) == expected
    monkeypatch.undo()
    serial = run_sweep("A", 1, levels, TimeConfig(T=0.25), linear_sine())
    columns = ["err_q", "err_u", "err_ustar"]
    pd.testing.assert_frame_equal(threaded.frame[columns], serial.frame[columns], rtol=1e-12)


def test_gnuplot_output(tmp_path):
    result = run_sweep("A", 0, [2, 4], TimeConfig(T=0.5), linear_sine())
    path = tmp_path / "sweep.dat"
    emit_gnuplot(result, path)
    assert path.read_text().startswith("# A k=0")
    data = np.loadtxt(path)
    assert data.shape == (2, 4)
    np.testing.assert_allclose(data[:, 2], result.frame["err_u"], rtol=1e-6)


def test_snapshots():
    result = run_sweep("A", 0, [2, 4], TimeConfig(T=1.0, output_times=(0.5,)), chaffee_infante())
    frame = emit_snapshots(result)
    assert list(frame.columns) == ["n", "t", "err_q", "err_u", "err_ustar"]
    assert list(frame["n"]) == [2, 4]
    assert list(frame["t"]) == pytest.approx([0.5, 0.5])
    assert (frame["err_u"] > 0).all()


def finest_rates(frame):
    last = frame.iloc[-1]
    return last["rate_q"], last["rate_u"], last["rate_ustar"]


def chaffee_sweep(variant, k, dt_policy):
    result = run_sweep(
        variant, k, [2, 4, 8, 16, 32], TimeConfig(T=1.0, dt_policy=dt_policy), chaffee_infante(), workers=4
    )
    assert result.ok
    assert list(result.frame["factorizations"]) == [1] * 5
    assert max(lvl.max_picard for lvl in result.levels) <= 15
    return result.frame


def within_factor(value, expected, factor=3.0):
    return expected / factor <= value <= expected * factor


@pytest.mark.slow
def test_table_lowest_order_a():
    frame = chaffee_sweep("A", 0, "h")
    rate_q, rate_u, rate_ustar = finest_rates(frame)
    assert rate_q == pytest.approx(0.98, abs=0.15)
    assert rate_u == pytest.approx(2.00, abs=0.15)
    assert rate_ustar == pytest.approx(2.00, abs=0.15)
    finest = frame.iloc[-1]
    assert within_factor(finest["err_q"], 8.12e-02)
    assert within_factor(finest["err_u"], 1.56e-03)
    assert within_factor(finest["err_ustar"], 1.56e-03)


@pytest.mark.slow
def test_table_first_order_a():
    frame = chaffee_sweep("A", 1, "h2")
    rate_q, rate_u, rate_ustar = finest_rates(frame)
    assert rate_q == pytest.approx(2.00, abs=0.15)
    assert rate_u == pytest.approx(3.00, abs=0.15)
    assert rate_ustar == pytest.approx(3.00, abs=0.15)


@pytest.mark.slow
def test_superconvergence_b():
    frame = chaffee_sweep("B", 0, "h")
    _, rate_u, rate_ustar = finest_rates(frame)
    assert rate_ustar == pytest.approx(2.00, abs=0.15)
    assert rate_u == pytest.approx(1.00, abs=0.15)
    assert within_factor(frame["err_ustar"].iloc[-1], 1.04e-03)


@pytest.mark.slow
def test_reduced_rate_c():
    frame = chaffee_sweep("C", 1, "h")
    assert finest_rates(frame)[2] == pytest.approx(2.00, abs=0.15)


@pytest.mark.slow
def test_full_rate_c():
    frame = chaffee_sweep("C", 2, "h2")
    assert finest_rates(frame)[2] == pytest.approx(4.00, abs=0.15)
    assert within_factor(frame["err_ustar"].iloc[-1], 2.47e-07)
