from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Protocol

import numpy as np

from .config import DegreeConfig, TimeConfig
from .errors import ConfigurationError, StepConvergenceError
from .hdg_assembly import (
    CondensedSystem,
    FieldState,
    HDGDiscretization,
    check_flux_continuity,
    condense,
    solve_condensed,
    solve_elliptic_projection,
)
from .mesh import Mesh

logger = logging.getLogger(__name__)

SpaceTimeField = Callable[[np.ndarray, np.ndarray, float], np.ndarray]


@dataclass(frozen=True)
class Nonlinearity:
    name: str
    F: Callable[[np.ndarray], np.ndarray]
    dF: Callable[[np.ndarray], np.ndarray]
    linear: bool = False


def _chaffee_infante(u: np.ndarray) -> np.ndarray:
    return u**3 - u


def _chaffee_infante_prime(u: np.ndarray) -> np.ndarray:
    return 3.0 * u**2 - 1.0


def _zero(u: np.ndarray) -> np.ndarray:
    return np.zeros_like(u)


CHAFFEE_INFANTE = Nonlinearity("chaffee_infante", _chaffee_infante, _chaffee_infante_prime)
NO_REACTION = Nonlinearity("linear", _zero, _zero, linear=True)


class Problem(Protocol):
    """What the time stepper needs from a problem definition."""

    nonlinearity: Nonlinearity

    def u(self, x: np.ndarray, y: np.ndarray, t: float) -> np.ndarray: ...

    def laplacian(self, x: np.ndarray, y: np.ndarray, t: float) -> np.ndarray: ...

    def source(self, x: np.ndarray, y: np.ndarray, t: float) -> np.ndarray: ...


@dataclass(frozen=True)
class StepReport:
    t: float
    iterations: int
    increment: float
    flux_residual: float


def initial_state(
    disc: HDGDiscretization,
    u0: Callable[[np.ndarray, np.ndarray], np.ndarray],
    mode: str = "l2_projection",
    laplacian0: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None,
    t0: float = 0.0,
) -> FieldState:
    """Initial (q_h, u_h, u-hat_h) by L2 projection or by the HDG elliptic approximation."""
    if mode in ("l2", "l2_projection"):
        u = disc.load(u0)
        uhat = disc.project_faces(u0)
        q = disc.recover_q(u, uhat)
        return disc.make_state(q, u, uhat, t0)
    if mode in ("elliptic", "elliptic_projection"):
        if laplacian0 is None:
            raise ConfigurationError("elliptic initial condition needs the Laplacian of u0")
        return solve_elliptic_projection(disc, laplacian0, t0)
    raise ConfigurationError(f"unknown initial-condition mode {mode!r}")


class CrankNicolsonStepper:
    """Crank-Nicolson in time with the interpolatory nonlinear term.

    The u-rows are multiplied by 2, so the step matrix is the steady matrix
    with sigma = 2/dt on the W_h mass block. With Picard iteration that
    matrix is condensed and factorized once; each inner iteration only
    re-evaluates F at the Lagrange nodes of u* and re-solves.
    """

    def __init__(
        self,
        disc: HDGDiscretization,
        source: SpaceTimeField,
        nonlinearity: Nonlinearity,
        dt: float,
        tol: float = 1e-10,
        max_iter: int = 50,
        newton: bool = False,
    ) -> None:
        if not dt > 0:
            raise ConfigurationError("time step must be positive")
        self.disc = disc
        self.source = source
        self.nonlinearity = nonlinearity
        self.dt = dt
        self.sigma = 2.0 / dt
        self.tol = tol
        self.max_iter = max_iter
        self.newton = newton and not nonlinearity.linear
        self.factorizations = 0
        self._system: Optional[CondensedSystem] = None
        self._load_cache: Dict[float, np.ndarray] = {}

    @property
    def system(self) -> CondensedSystem:
        if self._system is None:
            self._system = condense(self.disc, self.sigma)
            self.factorizations += self._system.factorizations
        return self._system

    def source_load(self, t: float) -> np.ndarray:
        cached = self._load_cache.get(t)
        if cached is None:
            cached = self.disc.load(lambda x, y: self.source(x, y, t))
            self._load_cache = {t: cached}
        return cached

    def step(self, state: FieldState) -> "tuple[FieldState, StepReport]":
        disc, F = self.disc, self.nonlinearity.F
        t_new = state.t + self.dt
        f_old = self.source_load(state.t)
        f_new = self.source_load(t_new)
        base = (
            self.sigma * disc.mass_u(state.u)
            - disc.u_rows(state)
            - disc.nonlinear_load(F, state.u, state.uhat)
            + f_old
            + f_new
        )

        if self.nonlinearity.linear:
            new = solve_condensed(disc, self.system, base, t_new)
            return new, self._report(new, 1, 0.0)

        current = state
        increment = np.inf
        for iteration in range(1, self.max_iter + 1):
            rhs = base - disc.nonlinear_load(F, current.u, current.uhat)
            if self.newton:
                jac = disc.nonlinear_jacobian(self.nonlinearity.dF, current.u, current.uhat)
                rhs = rhs + np.einsum("eij,ej->ei", jac, disc.local_unknowns(current.u, current.uhat))
                system = condense(disc, self.sigma, extra=jac)
                self.factorizations += system.factorizations
            else:
                system = self.system
            new = solve_condensed(disc, system, rhs, t_new)
            increment = float(np.max(np.abs(new.vector() - current.vector()), initial=0.0))
            current = new
            if increment <= self.tol:
                return current, self._report(current, iteration, increment)
        raise StepConvergenceError(t_new, self.max_iter, increment)

    def _report(self, state: FieldState, iterations: int, increment: float) -> StepReport:
        residual = check_flux_continuity(self.disc, state)
        logger.debug("t=%.6g iterations=%d increment=%.3e flux=%.3e", state.t, iterations, increment, residual)
        return StepReport(t=state.t, iterations=iterations, increment=increment, flux_residual=residual)


def step(stepper: CrankNicolsonStepper, state: FieldState) -> "tuple[FieldState, StepReport]":
    return stepper.step(state)


@dataclass
class Trajectory:
    states: List[FieldState]
    reports: List[StepReport] = field(default_factory=list)
    factorizations: int = 0
    dt: float = 0.0
    steps: int = 0

    @property
    def final(self) -> FieldState:
        return self.states[-1]

    @property
    def picard_total(self) -> int:
        return sum(r.iterations for r in self.reports)

    @property
    def max_iterations(self) -> int:
        return max((r.iterations for r in self.reports), default=0)

    @property
    def max_flux_residual(self) -> float:
        return max((r.flux_residual for r in self.reports), default=0.0)


def integrate(
    mesh: Mesh,
    config: DegreeConfig,
    time_config: TimeConfig,
    problem: Problem,
    disc: Optional[HDGDiscretization] = None,
    workers: Optional[int] = None,
) -> Trajectory:
    """Run Crank-Nicolson to T; the trajectory holds the initial state, requested snapshots and the final state."""
    disc = disc if disc is not None else HDGDiscretization(mesh, config, workers=workers)
    steps, dt = time_config.resolve_steps(mesh.mesh_size)
    state = initial_state(
        disc,
        lambda x, y: problem.u(x, y, 0.0),
        time_config.ic_mode,
        lambda x, y: problem.laplacian(x, y, 0.0),
    )
    trajectory = Trajectory(states=[state], dt=dt, steps=steps)
    if steps == 0:
        return trajectory

    stepper = CrankNicolsonStepper(
        disc,
        problem.source,
        problem.nonlinearity,
        dt,
        tol=time_config.tol,
        max_iter=time_config.max_iter,
        newton=time_config.newton,
    )
    snapshot_steps = {max(1, min(steps, int(round(t / dt)))) for t in time_config.output_times if 0 < t < time_config.T}
    for n in range(1, steps + 1):
        state, report = stepper.step(state)
        if n == steps:
            state = state.with_time(time_config.T)
        trajectory.reports.append(report)
        if n in snapshot_steps or n == steps:
            trajectory.states.append(state)
    trajectory.factorizations = stepper.factorizations
    logger.debug(
        "integrated %d steps of size %.4g with %d factorizations, %d inner iterations",
        steps,
        dt,
        trajectory.factorizations,
        trajectory.picard_total,
    )
    return trajectory
