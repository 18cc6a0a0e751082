"""Manufactured problems on the unit square.

Each problem carries the exact solution and its derivatives; the source is
derived as f = u_t - lap u + F(u) so the exact solution solves the PDE.
"""
from __future__ import annotations

import importlib
from dataclasses import dataclass
from typing import Callable, Dict

import numpy as np

from .errors import ConfigurationError
from .time_stepper import CHAFFEE_INFANTE, NO_REACTION, Nonlinearity

Field = Callable[[np.ndarray, np.ndarray, float], np.ndarray]
VectorField = Callable[[np.ndarray, np.ndarray, float], "tuple[np.ndarray, np.ndarray]"]


@dataclass(frozen=True)
class ManufacturedProblem:
    name: str
    exact: Field
    time_derivative: Field
    gradient: VectorField
    lap: Field
    nonlinearity: Nonlinearity
    T: float = 1.0

    def u(self, x, y, t):
        return self.exact(x, y, t)

    def u_t(self, x, y, t):
        return self.time_derivative(x, y, t)

    def laplacian(self, x, y, t):
        return self.lap(x, y, t)

    def q(self, x, y, t):
        gx, gy = self.gradient(x, y, t)
        return -np.asarray(gx), -np.asarray(gy)

    def source(self, x, y, t):
        u = self.exact(x, y, t)
        return self.time_derivative(x, y, t) - self.lap(x, y, t) + self.nonlinearity.F(u)


def _sine_problem(name: str, nonlinearity: Nonlinearity, T: float = 1.0) -> ManufacturedProblem:
    pi = np.pi

    def exact(x, y, t):
        return np.sin(t) * np.sin(pi * x) * np.sin(pi * y)

    def time_derivative(x, y, t):
        return np.cos(t) * np.sin(pi * x) * np.sin(pi * y)

    def gradient(x, y, t):
        s = np.sin(t) * pi
        return s * np.cos(pi * x) * np.sin(pi * y), s * np.sin(pi * x) * np.cos(pi * y)

    def lap(x, y, t):
        return -2.0 * pi**2 * exact(x, y, t)

    return ManufacturedProblem(name, exact, time_derivative, gradient, lap, nonlinearity, T)


def chaffee_infante(T: float = 1.0) -> ManufacturedProblem:
    """u = sin(t) sin(pi x) sin(pi y) with F(u) = u^3 - u."""
    return _sine_problem("chaffee_infante", CHAFFEE_INFANTE, T)


def linear_sine(T: float = 1.0) -> ManufacturedProblem:
    """u = sin(t) sin(pi x) sin(pi y) with no reaction term."""
    return _sine_problem("linear_sine", NO_REACTION, T)


def linear_poly(T: float = 1.0) -> ManufacturedProblem:
    """u = (1 + t) x(1-x) y(1-y) with no reaction term; in P^4 and linear in time."""

    def bubble(x, y):
        return x * (1.0 - x) * y * (1.0 - y)

    def exact(x, y, t):
        return (1.0 + t) * bubble(x, y)

    def time_derivative(x, y, t):
        return bubble(x, y)

    def gradient(x, y, t):
        return (1.0 + t) * (1.0 - 2.0 * x) * y * (1.0 - y), (1.0 + t) * x * (1.0 - x) * (1.0 - 2.0 * y)

    def lap(x, y, t):
        return -2.0 * (1.0 + t) * (y * (1.0 - y) + x * (1.0 - x))

    return ManufacturedProblem("linear_poly", exact, time_derivative, gradient, lap, NO_REACTION, T)


BUILTIN_PROBLEMS: Dict[str, Callable[[float], ManufacturedProblem]] = {
    "chaffee_infante": chaffee_infante,
    "linear_poly": linear_poly,
    "linear_sine": linear_sine,
}


def load_custom_problem(spec: str, T: float = 1.0) -> ManufacturedProblem:
    """Import ``module:attribute`` and call it with T to obtain a ManufacturedProblem."""
    module_name, sep, attr = spec.partition(":")
    if not sep or not module_name or not attr:
        raise ConfigurationError(f"custom problem must be given as module:attribute, got {spec!r}")
    try:
        factory = getattr(importlib.import_module(module_name), attr)
    except (ImportError, AttributeError) as exc:
        raise ConfigurationError(f"cannot load custom problem {spec!r}: {exc}") from exc
    problem = factory(T)
    if not isinstance(problem, ManufacturedProblem):
        raise ConfigurationError(f"{spec!r} did not return a ManufacturedProblem")
    return problem


def get_problem(name: str, T: float = 1.0, custom: str = "") -> ManufacturedProblem:
    if name == "custom":
        return load_custom_problem(custom, T)
    try:
        return BUILTIN_PROBLEMS[name](T)
    except KeyError:
        raise ConfigurationError(
            f"unknown problem {name!r}, expected one of {sorted(BUILTIN_PROBLEMS) + ['custom']}"
        ) from None
