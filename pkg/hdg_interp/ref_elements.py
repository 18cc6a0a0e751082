"""Reference-triangle and reference-edge bases and quadrature rules.

The reference triangle has vertices (0,0), (1,0), (0,1); the reference edge
is [0, 1]. Modal bases are orthonormal and hierarchical: the first
dim P^m functions of a degree-p basis span P^m for every m <= p.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre
from scipy import linalg
from scipy.special import roots_jacobi, roots_legendre

from .errors import UnsupportedDegreeError

MAX_EXACTNESS = 20
CENTROID = np.array([1.0 / 3.0, 1.0 / 3.0])


def dim_p(m: int) -> int:
    """Dimension of P^m on a triangle."""
    if m < 0:
        return 0
    return (m + 1) * (m + 2) // 2


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray
    exactness: int

    def __len__(self) -> int:
        return len(self.weights)


def _check_exactness(exactness: int) -> None:
    if exactness < 0 or exactness > MAX_EXACTNESS:
        raise UnsupportedDegreeError(f"quadrature exactness {exactness} outside 0..{MAX_EXACTNESS}")


@lru_cache(maxsize=None)
def tri_quadrature(exactness: int) -> QuadratureRule:
    """Collapsed Gauss-Jacobi rule on the reference triangle.

    Gauss-Jacobi(1, 0) in the collapsed direction absorbs the Duffy
    Jacobian, so n points per direction integrate total degree 2n-1.
    """
    _check_exactness(exactness)
    n = (exactness + 2) // 2
    xl, wl = roots_legendre(n)
    xj, wj = roots_jacobi(n, 1.0, 0.0)
    a = (xj + 1.0) / 2.0
    b = (xl + 1.0) / 2.0
    x = np.repeat(a, n)
    y = np.outer(1.0 - a, b).ravel()
    w = np.outer(wj, wl).ravel() / 8.0
    points = np.column_stack((x, y))
    points.setflags(write=False)
    w.setflags(write=False)
    return QuadratureRule(points=points, weights=w, exactness=exactness)


@lru_cache(maxsize=None)
def edge_quadrature(exactness: int) -> QuadratureRule:
    """Gauss-Legendre rule on [0, 1]."""
    _check_exactness(exactness)
    n = (exactness + 2) // 2
    x, w = roots_legendre(n)
    points = ((x + 1.0) / 2.0)[:, None]
    weights = w / 2.0
    points.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureRule(points=points, weights=weights, exactness=exactness)


def monomial_exponents(degree: int) -> np.ndarray:
    """Exponents (a, b) ordered by total degree, then by the power of y."""
    return np.array([(d - j, j) for d in range(degree + 1) for j in range(d + 1)], dtype=np.int64)


def _powers(t: np.ndarray, exps: np.ndarray, order: int) -> np.ndarray:
    """d^order/dt^order of t**e for every exponent e; shape (npts, nexps)."""
    t = t[:, None]
    coeff = np.ones(len(exps))
    for r in range(order):
        coeff = coeff * (exps - r)
    reduced = np.maximum(exps - order, 0)
    return np.where(exps >= order, coeff * t**reduced, 0.0)


class TriBasis:
    """Orthonormal modal basis of P^degree on the reference triangle.

    Built from monomials centered at the centroid; the Gram matrix is
    Cholesky-factored twice so that orthonormality holds to round-off.
    ``coefficients[i]`` expands basis function i in those monomials; the
    matrix is lower triangular, which keeps the basis hierarchical.
    """

    def __init__(self, degree: int) -> None:
        if degree < 0:
            raise UnsupportedDegreeError(f"negative polynomial degree {degree}")
        self.degree = degree
        self.dimension = dim_p(degree)
        self.exponents = monomial_exponents(degree)
        rule = tri_quadrature(min(2 * degree + 2, MAX_EXACTNESS))
        mono = self._monomials(rule.points)
        gram = mono.T @ (rule.weights[:, None] * mono)
        coeffs = np.eye(self.dimension)
        for _ in range(2):
            G = coeffs @ gram @ coeffs.T
            L = linalg.cholesky(G, lower=True)
            coeffs = linalg.solve_triangular(L, coeffs, lower=True)
        self.coefficients = coeffs
        self.coefficients.setflags(write=False)

    def _monomials(self, points: np.ndarray, dx: int = 0, dy: int = 0) -> np.ndarray:
        points = np.atleast_2d(points)
        x = points[:, 0] - CENTROID[0]
        y = points[:, 1] - CENTROID[1]
        return _powers(x, self.exponents[:, 0], dx) * _powers(y, self.exponents[:, 1], dy)

    def eval(self, points: np.ndarray) -> np.ndarray:
        """Values, shape (npts, dimension)."""
        return self._monomials(points) @ self.coefficients.T

    def grad(self, points: np.ndarray) -> np.ndarray:
        """Gradients, shape (npts, dimension, 2)."""
        gx = self._monomials(points, dx=1) @ self.coefficients.T
        gy = self._monomials(points, dy=1) @ self.coefficients.T
        return np.stack((gx, gy), axis=-1)

    def hessian(self, points: np.ndarray) -> np.ndarray:
        """Second derivatives, shape (npts, dimension, 2, 2)."""
        hxx = self._monomials(points, dx=2) @ self.coefficients.T
        hxy = self._monomials(points, dx=1, dy=1) @ self.coefficients.T
        hyy = self._monomials(points, dy=2) @ self.coefficients.T
        row0 = np.stack((hxx, hxy), axis=-1)
        row1 = np.stack((hxy, hyy), axis=-1)
        return np.stack((row0, row1), axis=-2)


class EdgeBasis:
    """Orthonormal Legendre basis of P^degree on [0, 1]."""

    def __init__(self, degree: int) -> None:
        if degree < 0:
            raise UnsupportedDegreeError(f"negative polynomial degree {degree}")
        self.degree = degree
        self.dimension = degree + 1
        self._scale = np.sqrt(2.0 * np.arange(self.dimension) + 1.0)

    def eval(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float).reshape(-1)
        return legendre.legvander(2.0 * s - 1.0, self.degree) * self._scale


def lagrange_nodes(degree: int) -> np.ndarray:
    """Principal lattice {(i/m, j/m): i + j <= m}; the centroid for degree 0."""
    if degree < 0:
        raise UnsupportedDegreeError(f"negative polynomial degree {degree}")
    if degree == 0:
        return CENTROID[None, :].copy()
    m = degree
    return np.array([(i / m, j / m) for j in range(m + 1) for i in range(m + 1 - j)])


class LagrangeBasis:
    """Nodal basis of P^degree on the principal lattice, expressed through the modal basis."""

    def __init__(self, degree: int) -> None:
        self.degree = degree
        self.modal = modal_basis(degree)
        self.nodes = lagrange_nodes(degree)
        self.vandermonde = self.modal.eval(self.nodes)
        self.vandermonde_inv = np.linalg.inv(self.vandermonde)

    @property
    def dimension(self) -> int:
        return len(self.nodes)

    def eval(self, points: np.ndarray) -> np.ndarray:
        return self.modal.eval(points) @ self.vandermonde_inv

    def modal_coefficients(self, nodal_values: np.ndarray) -> np.ndarray:
        """Modal coefficients of the interpolant through ``nodal_values``."""
        return self.vandermonde_inv @ nodal_values


@lru_cache(maxsize=None)
def modal_basis(degree: int) -> TriBasis:
    return TriBasis(degree)


@lru_cache(maxsize=None)
def edge_basis(degree: int) -> EdgeBasis:
    return EdgeBasis(degree)


@lru_cache(maxsize=None)
def lagrange_basis(degree: int) -> LagrangeBasis:
    return LagrangeBasis(degree)


def eval_basis(basis, points: np.ndarray) -> np.ndarray:
    return basis.eval(points)


def eval_grad(basis: TriBasis, points: np.ndarray) -> np.ndarray:
    return basis.grad(points)
