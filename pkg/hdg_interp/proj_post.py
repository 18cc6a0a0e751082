"""Element projections, the local postprocessing and the Lagrange interpolator.

Coefficients refer to the physical orthonormal bases
phi_i = psi_i o F_K^{-1} / sqrt(2|K|) on elements and
mu_m = (edge Legendre)(s) / sqrt(|e|) on faces, where s is the global face
parameter running from the lower to the higher vertex id. In these bases
L2 projections are plain moment vectors.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from .config import DegreeConfig
from .errors import EvaluationError, PostprocessError, UnsupportedDegreeError
from .mesh import LOCAL_FACES, REFERENCE_VERTICES, ElementGeometry
from .ref_elements import (
    QuadratureRule,
    dim_p,
    edge_basis,
    edge_quadrature,
    lagrange_basis,
    modal_basis,
    tri_quadrature,
)

ScalarField = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class FaceTables:
    """Reference data for one local face at one quadrature rule."""

    t: np.ndarray
    weights: np.ndarray
    xi: np.ndarray
    psi: np.ndarray
    dpsi: np.ndarray
    mu_forward: np.ndarray
    mu_reverse: np.ndarray


@dataclass(frozen=True)
class ReferenceTables:
    """Reference evaluations shared by every element for one DegreeConfig."""

    config: DegreeConfig
    rule: QuadratureRule
    psi: np.ndarray
    dpsi: np.ndarray
    hpsi: np.ndarray
    data_rule: QuadratureRule
    data_psi: np.ndarray
    faces: Tuple[FaceTables, ...]
    data_faces: Tuple[FaceTables, ...]
    lagrange_nodes: np.ndarray
    lagrange_at_quad: np.ndarray
    vandermonde_inv: np.ndarray
    psi_at_nodes: np.ndarray

    @property
    def n_post(self) -> int:
        return dim_p(self.config.post_degree)

    @property
    def n_ell(self) -> int:
        return dim_p(self.config.ell)

    @property
    def n_k(self) -> int:
        return dim_p(self.config.k)

    @property
    def n_face(self) -> int:
        return self.config.k + 1


def _face_tables(degree: int, k: int, rule: QuadratureRule) -> Tuple[FaceTables, ...]:
    basis = modal_basis(degree)
    ebasis = edge_basis(k)
    t = rule.points[:, 0]
    tables = []
    for a, b in LOCAL_FACES:
        xi = REFERENCE_VERTICES[a] + t[:, None] * (REFERENCE_VERTICES[b] - REFERENCE_VERTICES[a])
        tables.append(
            FaceTables(
                t=t,
                weights=rule.weights,
                xi=xi,
                psi=basis.eval(xi),
                dpsi=basis.grad(xi),
                mu_forward=ebasis.eval(t),
                mu_reverse=ebasis.eval(1.0 - t),
            )
        )
    return tuple(tables)


@lru_cache(maxsize=None)
def reference_tables(config: DegreeConfig) -> ReferenceTables:
    degree = config.post_degree
    basis = modal_basis(degree)
    rule = tri_quadrature(config.assembly_exactness)
    data_rule = tri_quadrature(config.error_exactness)
    nodal = lagrange_basis(degree)
    return ReferenceTables(
        config=config,
        rule=rule,
        psi=basis.eval(rule.points),
        dpsi=basis.grad(rule.points),
        hpsi=basis.hessian(rule.points),
        data_rule=data_rule,
        data_psi=basis.eval(data_rule.points),
        faces=_face_tables(degree, config.k, edge_quadrature(config.face_exactness)),
        data_faces=_face_tables(degree, config.k, edge_quadrature(config.error_exactness)),
        lagrange_nodes=nodal.nodes,
        lagrange_at_quad=nodal.eval(rule.points),
        vandermonde_inv=nodal.vandermonde_inv,
        psi_at_nodes=nodal.vandermonde,
    )


def _evaluate(f: ScalarField, x: np.ndarray) -> np.ndarray:
    values = np.asarray(f(x[..., 0], x[..., 1]), dtype=float)
    values = np.broadcast_to(values, x.shape[:-1])
    if not np.all(np.isfinite(values)):
        raise EvaluationError("function returned non-finite values")
    return values


class ElementProjector:
    """Projections, postprocessing and interpolation on one element.

    ``post_matrix`` maps the stacked vector (u coefficients in P^ell,
    face coefficients of u-hat on local faces 0, 1, 2) to the coefficients
    of u* in P^{k+1}.
    """

    def __init__(self, config: DegreeConfig, geometry: ElementGeometry, face_signs: Sequence[int] = (1, 1, 1)) -> None:
        self.config = config
        self.geometry = geometry
        self.face_signs = tuple(int(s) for s in face_signs)
        ref = reference_tables(config)
        self.ref = ref
        self.scale = 1.0 / np.sqrt(2.0 * geometry.area)
        jinv = geometry.jacobian_inv

        self.weights = ref.rule.weights * 2.0 * geometry.area
        self.phi = ref.psi * self.scale
        self.grad_phi = ref.dpsi @ jinv * self.scale
        self.lap_phi = np.einsum("ab,qiac,cb->qi", jinv, ref.hpsi, jinv) * self.scale

        self.face_weights: List[np.ndarray] = []
        self.face_phi: List[np.ndarray] = []
        self.face_grad_phi: List[np.ndarray] = []
        self.face_mu: List[np.ndarray] = []
        for i, table in enumerate(ref.faces):
            length = geometry.face_lengths[i]
            mu = table.mu_forward if self.face_signs[i] > 0 else table.mu_reverse
            self.face_weights.append(table.weights * length)
            self.face_phi.append(table.psi * self.scale)
            self.face_grad_phi.append(table.dpsi @ jinv * self.scale)
            self.face_mu.append(mu / np.sqrt(length))

        self.mass = self.phi.T @ (self.weights[:, None] * self.phi)
        self.trace_moments = [
            mu.T @ (w[:, None] * phi) for mu, w, phi in zip(self.face_mu, self.face_weights, self.face_phi)
        ]
        self.post_matrix = self._build_post_matrix()
        self.nodal_matrix = ref.psi_at_nodes * self.scale

    @property
    def n_post(self) -> int:
        return self.ref.n_post

    @property
    def n_ell(self) -> int:
        return self.ref.n_ell

    @property
    def n_face(self) -> int:
        return self.ref.n_face

    def _build_post_matrix(self) -> np.ndarray:
        n, nl, nf = self.n_post, self.n_ell, self.n_face
        lhs = np.zeros((n, n))
        rhs = np.zeros((n, nl + 3 * nf))
        # (u*, w) = (u, w) for w in P^ell
        lhs[:nl] = self.mass[:nl]
        rhs[:nl, :nl] = self.mass[:nl, :nl]
        # (grad u*, grad z) = -(u, lap z) + <u-hat, n . grad z> for z orthogonal to P^ell
        if nl < n:
            stiff = np.einsum("q,qid,qjd->ij", self.weights, self.grad_phi, self.grad_phi)
            lhs[nl:] = stiff[nl:]
            rhs[nl:, :nl] = -(self.lap_phi[:, nl:].T @ (self.weights[:, None] * self.phi[:, :nl]))
            for i in range(3):
                dn = self.face_grad_phi[i] @ self.geometry.normals[i]
                block = dn[:, nl:].T @ (self.face_weights[i][:, None] * self.face_mu[i])
                rhs[nl:, nl + i * nf : nl + (i + 1) * nf] = block
        try:
            lu, piv = linalg.lu_factor(lhs, check_finite=True)
        except (linalg.LinAlgError, ValueError) as exc:
            raise PostprocessError("postprocessing system could not be factored") from exc
        if np.any(np.abs(np.diag(lu)) < 1e-13 * np.abs(lhs).max()):
            raise PostprocessError("singular postprocessing system", condition=float(np.linalg.cond(lhs)))
        return linalg.lu_solve((lu, piv), rhs)

    # projections ---------------------------------------------------------

    def project_element(self, f: ScalarField, m: Optional[int] = None) -> np.ndarray:
        """L2 projection onto P^m(K), m <= k+1 (default ell), over-integrated."""
        m = self.config.ell if m is None else m
        if m > self.config.post_degree:
            raise UnsupportedDegreeError(f"projection degree {m} exceeds k+1={self.config.post_degree}")
        ref = self.ref
        x = self.geometry.to_physical(ref.data_rule.points)
        w = ref.data_rule.weights * 2.0 * self.geometry.area
        values = _evaluate(f, x)
        return (ref.data_psi[:, : dim_p(m)] * self.scale).T @ (w * values)

    def project_face(self, g: ScalarField, face: int) -> np.ndarray:
        """L2 projection onto P^k(e) of the trace of g on local face ``face``."""
        table = self.ref.data_faces[face]
        length = self.geometry.face_lengths[face]
        mu = (table.mu_forward if self.face_signs[face] > 0 else table.mu_reverse) / np.sqrt(length)
        x = self.geometry.to_physical(table.xi)
        values = _evaluate(g, x)
        return mu.T @ (table.weights * length * values)

    # postprocessing ------------------------------------------------------

    def postprocess(self, u: np.ndarray, uhat: np.ndarray) -> np.ndarray:
        """u* in P^{k+1}(K) from u in P^ell(K) and u-hat of shape (3, k+1)."""
        stacked = np.concatenate((np.asarray(u, dtype=float), np.asarray(uhat, dtype=float).reshape(-1)))
        return self.post_matrix @ stacked

    def pi_star(self, f: ScalarField) -> np.ndarray:
        uhat = np.array([self.project_face(f, i) for i in range(3)])
        return self.postprocess(self.project_element(f, self.config.ell), uhat)

    # interpolation -------------------------------------------------------

    @property
    def nodes(self) -> np.ndarray:
        return self.geometry.to_physical(self.ref.lagrange_nodes)

    def interpolate(self, g: ScalarField) -> np.ndarray:
        """Coefficients of I_h g on K."""
        values = _evaluate(g, self.nodes)
        return self.interpolate_values(values)

    def interpolate_values(self, nodal_values: np.ndarray) -> np.ndarray:
        return (self.ref.vandermonde_inv @ nodal_values) / self.scale

    def nodal_values(self, coefficients: np.ndarray) -> np.ndarray:
        return self.nodal_matrix @ coefficients

    def lagrange_cross_mass(self) -> np.ndarray:
        """(L_a, phi_j)_K for the W_h basis phi_j and the Z_h nodal basis L_a."""
        nl = self.n_ell
        return self.phi[:, :nl].T @ (self.weights[:, None] * self.ref.lagrange_at_quad)

    def evaluate(self, coefficients: np.ndarray, xi: np.ndarray) -> np.ndarray:
        """Values of an element polynomial at reference points ``xi``."""
        basis = modal_basis(self.config.post_degree)
        psi = basis.eval(xi)[:, : len(coefficients)]
        return psi @ coefficients * self.scale


def project_element(projector: ElementProjector, f: ScalarField, m: Optional[int] = None) -> np.ndarray:
    return projector.project_element(f, m)


def project_face(projector: ElementProjector, g: ScalarField, face: int) -> np.ndarray:
    return projector.project_face(g, face)


def postprocess(projector: ElementProjector, u: np.ndarray, uhat: np.ndarray) -> np.ndarray:
    return projector.postprocess(u, uhat)


def pi_star(projectors: Sequence[ElementProjector], u: ScalarField) -> np.ndarray:
    """Pi*_{k+1} u on every element, shape (num_elements, dim P^{k+1})."""
    return np.array([p.pi_star(u) for p in projectors])


def interpolate_Ih(projectors: Sequence[ElementProjector], g: ScalarField) -> np.ndarray:
    """I_h g on every element, shape (num_elements, dim P^{k+1})."""
    return np.array([p.interpolate(g) for p in projectors])
