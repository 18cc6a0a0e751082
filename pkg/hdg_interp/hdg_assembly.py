"""Element operators, static condensation and steady solves.

The method is assembled in its reformulated form, where the flux trace is
eliminated and the stabilization reads
<h_K^{-1}(Pi_k u* - u-hat), Pi_k v* - v-hat>. Per element the unknowns are
ordered (q_x, q_y, u | u-hat on local faces 0, 1, 2) and the local matrix is

    [  A_qq     A_qu         A_quhat ]
    [ -A_qu^T   sigma M + S_uu   S_uuhat ]
    [ -A_quhat^T   S_uhatu      S_uhatuhat ]

with q-rows from the first equation, u-rows from the second equation tested
with v and face rows from the second equation tested with v-hat.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, List, NamedTuple, Optional, Tuple

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as sparse_linalg

from .config import DegreeConfig
from .errors import ConfigurationError, EvaluationError, LinearAlgebraError
from .mesh import ElementGeometry, Mesh
from .proj_post import ElementProjector, ScalarField, reference_tables
from .ref_elements import dim_p, edge_basis, edge_quadrature

logger = logging.getLogger(__name__)

LOCAL_CONDITION_LIMIT = 1e13


@dataclass(frozen=True)
class FieldState:
    """Coefficients of (q_h, u_h, u-hat_h) and the derived u_h* at time t.

    ``q`` has shape (num_elements, 2 * dim P^k) with the x-component first,
    ``uhat`` has shape (num_interior_faces, k+1).
    """

    q: np.ndarray
    u: np.ndarray
    uhat: np.ndarray
    ustar: np.ndarray
    t: float = 0.0

    def vector(self) -> np.ndarray:
        return np.concatenate((self.q.ravel(), self.u.ravel(), self.uhat.ravel()))

    def with_time(self, t: float) -> "FieldState":
        return replace(self, t=t)


@dataclass(frozen=True)
class ElementOperators:
    A_qq: np.ndarray
    A_qu: np.ndarray
    A_quhat: np.ndarray
    M_uu: np.ndarray
    S: np.ndarray
    B_F: np.ndarray
    N_K: np.ndarray
    P_K: np.ndarray
    tau: float

    @property
    def A_div(self) -> np.ndarray:
        """(div q, v) as a (v, q) block."""
        return -self.A_qu.T

    @property
    def A_qn(self) -> np.ndarray:
        """<q.n, v-hat> as a (v-hat, q) block."""
        return self.A_quhat.T

    def local_matrix(self, sigma: float = 0.0) -> np.ndarray:
        nq, nl = self.A_qu.shape
        nb = self.A_quhat.shape[1]
        size = nq + nl + nb
        K = np.zeros((size, size))
        K[:nq, :nq] = self.A_qq
        K[:nq, nq : nq + nl] = self.A_qu
        K[:nq, nq + nl :] = self.A_quhat
        K[nq : nq + nl, :nq] = -self.A_qu.T
        K[nq + nl :, :nq] = -self.A_quhat.T
        K[nq:, nq:] = self.S
        K[nq : nq + nl, nq : nq + nl] += sigma * self.M_uu
        return K

    def first_form(self, q, u, uhat, r) -> float:
        """(q, r) - (u, div r) + <u-hat, r.n>."""
        return float(r @ (self.A_qq @ q + self.A_qu @ u + self.A_quhat @ uhat))

    def second_form(self, q, u, uhat, v, vhat) -> float:
        """(div q, v) - <q.n, v-hat> + <tau (Pi u* - u-hat), Pi v* - v-hat>."""
        w = np.concatenate((u, uhat))
        z = np.concatenate((v, vhat))
        return float(-v @ (self.A_qu.T @ q) - vhat @ (self.A_quhat.T @ q) + z @ (self.S @ w))


def assemble_element(
    geometry: ElementGeometry,
    config: DegreeConfig,
    projector: Optional[ElementProjector] = None,
) -> ElementOperators:
    p = projector if projector is not None else ElementProjector(config, geometry)
    nk, nl, nf = dim_p(config.k), dim_p(config.ell), config.k + 1
    w = p.weights
    mass = p.mass

    A_qq = np.zeros((2 * nk, 2 * nk))
    A_qu = np.zeros((2 * nk, nl))
    A_quhat = np.zeros((2 * nk, 3 * nf))
    for d in range(2):
        rows = slice(d * nk, (d + 1) * nk)
        A_qq[rows, rows] = mass[:nk, :nk]
        A_qu[rows] = -(p.grad_phi[:, :nk, d].T @ (w[:, None] * p.phi[:, :nl]))
        for e in range(3):
            block = p.face_phi[e][:, :nk].T @ (p.face_weights[e][:, None] * p.face_mu[e])
            A_quhat[rows, e * nf : (e + 1) * nf] = geometry.normals[e, d] * block

    tau = config.tau(geometry.diameter)
    S = np.zeros((nl + 3 * nf, nl + 3 * nf))
    for e in range(3):
        R = p.trace_moments[e] @ p.post_matrix
        R[:, nl + e * nf : nl + (e + 1) * nf] -= np.eye(nf)
        S += tau * (R.T @ R)

    return ElementOperators(
        A_qq=A_qq,
        A_qu=A_qu,
        A_quhat=A_quhat,
        M_uu=mass[:nl, :nl].copy(),
        S=S,
        B_F=p.lagrange_cross_mass(),
        N_K=p.nodal_matrix @ p.post_matrix,
        P_K=p.post_matrix,
        tau=tau,
    )


class Residuals(NamedTuple):
    q: float
    u: float
    face: float


class HDGDiscretization:
    """All element operators of one (mesh, DegreeConfig) pair, stacked over elements.

    Element work runs on a thread pool; results are collected in element
    order so the stacked arrays do not depend on scheduling.
    """

    def __init__(self, mesh: Mesh, config: DegreeConfig, workers: Optional[int] = None) -> None:
        self.mesh = mesh
        self.config = config
        self.ref = reference_tables(config)
        self.nk = dim_p(config.k)
        self.nl = dim_p(config.ell)
        self.nf = config.k + 1
        self.n_post = dim_p(config.post_degree)
        self.nq = 2 * self.nk
        self.n_int = self.nq + self.nl
        self.n_bnd = 3 * self.nf

        index = mesh.interior_index()
        self.interior_faces = np.flatnonzero(index >= 0)
        self.num_interior = len(self.interior_faces)
        self.ndof = self.num_interior * self.nf
        local_faces = index[mesh.element_faces]
        offsets = np.arange(self.nf)
        dofs = np.where(local_faces[:, :, None] >= 0, local_faces[:, :, None] * self.nf + offsets, -1)
        self.elem_dofs = dofs.reshape(mesh.num_elements, self.n_bnd)

        def build(K: int) -> Tuple[ElementProjector, ElementOperators]:
            geom = mesh.geometry(K)
            proj = ElementProjector(config, geom, mesh.element_face_signs[K])
            return proj, assemble_element(geom, config, proj)

        if workers is not None and workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                built = list(pool.map(build, range(mesh.num_elements)))
        else:
            built = [build(K) for K in range(mesh.num_elements)]
        self.projectors: List[ElementProjector] = [b[0] for b in built]
        self.operators: List[ElementOperators] = [b[1] for b in built]
        logger.debug("assembled %d elements for %s", mesh.num_elements, config.label())

        ops = self.operators
        self.A_qq = np.stack([o.A_qq for o in ops])
        self.A_qu = np.stack([o.A_qu for o in ops])
        self.A_quhat = np.stack([o.A_quhat for o in ops])
        self.M_uu = np.stack([o.M_uu for o in ops])
        self.S = np.stack([o.S for o in ops])
        self.B_F = np.stack([o.B_F for o in ops])
        self.N_K = np.stack([o.N_K for o in ops])
        self.P_K = np.stack([o.P_K for o in ops])

        areas = mesh.areas
        self.scale = 1.0 / np.sqrt(2.0 * areas)
        data_rule = self.ref.data_rule
        v0 = mesh.vertices[mesh.triangles[:, 0]]
        J = np.stack(
            (
                mesh.vertices[mesh.triangles[:, 1]] - v0,
                mesh.vertices[mesh.triangles[:, 2]] - v0,
            ),
            axis=-1,
        )
        self.data_points = v0[:, None, :] + np.einsum("eij,qj->eqi", J, data_rule.points)
        self.data_weights = data_rule.weights[None, :] * (2.0 * areas)[:, None]
        self.data_phi = self.ref.data_psi[None, :, :] * self.scale[:, None, None]

        erule = edge_quadrature(config.error_exactness)
        faces = mesh.faces[self.interior_faces]
        xa = mesh.vertices[faces[:, 0]]
        xb = mesh.vertices[faces[:, 1]]
        lengths = np.linalg.norm(xb - xa, axis=1)
        t = erule.points[:, 0]
        self.face_points = xa[:, None, :] + t[None, :, None] * (xb - xa)[:, None, :]
        self.face_weights = erule.weights[None, :] * lengths[:, None]
        self.face_mu = edge_basis(config.k).eval(t)[None, :, :] / np.sqrt(lengths)[:, None, None]

    @property
    def num_elements(self) -> int:
        return self.mesh.num_elements

    # data ---------------------------------------------------------------

    def load(self, f: ScalarField) -> np.ndarray:
        """(f, phi_j) for the W_h basis; equals the coefficients of Pi^o_ell f."""
        values = np.asarray(f(self.data_points[..., 0], self.data_points[..., 1]), dtype=float)
        values = np.broadcast_to(values, self.data_weights.shape)
        if not np.all(np.isfinite(values)):
            raise EvaluationError("source evaluation returned non-finite values")
        return np.einsum("eq,eqi->ei", self.data_weights * values, self.data_phi[:, :, : self.nl])

    def project_faces(self, g: ScalarField) -> np.ndarray:
        """Pi^partial_k g on every interior face, shape (num_interior, k+1)."""
        if self.num_interior == 0:
            return np.zeros((0, self.nf))
        values = np.asarray(g(self.face_points[..., 0], self.face_points[..., 1]), dtype=float)
        values = np.broadcast_to(values, self.face_weights.shape)
        if not np.all(np.isfinite(values)):
            raise EvaluationError("trace evaluation returned non-finite values")
        return np.einsum("fq,fqm->fm", self.face_weights * values, self.face_mu)

    # local gathers ------------------------------------------------------

    def gather_uhat(self, uhat: np.ndarray) -> np.ndarray:
        """Element-local u-hat blocks (num_elements, 3(k+1)), zero on boundary faces."""
        flat = np.asarray(uhat, dtype=float).reshape(-1)
        local = np.zeros(self.elem_dofs.shape)
        mask = self.elem_dofs >= 0
        local[mask] = flat[self.elem_dofs[mask]]
        return local

    def scatter_faces(self, local: np.ndarray) -> np.ndarray:
        """Sum element-local face vectors into interior-face dofs, in element order."""
        mask = self.elem_dofs >= 0
        total = np.bincount(self.elem_dofs[mask], weights=local[mask], minlength=self.ndof)
        return total.reshape(self.num_interior, self.nf)

    def local_unknowns(self, u: np.ndarray, uhat: np.ndarray) -> np.ndarray:
        return np.concatenate((u, self.gather_uhat(uhat)), axis=1)

    def postprocess(self, u: np.ndarray, uhat: np.ndarray) -> np.ndarray:
        return np.einsum("eij,ej->ei", self.P_K, self.local_unknowns(u, uhat))

    def nodal_ustar(self, u: np.ndarray, uhat: np.ndarray) -> np.ndarray:
        return np.einsum("eij,ej->ei", self.N_K, self.local_unknowns(u, uhat))

    def recover_q(self, u: np.ndarray, uhat: np.ndarray) -> np.ndarray:
        """Solve the first equation element by element for q."""
        rhs = -(np.einsum("eij,ej->ei", self.A_qu, u) + np.einsum("eij,ej->ei", self.A_quhat, self.gather_uhat(uhat)))
        return np.linalg.solve(self.A_qq, rhs[..., None])[..., 0]

    def make_state(self, q: np.ndarray, u: np.ndarray, uhat: np.ndarray, t: float = 0.0) -> FieldState:
        uhat = np.asarray(uhat, dtype=float).reshape(self.num_interior, self.nf)
        return FieldState(q=q, u=u, uhat=uhat, ustar=self.postprocess(u, uhat), t=t)

    def zero_state(self, t: float = 0.0) -> FieldState:
        return self.make_state(
            np.zeros((self.num_elements, self.nq)),
            np.zeros((self.num_elements, self.nl)),
            np.zeros((self.num_interior, self.nf)),
            t,
        )

    # operator actions ---------------------------------------------------

    def q_rows(self, state: FieldState) -> np.ndarray:
        return (
            np.einsum("eij,ej->ei", self.A_qq, state.q)
            + np.einsum("eij,ej->ei", self.A_qu, state.u)
            + np.einsum("eij,ej->ei", self.A_quhat, self.gather_uhat(state.uhat))
        )

    def u_rows(self, state: FieldState) -> np.ndarray:
        """Spatial part of the u-rows: (div q, v) + stabilization tested with v."""
        w = self.local_unknowns(state.u, state.uhat)
        return -np.einsum("eji,ej->ei", self.A_qu, state.q) + np.einsum("eij,ej->ei", self.S[:, : self.nl, :], w)

    def face_rows(self, state: FieldState) -> np.ndarray:
        """Face rows -<q.n, v-hat> + stabilization tested with v-hat, summed per interior face."""
        w = self.local_unknowns(state.u, state.uhat)
        local = -np.einsum("eji,ej->ei", self.A_quhat, state.q) + np.einsum("eij,ej->ei", self.S[:, self.nl :, :], w)
        return self.scatter_faces(local)

    def mass_u(self, u: np.ndarray) -> np.ndarray:
        return np.einsum("eij,ej->ei", self.M_uu, u)

    def nonlinear_load(self, F: Callable[[np.ndarray], np.ndarray], u: np.ndarray, uhat: np.ndarray) -> np.ndarray:
        """(I_h F(u*), v) through nodal values of u* and the fixed cross-mass."""
        values = F(self.nodal_ustar(u, uhat))
        if not np.all(np.isfinite(values)):
            raise EvaluationError("nonlinearity returned non-finite values at Lagrange nodes")
        return np.einsum("eja,ea->ej", self.B_F, values)

    def nonlinear_jacobian(self, dF: Callable[[np.ndarray], np.ndarray], u: np.ndarray, uhat: np.ndarray) -> np.ndarray:
        """Derivative of the nonlinear load with respect to the local (u, u-hat) unknowns."""
        slopes = dF(self.nodal_ustar(u, uhat))
        if not np.all(np.isfinite(slopes)):
            raise EvaluationError("nonlinearity derivative returned non-finite values")
        return np.einsum("eja,ea,eab->ejb", self.B_F, slopes, self.N_K)

    def local_matrices(self, sigma: float = 0.0, extra: Optional[np.ndarray] = None) -> np.ndarray:
        """Stacked local matrices; ``extra`` is added to the u-rows over the (u, u-hat) columns."""
        nq, nl = self.nq, self.nl
        size = self.n_int + self.n_bnd
        K = np.zeros((self.num_elements, size, size))
        K[:, :nq, :nq] = self.A_qq
        K[:, :nq, nq : nq + nl] = self.A_qu
        K[:, :nq, nq + nl :] = self.A_quhat
        K[:, nq : nq + nl, :nq] = -np.swapaxes(self.A_qu, 1, 2)
        K[:, nq + nl :, :nq] = -np.swapaxes(self.A_quhat, 1, 2)
        K[:, nq:, nq:] = self.S
        K[:, nq : nq + nl, nq : nq + nl] += sigma * self.M_uu
        if extra is not None:
            K[:, nq : nq + nl, nq:] += extra
        return K

    def interior_rhs(self, rhs_u: np.ndarray) -> np.ndarray:
        b = np.zeros((self.num_elements, self.n_int))
        b[:, self.nq :] = rhs_u
        return b


@dataclass
class CondensedSystem:
    """Global system on interior-face unknowns plus element recovery maps."""

    matrix: sparse.csc_matrix
    local_inverse: np.ndarray
    recovery: np.ndarray
    reduction: np.ndarray
    elem_dofs: np.ndarray
    sigma: float
    factor: Optional[sparse_linalg.SuperLU] = None
    factorizations: int = 0

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def factorize(self) -> None:
        if self.size == 0:
            self.factor = None
            self.factorizations += 1
            return
        try:
            self.factor = sparse_linalg.splu(self.matrix.tocsc(), permc_spec="COLAMD")
        except RuntimeError as exc:
            raise LinearAlgebraError(f"sparse factorization failed: {exc}") from exc
        self.factorizations += 1
        logger.debug("factorized condensed system of size %d (nnz %d)", self.size, self.matrix.nnz)

    def solve(self, rhs_interior: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Return element interior unknowns (q, u) and the interior-face unknowns."""
        if self.factor is None and self.size > 0:
            self.factorize()
        g = -np.einsum("eij,ej->ei", self.reduction, rhs_interior)
        mask = self.elem_dofs >= 0
        rhs = np.bincount(self.elem_dofs[mask], weights=g[mask], minlength=self.size)
        uhat = self.factor.solve(rhs) if self.size > 0 else np.zeros(0)
        if not np.all(np.isfinite(uhat)):
            raise LinearAlgebraError("condensed solve produced non-finite values")
        local = np.zeros(self.elem_dofs.shape)
        local[mask] = uhat[self.elem_dofs[mask]]
        interior = np.einsum("eij,ej->ei", self.local_inverse, rhs_interior) - np.einsum(
            "eij,ej->ei", self.recovery, local
        )
        return interior, uhat


def condense(
    disc: HDGDiscretization,
    sigma: float = 0.0,
    extra: Optional[np.ndarray] = None,
    factorize: bool = True,
) -> CondensedSystem:
    """Eliminate (q, u) element by element; ``sigma`` multiplies the W_h mass block."""
    if sigma < 0:
        raise ConfigurationError("reaction coefficient sigma must be non-negative")
    K = disc.local_matrices(sigma, extra)
    ni = disc.n_int
    A_II = K[:, :ni, :ni]
    A_IB = K[:, :ni, ni:]
    A_BI = K[:, ni:, :ni]
    A_BB = K[:, ni:, ni:]
    try:
        inv = np.linalg.inv(A_II)
    except np.linalg.LinAlgError as exc:
        raise ConfigurationError(f"singular local block for {disc.config.label()}") from exc
    cond = np.linalg.cond(A_II)
    if not np.all(np.isfinite(inv)) or np.max(cond) > LOCAL_CONDITION_LIMIT:
        raise ConfigurationError(
            f"ill-conditioned local block for {disc.config.label()} (condition {np.max(cond):.3e})"
        )
    recovery = inv @ A_IB
    reduction = A_BI @ inv
    schur = A_BB - A_BI @ recovery

    dofs = disc.elem_dofs
    rows = np.repeat(dofs[:, :, None], dofs.shape[1], axis=2)
    cols = np.repeat(dofs[:, None, :], dofs.shape[1], axis=1)
    mask = (rows >= 0) & (cols >= 0)
    matrix = sparse.coo_matrix(
        (schur[mask], (rows[mask], cols[mask])), shape=(disc.ndof, disc.ndof)
    ).tocsc()
    system = CondensedSystem(
        matrix=matrix,
        local_inverse=inv,
        recovery=recovery,
        reduction=reduction,
        elem_dofs=dofs,
        sigma=sigma,
    )
    if factorize:
        system.factorize()
    return system


def solve_condensed(disc: HDGDiscretization, system: CondensedSystem, rhs_u: np.ndarray, t: float = 0.0) -> FieldState:
    interior, uhat = system.solve(disc.interior_rhs(rhs_u))
    return disc.make_state(interior[:, : disc.nq], interior[:, disc.nq :], uhat, t)


def solve_monolithic(disc: HDGDiscretization, sigma: float, rhs_u: np.ndarray, t: float = 0.0) -> FieldState:
    """Uncondensed solve of the full saddle system; a reference for the condensed path."""
    K = disc.local_matrices(sigma)
    ne, ni, nb = disc.num_elements, disc.n_int, disc.n_bnd
    size = ne * ni + disc.ndof
    glob = np.empty((ne, ni + nb), dtype=np.int64)
    glob[:, :ni] = np.arange(ne * ni).reshape(ne, ni)
    glob[:, ni:] = np.where(disc.elem_dofs >= 0, ne * ni + disc.elem_dofs, -1)
    rows = np.repeat(glob[:, :, None], ni + nb, axis=2)
    cols = np.repeat(glob[:, None, :], ni + nb, axis=1)
    mask = (rows >= 0) & (cols >= 0)
    A = sparse.coo_matrix((K[mask], (rows[mask], cols[mask])), shape=(size, size)).tocsc()
    b = np.zeros(size)
    b[: ne * ni] = disc.interior_rhs(rhs_u).ravel()
    x = sparse_linalg.spsolve(A, b)
    interior = x[: ne * ni].reshape(ne, ni)
    return disc.make_state(interior[:, : disc.nq], interior[:, disc.nq :], x[ne * ni :], t)


def solve_elliptic_projection(
    disc: HDGDiscretization,
    laplacian: ScalarField,
    t: float = 0.0,
    system: Optional[CondensedSystem] = None,
) -> FieldState:
    """HDG elliptic approximation with right-hand side (-lap u(t), v)."""
    if system is None:
        system = condense(disc, 0.0)
    rhs = disc.load(lambda x, y: -np.asarray(laplacian(x, y), dtype=float))
    return solve_condensed(disc, system, rhs, t)


def equation_residuals(
    disc: HDGDiscretization,
    state: FieldState,
    rhs_u: np.ndarray,
    sigma: float = 0.0,
) -> Residuals:
    """Max-norm residuals of the q-rows, u-rows and face rows."""
    q_res = disc.q_rows(state)
    u_res = sigma * disc.mass_u(state.u) + disc.u_rows(state) - rhs_u
    face_res = disc.face_rows(state)
    return Residuals(
        q=float(np.max(np.abs(q_res), initial=0.0)),
        u=float(np.max(np.abs(u_res), initial=0.0)),
        face=float(np.max(np.abs(face_res), initial=0.0)),
    )


def check_flux_continuity(disc: HDGDiscretization, state: FieldState) -> float:
    """Largest interior-face residual of -<q.n, v-hat> + <tau(Pi u* - u-hat), Pi v* - v-hat> at v = 0."""
    return float(np.max(np.abs(disc.face_rows(state)), initial=0.0))
