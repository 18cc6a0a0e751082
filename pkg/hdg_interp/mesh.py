from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np

from .errors import ConfigurationError, MeshIntegrityError

logger = logging.getLogger(__name__)

# Local face i runs from local vertex LOCAL_FACES[i][0] to LOCAL_FACES[i][1].
LOCAL_FACES = ((0, 1), (1, 2), (2, 0))
REFERENCE_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])

MIN_AREA = 1e-14


@dataclass(frozen=True)
class ElementGeometry:
    """Affine map x = x0 + J xi from the reference triangle onto element K."""

    vertices: np.ndarray
    jacobian: np.ndarray
    jacobian_inv: np.ndarray
    area: float
    diameter: float
    face_lengths: np.ndarray
    normals: np.ndarray

    @classmethod
    def from_vertices(cls, vertices: np.ndarray) -> "ElementGeometry":
        vertices = np.asarray(vertices, dtype=float)
        J = np.column_stack((vertices[1] - vertices[0], vertices[2] - vertices[0]))
        signed = 0.5 * float(np.linalg.det(J))
        if signed < MIN_AREA:
            raise MeshIntegrityError(f"degenerate or clockwise triangle (signed area {signed:.3e})")
        tangents = np.array([vertices[b] - vertices[a] for a, b in LOCAL_FACES])
        lengths = np.linalg.norm(tangents, axis=1)
        normals = np.column_stack((tangents[:, 1], -tangents[:, 0])) / lengths[:, None]
        return cls(
            vertices=vertices,
            jacobian=J,
            jacobian_inv=np.linalg.inv(J),
            area=signed,
            diameter=float(lengths.max()),
            face_lengths=lengths,
            normals=normals,
        )

    def to_physical(self, xi: np.ndarray) -> np.ndarray:
        return self.vertices[0] + np.asarray(xi) @ self.jacobian.T

    def to_reference(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x) - self.vertices[0]) @ self.jacobian_inv.T


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming triangular mesh with face connectivity.

    ``faces`` holds sorted vertex pairs (lo, hi); the global face parameter
    runs from lo to hi. ``face_elements[f] = (left, right)`` with ``right = -1``
    on the boundary; face normals point out of the left element.
    ``element_face_signs[K, i]`` is +1 when local face i of K runs lo -> hi.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    faces: np.ndarray
    face_elements: np.ndarray
    element_faces: np.ndarray
    element_face_signs: np.ndarray
    areas: np.ndarray
    diameters: np.ndarray
    subdivisions: int = 0

    @classmethod
    def from_arrays(cls, vertices, triangles, subdivisions: int = 0) -> "Mesh":
        vertices = np.array(vertices, dtype=float)
        triangles = np.array(triangles, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise MeshIntegrityError("vertices must be an (NV, 2) array")
        if triangles.ndim != 2 or triangles.shape[1] != 3:
            raise MeshIntegrityError("triangles must be an (NT, 3) array")
        if triangles.size and (triangles.min() < 0 or triangles.max() >= len(vertices)):
            raise MeshIntegrityError("triangle references a vertex that does not exist")

        nt = len(triangles)
        face_index: Dict[Tuple[int, int], int] = {}
        faces: List[Tuple[int, int]] = []
        incident: List[List[int]] = []
        element_faces = np.empty((nt, 3), dtype=np.int64)
        signs = np.empty((nt, 3), dtype=np.int64)
        areas = np.empty(nt)
        diameters = np.empty(nt)

        for K, tri in enumerate(triangles):
            geom = ElementGeometry.from_vertices(vertices[tri])
            areas[K] = geom.area
            diameters[K] = geom.diameter
            for i, (a, b) in enumerate(LOCAL_FACES):
                va, vb = int(tri[a]), int(tri[b])
                key = (min(va, vb), max(va, vb))
                f = face_index.get(key)
                if f is None:
                    f = len(faces)
                    face_index[key] = f
                    faces.append(key)
                    incident.append([])
                incident[f].append(K)
                element_faces[K, i] = f
                signs[K, i] = 1 if va < vb else -1

        face_elements = np.full((len(faces), 2), -1, dtype=np.int64)
        for f, elems in enumerate(incident):
            if len(elems) > 2:
                raise MeshIntegrityError(f"face {faces[f]} is shared by {len(elems)} elements")
            face_elements[f, : len(elems)] = elems

        mesh = cls(
            vertices=vertices,
            triangles=triangles,
            faces=np.array(faces, dtype=np.int64).reshape(-1, 2),
            face_elements=face_elements,
            element_faces=element_faces,
            element_face_signs=signs,
            areas=areas,
            diameters=diameters,
            subdivisions=subdivisions,
        )
        for arr in (vertices, triangles, mesh.faces, face_elements, element_faces, signs, areas, diameters):
            arr.setflags(write=False)
        logger.debug("mesh with %d vertices, %d triangles, %d faces", len(vertices), nt, len(faces))
        return mesh

    @property
    def num_elements(self) -> int:
        return len(self.triangles)

    @property
    def num_faces(self) -> int:
        return len(self.faces)

    @property
    def h(self) -> float:
        return float(self.diameters.max())

    @property
    def mesh_size(self) -> float:
        """h/sqrt(2); equals 1/n on the uniform unit-square family."""
        if self.subdivisions:
            return 1.0 / self.subdivisions
        return self.h / math.sqrt(2.0)

    def geometry(self, K: int) -> ElementGeometry:
        return ElementGeometry.from_vertices(self.vertices[self.triangles[K]])

    def face_normal(self, f: int) -> np.ndarray:
        """Unit normal of face f, pointing out of its left element."""
        left = int(self.face_elements[f, 0])
        i = int(np.flatnonzero(self.element_faces[left] == f)[0])
        return self.geometry(left).normals[i]

    def face_length(self, f: int) -> float:
        a, b = self.faces[f]
        return float(np.linalg.norm(self.vertices[b] - self.vertices[a]))

    def interior_index(self) -> np.ndarray:
        """Map from face id to position among interior faces, -1 on the boundary."""
        interior, _ = classify_faces(self)
        index = np.full(self.num_faces, -1, dtype=np.int64)
        index[interior] = np.arange(len(interior))
        return index


def classify_faces(mesh: Mesh) -> Tuple[np.ndarray, np.ndarray]:
    left = mesh.face_elements[:, 0]
    right = mesh.face_elements[:, 1]
    if np.any(left < 0):
        dangling = np.flatnonzero(left < 0)
        raise MeshIntegrityError(f"faces {dangling.tolist()} have no incident element")
    interior = np.flatnonzero(right >= 0)
    boundary = np.flatnonzero(right < 0)
    return interior, boundary


def build_uniform_square(n: int) -> Mesh:
    """Unit square split into n x n cells, each cut along its lower-left to upper-right diagonal."""
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise ConfigurationError(f"number of subdivisions must be a positive integer, got {n!r}")
    n = int(n)
    coords = np.arange(n + 1) / n
    xx, yy = np.meshgrid(coords, coords, indexing="xy")
    vertices = np.column_stack((xx.ravel(), yy.ravel()))

    def vid(i: int, j: int) -> int:
        return j * (n + 1) + i

    triangles = []
    for j in range(n):
        for i in range(n):
            v00, v10, v11, v01 = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            triangles.append((v00, v10, v11))
            triangles.append((v00, v11, v01))
    return Mesh.from_arrays(vertices, np.array(triangles), subdivisions=n)


def read_mesh_file(path: Union[str, Path]) -> Mesh:
    """Read ``NV NT`` followed by NV lines ``x y`` and NT lines ``i j k`` (0-based, counterclockwise)."""
    tokens = Path(path).read_text(encoding="ascii").split()
    try:
        nv, nt = int(tokens[0]), int(tokens[1])
    except (IndexError, ValueError) as exc:
        raise MeshIntegrityError(f"{path}: missing or malformed \"NV NT\" header") from exc
    body = tokens[2:]
    if len(body) != 2 * nv + 3 * nt:
        raise MeshIntegrityError(f"{path}: expected {2 * nv + 3 * nt} values after the header, found {len(body)}")
    try:
        vertices = np.array(body[: 2 * nv], dtype=float).reshape(nv, 2)
        triangles = np.array(body[2 * nv :], dtype=np.int64).reshape(nt, 3)
    except (IndexError, ValueError) as exc:
        raise MeshIntegrityError(f"{path}: malformed mesh file") from exc
    return Mesh.from_arrays(vertices, triangles)


def write_mesh_file(mesh: Mesh, path: Union[str, Path]) -> None:
    lines = [f"{len(mesh.vertices)} {mesh.num_elements}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    lines += [f"{i} {j} {k}" for i, j, k in mesh.triangles.tolist()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")
