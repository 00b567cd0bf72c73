"""Structured triangulations of a two-layer periodic channel.

The domain is a rectangle [0, L] x [z_minus, z_plus] split by the horizontal
line z = 0 into an upper and a lower layer.  Meshes are built so that z = 0 is
a mesh line: no triangle straddles the interface, and every interface edge is
shared by exactly one triangle of each layer.  The left and right sides are
periodic; matching vertex pairs are recorded explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

__all__ = [
    "Geometry",
    "Subdomain",
    "EdgeTag",
    "Mesh",
    "build_layered_mesh",
    "validate_mesh",
    "mesh_size",
]


class Subdomain(IntEnum):
    """Layer label; the interface sits at z = 0 between the two."""

    LOWER = 0
    UPPER = 1


class EdgeTag(IntEnum):
    WALL_UPPER = 1      # z = z_plus
    WALL_LOWER = 2      # z = z_minus
    INTERFACE_UPPER = 3  # z = 0, seen from the upper layer
    INTERFACE_LOWER = 4  # z = 0, seen from the lower layer
    PERIODIC_LEFT = 5    # x = 0
    PERIODIC_RIGHT = 6   # x = L


@dataclass(frozen=True)
class Geometry:
    """Channel dimensions: period `length`, layer heights via z_plus/z_minus."""

    length: float = 100.0
    z_plus: float = 50.0
    z_minus: float = -5.0

    def __post_init__(self) -> None:
        if not (self.length > 0.0):
            raise ValueError(f"period length must be positive, got {self.length}")
        if not (self.z_plus > 0.0):
            raise ValueError(f"z_plus must be positive, got {self.z_plus}")
        if not (self.z_minus < 0.0):
            raise ValueError(f"z_minus must be negative, got {self.z_minus}")


@dataclass(frozen=True)
class Mesh:
    """Conforming triangulation of the two-layer channel.

    vertices            (n_vertices, 2) float64 coordinates (x, z)
    triangles           (n_triangles, 3) vertex indices, counter-clockwise
    triangle_subdomain  (n_triangles,) Subdomain value per triangle
    boundary_edges      (n_edges, 3) ints: vertex a, vertex b, EdgeTag value;
                        interface edges appear twice, once per side
    periodic_pairs      (n_pairs, 2) ints: (left vertex at x=0, right at x=L)
    interface_vertices  vertex indices on z = 0, ascending in x
    """

    geometry: Geometry
    vertices: np.ndarray
    triangles: np.ndarray
    triangle_subdomain: np.ndarray
    boundary_edges: np.ndarray
    periodic_pairs: np.ndarray
    interface_vertices: np.ndarray


def build_layered_mesh(geometry: Geometry, nx: int, nz_upper: int, nz_lower: int) -> Mesh:
    """Build the structured mesh: nx columns, nz_lower + nz_upper rows of
    quads, each quad split into two triangles along its SW-NE diagonal.
    """
    if nx < 1 or nz_upper < 1 or nz_lower < 1:
        raise ValueError(
            f"cell counts must be >= 1, got nx={nx}, nz_upper={nz_upper}, nz_lower={nz_lower}"
        )

    x = np.linspace(0.0, geometry.length, nx + 1)
    z = np.concatenate(
        [
            np.linspace(geometry.z_minus, 0.0, nz_lower + 1),
            np.linspace(0.0, geometry.z_plus, nz_upper + 1)[1:],
        ]
    )
    nz = nz_lower + nz_upper
    xx, zz = np.meshgrid(x, z)  # row j = constant z, column i = constant x
    vertices = np.column_stack([xx.ravel(), zz.ravel()])

    def vid(i: int | np.ndarray, j: int | np.ndarray):
        return j * (nx + 1) + i

    ii, jj = np.meshgrid(np.arange(nx), np.arange(nz))
    ii, jj = ii.ravel(), jj.ravel()
    v00 = vid(ii, jj)
    v10 = vid(ii + 1, jj)
    v01 = vid(ii, jj + 1)
    v11 = vid(ii + 1, jj + 1)
    # both triangles counter-clockwise: (v00, v10, v11) and (v00, v11, v01)
    triangles = np.empty((2 * nx * nz, 3), dtype=np.int64)
    triangles[0::2] = np.column_stack([v00, v10, v11])
    triangles[1::2] = np.column_stack([v00, v11, v01])
    subdomain = np.where(np.repeat(jj, 2) < nz_lower, Subdomain.LOWER, Subdomain.UPPER)
    subdomain = subdomain.astype(np.int64)

    cols = np.arange(nx)
    rows = np.arange(nz)
    edges = []
    # bottom wall z = z_minus and top wall z = z_plus
    edges.append(np.column_stack([vid(cols, 0), vid(cols + 1, 0),
                                  np.full(nx, EdgeTag.WALL_LOWER)]))
    edges.append(np.column_stack([vid(cols, nz), vid(cols + 1, nz),
                                  np.full(nx, EdgeTag.WALL_UPPER)]))
    # the interface row, tagged once per adjacent layer
    j0 = nz_lower
    edges.append(np.column_stack([vid(cols, j0), vid(cols + 1, j0),
                                  np.full(nx, EdgeTag.INTERFACE_LOWER)]))
    edges.append(np.column_stack([vid(cols, j0), vid(cols + 1, j0),
                                  np.full(nx, EdgeTag.INTERFACE_UPPER)]))
    # periodic sides
    edges.append(np.column_stack([vid(0, rows), vid(0, rows + 1),
                                  np.full(nz, EdgeTag.PERIODIC_LEFT)]))
    edges.append(np.column_stack([vid(nx, rows), vid(nx, rows + 1),
                                  np.full(nz, EdgeTag.PERIODIC_RIGHT)]))
    boundary_edges = np.concatenate(edges).astype(np.int64)

    periodic_pairs = np.column_stack(
        [vid(0, np.arange(nz + 1)), vid(nx, np.arange(nz + 1))]
    ).astype(np.int64)

    interface_vertices = vid(np.arange(nx + 1), j0).astype(np.int64)

    return Mesh(
        geometry=geometry,
        vertices=vertices,
        triangles=triangles,
        triangle_subdomain=subdomain,
        boundary_edges=boundary_edges,
        periodic_pairs=periodic_pairs,
        interface_vertices=interface_vertices,
    )


def _triangle_areas(mesh: Mesh) -> np.ndarray:
    p = mesh.vertices[mesh.triangles]  # (nT, 3, 2)
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def validate_mesh(mesh: Mesh) -> list[str]:
    """Check the structural invariants and return one message per violation.

    An empty list means the mesh is valid.  Checks: positive (counter-
    clockwise) triangles, no triangle straddling z = 0, a consistent
    subdomain label per triangle, interface edges shared by exactly one
    triangle per layer, boundary-edge tags covering the rectangle boundary,
    periodic pairs matching in z with x = 0 / x = L, and the interface vertex
    list sorted by x on z = 0.
    """
    bad: list[str] = []
    areas = _triangle_areas(mesh)
    for t in np.nonzero(areas <= 0.0)[0]:
        bad.append(f"triangle {t}: non-positive orientation (signed area {areas[t]:g})")

    zs = mesh.vertices[mesh.triangles][:, :, 1]
    crosses = np.logical_and(zs.min(axis=1) < 0.0, zs.max(axis=1) > 0.0)
    for t in np.nonzero(crosses)[0]:
        bad.append(f"triangle {t}: crosses the interface z=0")
    upper_mislabeled = np.logical_and(zs.max(axis=1) > 0.0,
                                      mesh.triangle_subdomain != Subdomain.UPPER)
    lower_mislabeled = np.logical_and(zs.min(axis=1) < 0.0,
                                      mesh.triangle_subdomain != Subdomain.LOWER)
    for t in np.nonzero(np.logical_and(~crosses, upper_mislabeled | lower_mislabeled))[0]:
        bad.append(f"triangle {t}: subdomain label does not match its z range")

    # every z=0 edge must belong to exactly one triangle of each layer
    on_iface = np.isclose(mesh.vertices[:, 1], 0.0)
    count_by_side: dict[tuple[int, int], list[int]] = {}
    for t, tri in enumerate(mesh.triangles):
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            if on_iface[a] and on_iface[b]:
                key = (min(a, b), max(a, b))
                count_by_side.setdefault(key, [0, 0])[mesh.triangle_subdomain[t]] += 1
    for (a, b), (n_lo, n_up) in sorted(count_by_side.items()):
        if n_lo != 1 or n_up != 1:
            bad.append(
                f"interface edge ({a},{b}): {n_lo} lower / {n_up} upper adjacent triangles"
            )

    g = mesh.geometry
    tag_line = {
        EdgeTag.WALL_UPPER: (1, g.z_plus),
        EdgeTag.WALL_LOWER: (1, g.z_minus),
        EdgeTag.INTERFACE_UPPER: (1, 0.0),
        EdgeTag.INTERFACE_LOWER: (1, 0.0),
        EdgeTag.PERIODIC_LEFT: (0, 0.0),
        EdgeTag.PERIODIC_RIGHT: (0, g.length),
    }
    for k, (a, b, tag) in enumerate(mesh.boundary_edges):
        axis, value = tag_line[EdgeTag(tag)]
        pa, pb = mesh.vertices[a], mesh.vertices[b]
        if not (np.isclose(pa[axis], value) and np.isclose(pb[axis], value)):
            bad.append(f"boundary edge {k}: tag {EdgeTag(tag).name} off its line")

    for k, (i, j) in enumerate(mesh.periodic_pairs):
        xi, zi = mesh.vertices[i]
        xj, zj = mesh.vertices[j]
        if not (np.isclose(xi, 0.0) and np.isclose(xj, g.length) and np.isclose(zi, zj)):
            bad.append(f"periodic pair {k}: ({i},{j}) does not match x=0 <-> x=L at equal z")

    iv = mesh.interface_vertices
    if not np.all(np.isclose(mesh.vertices[iv, 1], 0.0)):
        bad.append("interface vertex list contains vertices off z=0")
    if not np.all(np.diff(mesh.vertices[iv, 0]) > 0.0):
        bad.append("interface vertex list is not strictly ascending in x")

    return bad


def mesh_size(mesh: Mesh) -> float:
    """Mesh size h: the longest triangle edge over the whole mesh.

    For the right triangles produced by :func:`build_layered_mesh` the longest
    edge is the hypotenuse, which equals the circumscribed-circle diameter.
    """
    p = mesh.vertices[mesh.triangles]
    lengths = [
        np.linalg.norm(p[:, 1] - p[:, 0], axis=1),
        np.linalg.norm(p[:, 2] - p[:, 1], axis=1),
        np.linalg.norm(p[:, 0] - p[:, 2], axis=1),
    ]
    return float(np.max(lengths))
