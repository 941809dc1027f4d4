"""Triangular meshes for star-shaped domains and P1 finite element assembly.

Star-shaped domains are meshed by mapping a reference polar grid through
the radial parametrization: rings of nodes at radius fractions j/K are
scaled by rho(t) along each ray. Ring node counts depend only on
quantized shape statistics, so small shape changes between successive
optimization iterations usually keep the connectivity (and node count)
identical, which lets the caller warm-start nodal fields by index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import MeshTooFine, NonPositiveRadius

MAX_NODES = 200_000
# quantization step for shape statistics entering ring-count formulas
_QUANT = 0.05


@dataclass
class MeshQuality:
    max_edge: float
    min_angle_deg: float


@dataclass
class TriMesh:
    """Conforming triangle mesh with an ordered boundary cycle.

    nodes : (N, 2) float array
    triangles : (T, 3) int array, counterclockwise
    boundary_nodes : (B,) int array, counterclockwise cycle on the boundary
    boundary_angles : (B,) float array, parameter of each boundary node
    """

    nodes: np.ndarray
    triangles: np.ndarray
    boundary_nodes: np.ndarray
    boundary_angles: np.ndarray
    _areas: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def boundary_edges(self) -> np.ndarray:
        b = self.boundary_nodes
        return np.column_stack([b, np.roll(b, -1)])

    @property
    def tri_areas(self) -> np.ndarray:
        if self._areas is None:
            p = self.nodes[self.triangles]
            self._areas = 0.5 * (
                (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0])
            )
        return self._areas

    @property
    def area(self) -> float:
        return float(self.tri_areas.sum())

    def quality(self) -> MeshQuality:
        p = self.nodes[self.triangles]
        e = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 1], p[:, 0] - p[:, 2]])
        lengths = np.hypot(e[..., 0], e[..., 1])
        max_edge = float(lengths.max())
        # law of cosines per corner
        a, b, c = lengths
        angles = []
        for x, y, z in ((a, b, c), (b, c, a), (c, a, b)):
            cosv = np.clip((x**2 + y**2 - z**2) / (2 * x * y), -1.0, 1.0)
            angles.append(np.arccos(cosv))
        min_angle = float(np.min(np.concatenate(angles)))
        return MeshQuality(max_edge=max_edge, min_angle_deg=math.degrees(min_angle))

    def validate(self) -> None:
        """Check orientation, conformity and the boundary cycle."""
        if np.any(self.tri_areas <= 0):
            raise ValueError("mesh contains non-positively oriented triangles")
        edges = {}
        for tri in self.triangles:
            for i in range(3):
                a, b = int(tri[i]), int(tri[(i + 1) % 3])
                edges[(min(a, b), max(a, b))] = edges.get((min(a, b), max(a, b)), 0) + 1
        if any(v > 2 for v in edges.values()):
            raise ValueError("mesh edge shared by more than two triangles")
        hull = {k for k, v in edges.items() if v == 1}
        cycle = set()
        for a, b in self.boundary_edges:
            cycle.add((min(int(a), int(b)), max(int(a), int(b))))
        if hull != cycle:
            raise ValueError("boundary cycle does not match the set of single-triangle edges")


def _quantize_up(x: float) -> float:
    return max(_QUANT, math.ceil(x / _QUANT - 1e-12) * _QUANT)


def _ring_counts(r_ref: float, l_ref: float, h0: float) -> tuple[int, list[int]]:
    k = max(2, math.ceil(r_ref / h0 - 1e-12))
    counts = [max(6, math.ceil(2.0 * math.pi * (j / k) * l_ref / h0 - 1e-12)) for j in range(1, k + 1)]
    return k, counts


def _annulus_triangles(inner: np.ndarray, outer: np.ndarray) -> list[tuple[int, int, int]]:
    """Triangulate between two concentric node rings by merging angle orders."""
    n_in, n_out = len(inner), len(outer)
    tris = []
    i = k = 0
    while i < n_in or k < n_out:
        adv_in = (i + 1) / n_in if i < n_in else math.inf
        adv_out = (k + 1) / n_out if k < n_out else math.inf
        if adv_in <= adv_out:
            tris.append((int(inner[i % n_in]), int(outer[k % n_out]), int(inner[(i + 1) % n_in])))
            i += 1
        else:
            tris.append((int(inner[i % n_in]), int(outer[k % n_out]), int(outer[(k + 1) % n_out])))
            k += 1
    return tris


def mesh_from_radial(rho, h: float) -> TriMesh:
    """Mesh the star-shaped domain {r <= rho(t)} with max edge length <= h.

    ``rho`` is a vectorized callable of the polar angle. Node counts are
    driven by quantized radius and boundary-metric bounds so that nearby
    shapes produce identical connectivity. Raises NonPositiveRadius for
    invalid shapes and MeshTooFine when the node budget is exceeded.
    """
    if h <= 0:
        raise ValueError("mesh size h must be positive")
    t_grid = np.linspace(0.0, 2.0 * math.pi, 4096, endpoint=False)
    rv = np.asarray(rho(t_grid), dtype=float)
    if rv.min() <= 0.0:
        raise NonPositiveRadius(f"rho reaches {rv.min():.3e} on the sampling grid")
    r_max = float(rv.max())
    # boundary metric sqrt(rho^2 + rho'^2) bounded via central differences
    dt = t_grid[1] - t_grid[0]
    drv = (np.roll(rv, -1) - np.roll(rv, 1)) / (2.0 * dt)
    l_max = float(np.sqrt(rv**2 + drv**2).max())
    r_ref = _quantize_up(r_max)
    l_ref = _quantize_up(l_max)

    h0 = h / 1.7
    last_inversion = None
    for _ in range(10):
        k, counts = _ring_counts(r_ref, l_ref, h0)
        n_total = 1 + sum(counts)
        if n_total > MAX_NODES:
            raise MeshTooFine(f"{n_total} nodes needed, budget is {MAX_NODES}")
        try:
            mesh = _build_polar(rho, k, counts)
        except NonPositiveRadius as exc:
            # steep radius variation can invert a coarse triangle; retry finer
            last_inversion = exc
            h0 *= 0.85
            continue
        if mesh.quality().max_edge <= h:
            return mesh
        h0 *= 0.85
    if last_inversion is not None:
        raise last_inversion
    raise MeshTooFine(f"could not reach max edge {h} within the refinement ladder")


def _build_polar(rho, k: int, counts: list[int]) -> TriMesh:
    rings = []
    nodes = [np.zeros((1, 2))]
    offset = 1
    for j, n_j in enumerate(counts, start=1):
        t = 2.0 * math.pi * np.arange(n_j) / n_j
        r = (j / k) * np.asarray(rho(t), dtype=float)
        nodes.append(np.column_stack([r * np.cos(t), r * np.sin(t)]))
        rings.append((np.arange(offset, offset + n_j), t))
        offset += n_j
    nodes = np.vstack(nodes)

    tris = []
    first_ring = rings[0][0]
    n1 = len(first_ring)
    for m in range(n1):
        tris.append((0, int(first_ring[m]), int(first_ring[(m + 1) % n1])))
    for (inner, _), (outer, _) in zip(rings[:-1], rings[1:]):
        tris.extend(_annulus_triangles(inner, outer))

    boundary_idx, boundary_t = rings[-1]
    mesh = TriMesh(
        nodes=nodes,
        triangles=np.asarray(tris, dtype=np.int64),
        boundary_nodes=boundary_idx.astype(np.int64),
        boundary_angles=boundary_t.copy(),
    )
    if np.any(mesh.tri_areas <= 0):
        raise NonPositiveRadius("radial map inverted a triangle; shape too irregular for this h")
    return mesh


def structured_rectangle_mesh(x0: float, y0: float, x1: float, y1: float, h: float) -> TriMesh:
    """Uniform right-triangle mesh of a rectangle with max edge <= h."""
    if h <= 0 or x1 <= x0 or y1 <= y0:
        raise ValueError("invalid rectangle or mesh size")
    target = h / math.sqrt(2.0)
    nx = max(1, math.ceil((x1 - x0) / target - 1e-12))
    ny = max(1, math.ceil((y1 - y0) / target - 1e-12))
    if (nx + 1) * (ny + 1) > MAX_NODES:
        raise MeshTooFine(f"{(nx + 1) * (ny + 1)} nodes needed, budget is {MAX_NODES}")
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    nodes = np.column_stack([gx.ravel(), gy.ravel()])

    def nid(i, j):
        return i * (ny + 1) + j

    tris = []
    for i in range(nx):
        for j in range(ny):
            a, b, c, d = nid(i, j), nid(i + 1, j), nid(i + 1, j + 1), nid(i, j + 1)
            tris.append((a, b, c))
            tris.append((a, c, d))

    bottom = [nid(i, 0) for i in range(nx + 1)]
    right = [nid(nx, j) for j in range(1, ny + 1)]
    top = [nid(i, ny) for i in range(nx - 1, -1, -1)]
    left = [nid(0, j) for j in range(ny - 1, 0, -1)]
    boundary = np.asarray(bottom + right + top + left, dtype=np.int64)
    cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
    angles = np.arctan2(nodes[boundary, 1] - cy, nodes[boundary, 0] - cx)
    return TriMesh(
        nodes=nodes,
        triangles=np.asarray(tris, dtype=np.int64),
        boundary_nodes=boundary,
        boundary_angles=angles,
    )


def triangle_gradients(mesh: TriMesh) -> tuple[np.ndarray, np.ndarray]:
    """P1 basis gradients per triangle.

    Returns (grads, areas) where grads has shape (T, 3, 2):
    grads[t, i] is the constant gradient of the barycentric basis of local
    vertex i on triangle t.
    """
    p = mesh.nodes[mesh.triangles]
    x = p[..., 0]
    y = p[..., 1]
    b = y[:, [1, 2, 0]] - y[:, [2, 0, 1]]
    c = x[:, [2, 0, 1]] - x[:, [1, 2, 0]]
    areas = mesh.tri_areas
    grads = np.stack([b, c], axis=-1) / (2.0 * areas)[:, None, None]
    return grads, areas


def assemble_mass(mesh: TriMesh) -> sp.csr_matrix:
    """Consistent P1 mass matrix: diag A/6, off-diag A/12 per triangle."""
    t = mesh.triangles
    areas = mesh.tri_areas
    local = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    vals = (areas[:, None, None] * local[None, :, :]).reshape(len(t), 9)
    # rows repeat pattern (i0 i0 i0 i1 i1 i1 i2 i2 i2), local matrix flattened row-major
    vals = vals.ravel()
    m = sp.coo_matrix((vals, (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes))
    return m.tocsr()


def assemble_stiffness(mesh: TriMesh) -> sp.csr_matrix:
    """P1 stiffness matrix from per-triangle basis gradients."""
    grads, areas = triangle_gradients(mesh)
    t = mesh.triangles
    local = np.einsum("tik,tjk->tij", grads, grads) * areas[:, None, None]
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    k = sp.coo_matrix((local.reshape(len(t), 9).ravel(), (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes))
    return k.tocsr()


def lumped_mass_vector(mesh: TriMesh, mass: sp.csr_matrix | None = None) -> np.ndarray:
    """Row sums of the mass matrix; entry i is the integral of basis i."""
    if mass is None:
        mass = assemble_mass(mesh)
    return np.asarray(mass.sum(axis=1)).ravel()


def boundary_integral(mesh: TriMesh, f: np.ndarray, g: np.ndarray) -> float:
    """Trapezoid integral of f*g along the boundary cycle.

    f and g are nodal vectors over the whole mesh; only boundary values
    contribute.
    """
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    b = mesh.boundary_nodes
    nxt = np.roll(b, -1)
    seg = mesh.nodes[nxt] - mesh.nodes[b]
    lengths = np.hypot(seg[:, 0], seg[:, 1])
    fg = f[b] * g[b]
    fg_next = f[nxt] * g[nxt]
    return float(0.5 * np.dot(lengths, fg + fg_next))


def boundary_length(mesh: TriMesh) -> float:
    ones = np.ones(mesh.n_nodes)
    return boundary_integral(mesh, ones, ones)


def save_mesh(mesh: TriMesh, path) -> None:
    """Plain-text mesh: header 'N T B', nodes, 1-based triangles, 1-based boundary edges."""
    lines = [f"{mesh.n_nodes} {len(mesh.triangles)} {len(mesh.boundary_nodes)}"]
    for x, y in mesh.nodes:
        lines.append(f"{float(x)!r} {float(y)!r}")
    for a, b, c in mesh.triangles:
        lines.append(f"{a + 1} {b + 1} {c + 1}")
    for a, b in mesh.boundary_edges:
        lines.append(f"{a + 1} {b + 1}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_mesh(path) -> TriMesh:
    """Read the plain-text format written by save_mesh."""
    with open(path, encoding="utf-8") as fh:
        tokens = fh.read().split()
    n, t, b = int(tokens[0]), int(tokens[1]), int(tokens[2])
    pos = 3
    nodes = np.array(tokens[pos : pos + 2 * n], dtype=float).reshape(n, 2)
    pos += 2 * n
    tris = np.array(tokens[pos : pos + 3 * t], dtype=np.int64).reshape(t, 3) - 1
    pos += 3 * t
    bedges = np.array(tokens[pos : pos + 2 * b], dtype=np.int64).reshape(b, 2) - 1
    # rebuild the boundary cycle from its edge list
    succ = {int(a): int(bb) for a, bb in bedges}
    start = int(bedges[0, 0])
    cycle = [start]
    while True:
        nxt = succ[cycle[-1]]
        if nxt == start:
            break
        cycle.append(nxt)
    boundary = np.asarray(cycle, dtype=np.int64)
    cx, cy = nodes.mean(axis=0)
    angles = np.arctan2(nodes[boundary, 1] - cy, nodes[boundary, 0] - cx)
    return TriMesh(nodes=nodes, triangles=tris, boundary_nodes=boundary, boundary_angles=angles)
