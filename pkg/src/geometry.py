"""
Polygonal domains, triangulations, boundary frames and boundary partitions Γ/Γ₀
"""

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import Delaunay

from .errors import GeometryError, PartitionError

logger = logging.getLogger(__name__)

Span = Tuple[float, float]


@dataclass(frozen=True, eq=False)
class Domain:
    """Simple counterclockwise polygon; arclength origin at vertices[0]"""

    vertices: np.ndarray
    closed: bool = True

    @property
    def edges(self) -> np.ndarray:
        return np.stack([self.vertices, np.roll(self.vertices, -1, axis=0)], axis=1)

    @property
    def edge_lengths(self) -> np.ndarray:
        e = self.edges
        return np.hypot(*(e[:, 1] - e[:, 0]).T)

    @property
    def perimeter(self) -> float:
        return float(self.edge_lengths.sum())

    @property
    def area(self) -> float:
        return 0.5 * _signed_area2(self.vertices)

    @property
    def centroid(self) -> complex:
        v = self.vertices
        w = np.roll(v, -1, axis=0)
        cross = v[:, 0] * w[:, 1] - w[:, 0] * v[:, 1]
        a6 = 3.0 * cross.sum()
        cx = ((v[:, 0] + w[:, 0]) * cross).sum() / a6
        cy = ((v[:, 1] + w[:, 1]) * cross).sum() / a6
        return complex(cx, cy)

    @property
    def vertex_s(self) -> np.ndarray:
        """Arclength coordinate of each vertex"""
        return np.concatenate([[0.0], np.cumsum(self.edge_lengths)[:-1]])

    def interior_angles(self) -> np.ndarray:
        v = self.vertices
        d_in = v - np.roll(v, 1, axis=0)
        d_out = np.roll(v, -1, axis=0) - v
        turn = np.arctan2(
            d_in[:, 0] * d_out[:, 1] - d_in[:, 1] * d_out[:, 0],
            (d_in * d_out).sum(axis=1),
        )
        return math.pi - turn

    def scaled(self, factor: float) -> "Domain":
        return Domain(self.vertices * factor)

    def point_at(self, s: np.ndarray) -> np.ndarray:
        """Boundary point(s) at arclength s (taken modulo the perimeter)"""
        s = np.mod(np.atleast_1d(np.asarray(s, dtype=float)), self.perimeter)
        starts = self.vertex_s
        idx = np.clip(np.searchsorted(starts, s, side="right") - 1, 0, len(starts) - 1)
        e = self.edges[idx]
        t = (s - starts[idx]) / self.edge_lengths[idx]
        return e[:, 0] + t[:, None] * (e[:, 1] - e[:, 0])


def _signed_area2(v: np.ndarray) -> float:
    w = np.roll(v, -1, axis=0)
    return float((v[:, 0] * w[:, 1] - w[:, 0] * v[:, 1]).sum())


def _segments_cross(p1, p2, q1, q2, tol: float) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    def on_segment(a, b, c):
        return (min(a[0], b[0]) - tol <= c[0] <= max(a[0], b[0]) + tol
                and min(a[1], b[1]) - tol <= c[1] <= max(a[1], b[1]) + tol)

    d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
    d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
    if ((d1 > tol and d2 < -tol) or (d1 < -tol and d2 > tol)) and \
       ((d3 > tol and d4 < -tol) or (d3 < -tol and d4 > tol)):
        return True
    if abs(d1) <= tol and on_segment(q1, q2, p1):
        return True
    if abs(d2) <= tol and on_segment(q1, q2, p2):
        return True
    if abs(d3) <= tol and on_segment(p1, p2, q1):
        return True
    if abs(d4) <= tol and on_segment(p1, p2, q2):
        return True
    return False


def build_polygon(vertices: Sequence[Sequence[float]]) -> Domain:
    """Validate a vertex loop and return it as a counterclockwise Domain.

    Clockwise input is reversed while keeping the first vertex as the
    arclength origin. Self-intersections raise GeometryError with the
    offending edge pair in `edges`.
    """
    v = np.asarray(vertices, dtype=float)
    if v.ndim != 2 or v.shape[1] != 2:
        raise GeometryError("vertices must be a list of 2D points")
    if len(v) > 1 and np.allclose(v[0], v[-1]):
        v = v[:-1]
    if len(v) < 3:
        raise GeometryError(f"a polygon needs at least 3 vertices, got {len(v)}")

    step = np.hypot(*(np.roll(v, -1, axis=0) - v).T)
    scale = float(np.ptp(v, axis=0).max())
    if scale == 0.0 or np.any(step <= 1e-14 * scale):
        bad = int(np.argmin(step))
        raise GeometryError(f"consecutive vertices {bad} and {(bad + 1) % len(v)} coincide")

    n = len(v)
    tol = 1e-12 * scale * scale
    for i in range(n):
        for j in range(i + 1, n):
            if j == i + 1 or (i == 0 and j == n - 1):
                continue
            if _segments_cross(v[i], v[(i + 1) % n], v[j], v[(j + 1) % n], tol):
                raise GeometryError(
                    f"polygon is not simple: edge {i} crosses edge {j}", edges=(i, j)
                )

    area2 = _signed_area2(v)
    if abs(area2) <= tol:
        raise GeometryError("polygon has zero area")
    if area2 < 0:
        logger.debug("clockwise input, reversing orientation")
        v = np.concatenate([v[:1], v[:0:-1]])
    return Domain(v)


# ----- Stock domains -----

def unit_square() -> Domain:
    return build_polygon([(0, 0), (1, 0), (1, 1), (0, 1)])


def rectangle(width: float, height: float) -> Domain:
    return build_polygon([(0, 0), (width, 0), (width, height), (0, height)])


def l_shape() -> Domain:
    """Unit square minus its upper-right quarter"""
    return build_polygon([(0, 0), (1, 0), (1, 0.5), (0.5, 0.5), (0.5, 1), (0, 1)])


def regular_ngon(n: int = 64, radius: float = 1.0) -> Domain:
    t = 2.0 * np.pi * np.arange(n) / n
    return build_polygon(np.column_stack([radius * np.cos(t), radius * np.sin(t)]))


def disk_polygon(n: int = 64) -> Domain:
    """The n-gon inscribed in the unit circle used by the disk experiments"""
    return regular_ngon(n, 1.0)


# ----- Point queries -----

def points_inside(domain: Domain, pts: np.ndarray) -> np.ndarray:
    """Even-odd crossing test, vectorized over points"""
    pts = np.atleast_2d(pts)
    x, y = pts[:, 0][:, None], pts[:, 1][:, None]
    a = domain.vertices[None, :, :]
    b = np.roll(domain.vertices, -1, axis=0)[None, :, :]
    ay, by = a[..., 1], b[..., 1]
    straddles = (ay > y) != (by > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_cross = a[..., 0] + (y - ay) * (b[..., 0] - a[..., 0]) / (by - ay)
    hits = straddles & (x < x_cross)
    return (hits.sum(axis=1) % 2) == 1


def distance_to_boundary(domain: Domain, pts: np.ndarray) -> np.ndarray:
    """Exact Euclidean distance to the polygon edges"""
    pts = np.atleast_2d(pts)
    e = domain.edges
    a, d = e[:, 0], e[:, 1] - e[:, 0]
    rel = pts[:, None, :] - a[None, :, :]
    t = np.clip((rel * d[None]).sum(axis=2) / (d * d).sum(axis=1)[None], 0.0, 1.0)
    proj = a[None] + t[..., None] * d[None]
    return np.hypot(*(pts[:, None, :] - proj).transpose(2, 0, 1)).min(axis=1)


def _max_feasible_h(domain: Domain) -> float:
    """Smallest polygon width measured normal to each edge"""
    v = domain.vertices
    widths = []
    for (p, q), length in zip(domain.edges, domain.edge_lengths):
        nrm = np.array([-(q - p)[1], (q - p)[0]]) / length
        widths.append(np.abs((v - p) @ nrm).max())
    return float(min(widths))


# ----- Mesh -----

@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming P1 triangulation with an ordered boundary loop"""

    nodes: np.ndarray
    triangles: np.ndarray
    boundary_nodes: np.ndarray
    boundary_s: np.ndarray
    perimeter: float
    domain: Optional[Domain] = field(default=None, compare=False)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def z(self) -> np.ndarray:
        return self.nodes[:, 0] + 1j * self.nodes[:, 1]

    @cached_property
    def areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def total_area(self) -> float:
        return float(self.areas.sum())

    @cached_property
    def h(self) -> float:
        p = self.nodes[self.triangles]
        lens = [np.hypot(*(p[:, i] - p[:, (i + 1) % 3]).T) for i in range(3)]
        return float(np.max(lens))

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.nodes[self.triangles].mean(axis=1)

    @cached_property
    def boundary_points(self) -> np.ndarray:
        return self.nodes[self.boundary_nodes]

    @cached_property
    def boundary_segment_lengths(self) -> np.ndarray:
        """Length of the segment from boundary node i to node i+1 (cyclic)"""
        p = self.boundary_points
        return np.hypot(*(np.roll(p, -1, axis=0) - p).T)

    @cached_property
    def boundary_weights(self) -> np.ndarray:
        seg = self.boundary_segment_lengths
        return 0.5 * (seg + np.roll(seg, 1))

    @cached_property
    def is_boundary(self) -> np.ndarray:
        mask = np.zeros(self.n_nodes, dtype=bool)
        mask[self.boundary_nodes] = True
        return mask

    @cached_property
    def boundary_position(self) -> np.ndarray:
        """Map node index -> position in the boundary loop (-1 for interior)"""
        pos = -np.ones(self.n_nodes, dtype=int)
        pos[self.boundary_nodes] = np.arange(len(self.boundary_nodes))
        return pos

    @cached_property
    def gradients(self) -> np.ndarray:
        """Per-element gradients of the three hat functions, shape (M, 3, 2)"""
        p = self.nodes[self.triangles]
        x, y = p[..., 0], p[..., 1]
        b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
        c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
        twoA = 2.0 * self.areas
        return np.stack([b / twoA[:, None], c / twoA[:, None]], axis=2)

    def boundary_edge_count(self) -> int:
        return len(self.boundary_nodes)


def triangulate(domain: Domain, h_target: float) -> Mesh:
    """Triangulate a polygon with target element size h_target.

    Boundary edges are split uniformly, the interior is filled with a
    triangular lattice kept clear of the boundary, and the point cloud is
    Delaunay-triangulated. Triangles outside the polygon are discarded.
    """
    if not h_target > 0:
        raise GeometryError(f"h_target must be positive, got {h_target}")
    h_max = _max_feasible_h(domain)
    if h_target > h_max:
        raise GeometryError(
            f"h_target={h_target:g} too coarse for this polygon; largest feasible h is {h_max:.6g}",
            max_h=h_max,
        )

    # boundary loop
    pts: List[np.ndarray] = []
    s_vals: List[float] = []
    s0 = 0.0
    for (p, q), length in zip(domain.edges, domain.edge_lengths):
        m = max(1, int(math.ceil(length / h_target - 1e-9)))
        t = np.arange(m) / m
        pts.append(p[None, :] + t[:, None] * (q - p)[None, :])
        s_vals.extend(s0 + t * length)
        s0 += length
    boundary = np.concatenate(pts)
    boundary_s = np.asarray(s_vals)

    # interior lattice
    lo, hi = domain.vertices.min(axis=0), domain.vertices.max(axis=0)
    dy = h_target * math.sqrt(3.0) / 2.0
    rows = np.arange(lo[1] + dy / 2, hi[1], dy)
    lattice = []
    for k, y in enumerate(rows):
        shift = 0.5 * h_target if k % 2 else 0.0
        xs = np.arange(lo[0] + shift + h_target / 2, hi[0], h_target)
        lattice.append(np.column_stack([xs, np.full_like(xs, y)]))
    interior = np.concatenate(lattice) if lattice else np.zeros((0, 2))
    if len(interior):
        keep = points_inside(domain, interior)
        interior = interior[keep]
        keep = distance_to_boundary(domain, interior) > 0.7 * h_target
        interior = interior[keep]

    points = np.concatenate([boundary, interior])
    tri = Delaunay(points).simplices
    cents = points[tri].mean(axis=1)
    tri = tri[points_inside(domain, cents)]

    # orient counterclockwise, drop slivers
    p = points[tri]
    area2 = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - \
            (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0])
    flip = area2 < 0
    tri[flip] = tri[flip][:, [0, 2, 1]]
    tri = tri[np.abs(area2) > 1e-12 * h_target * h_target]

    used = np.zeros(len(points), dtype=bool)
    used[tri.ravel()] = True
    if not used[: len(boundary)].all():
        raise GeometryError("triangulation lost boundary nodes; refine h_target")
    remap = -np.ones(len(points), dtype=int)
    remap[used] = np.arange(used.sum())

    mesh = Mesh(
        nodes=points[used],
        triangles=remap[tri],
        boundary_nodes=remap[np.arange(len(boundary))],
        boundary_s=boundary_s,
        perimeter=domain.perimeter,
        domain=domain,
    )
    _check_conforming(mesh)
    logger.debug(f"triangulated: {mesh.n_nodes} nodes, {len(mesh.triangles)} triangles, h={mesh.h:.4g}")
    return mesh


def disk_mesh(h_target: float, base: int = 64) -> Mesh:
    """Unit disk mesh whose boundary polygon is refined with h.

    The inscribed polygon has base·2^k sides, k the smallest with edge ≤ h/2,
    so the geometric error shrinks like h² alongside the interior mesh.
    """
    n = int(base)
    while 2.0 * np.sin(np.pi / n) > 0.5 * h_target:
        n *= 2
    return triangulate(disk_polygon(n), h_target)


def _check_conforming(mesh: Mesh) -> None:
    edges = np.sort(np.concatenate([mesh.triangles[:, [0, 1]],
                                    mesh.triangles[:, [1, 2]],
                                    mesh.triangles[:, [2, 0]]]), axis=1)
    uniq, counts = np.unique(edges, axis=0, return_counts=True)
    if counts.max() > 2:
        raise GeometryError("non-manifold triangulation")
    outer = {tuple(e) for e in uniq[counts == 1]}
    b = mesh.boundary_nodes
    loop = {tuple(sorted((int(b[i]), int(b[(i + 1) % len(b)])))) for i in range(len(b))}
    if outer != loop:
        raise GeometryError("boundary edges of the triangulation do not follow the polygon; refine h_target")


# ----- Boundary frame -----

@dataclass(frozen=True, eq=False)
class BoundaryFrame:
    tau: np.ndarray
    n: np.ndarray
    weights: np.ndarray

    @property
    def tau_complex(self) -> np.ndarray:
        return self.tau[:, 0] + 1j * self.tau[:, 1]

    @property
    def n_complex(self) -> np.ndarray:
        return self.n[:, 0] + 1j * self.n[:, 1]


def boundary_frames(mesh: Mesh) -> BoundaryFrame:
    """Per-node tangent/normal from the averaged adjacent edge directions"""
    p = mesh.boundary_points
    fwd = np.roll(p, -1, axis=0) - p
    fwd /= np.hypot(*fwd.T)[:, None]
    back = np.roll(fwd, 1, axis=0)
    tau = fwd + back
    tau /= np.hypot(*tau.T)[:, None]
    n = np.column_stack([tau[:, 1], -tau[:, 0]])
    return BoundaryFrame(tau=tau, n=n, weights=mesh.boundary_weights.copy())


# ----- Partition -----

@dataclass(frozen=True, eq=False)
class BoundaryPartition:
    """Γ and Γ₀ as node masks plus the snapped arclength spans"""

    gamma: Tuple[Span, ...]
    gamma0: Tuple[Span, ...]
    gamma_mask: np.ndarray
    gamma_length: float
    gamma0_length: float

    @property
    def gamma0_mask(self) -> np.ndarray:
        return ~self.gamma_mask

    @property
    def gamma_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.gamma_mask)

    @property
    def gamma0_nodes(self) -> np.ndarray:
        return np.flatnonzero(~self.gamma_mask)


def _runs(mask: np.ndarray) -> List[Tuple[int, int]]:
    """Cyclic runs of True as (first, last) positions"""
    n = len(mask)
    if mask.all():
        return [(0, n - 1)]
    if not mask.any():
        return []
    start = int(np.flatnonzero(~mask)[0])
    runs, cur = [], None
    for k in range(1, n + 1):
        i = (start + k) % n
        if mask[i] and cur is None:
            cur = i
        elif not mask[i] and cur is not None:
            runs.append((cur, (i - 1) % n))
            cur = None
    return runs


def _snapped_spans(mesh: Mesh, mask: np.ndarray) -> Tuple[Span, ...]:
    s, seg, L = mesh.boundary_s, mesh.boundary_segment_lengths, mesh.perimeter
    spans = []
    for first, last in _runs(mask):
        a = s[first] - 0.5 * seg[first - 1]
        b = s[last] + 0.5 * seg[last]
        spans.append((float(a % L), float(a % L + (b - a))))
    return tuple(sorted(spans))


def partition_boundary(mesh: Mesh, gamma_spans: Sequence[Span]) -> BoundaryPartition:
    """Snap arclength spans to boundary nodes and build Γ/Γ₀.

    A node belongs to Γ when its arclength coordinate lies in some span
    [a, b); spans may wrap past the perimeter.
    """
    L = mesh.perimeter
    tol = 1e-12 * L
    spans = [(float(a), float(b)) for a, b in gamma_spans]
    for a, b in spans:
        if not (b > a) or a < -tol or b - a > L + tol:
            raise PartitionError(f"invalid span [{a}, {b}) on boundary of length {L}")
    ordered = sorted(spans)
    for (a1, b1), (a2, b2) in zip(ordered, ordered[1:]):
        if a2 < b1 - tol:
            raise PartitionError(f"spans [{a1}, {b1}) and [{a2}, {b2}) overlap")

    s = mesh.boundary_s
    mask = np.zeros(len(s), dtype=bool)
    for a, b in spans:
        rel = np.mod(s - a + tol, L) - tol
        mask |= (rel >= -tol) & (rel < (b - a) - tol)

    w = mesh.boundary_weights
    if not mask.any():
        raise PartitionError("Γ is empty after snapping to boundary nodes; both parts need positive length")
    if mask.all():
        raise PartitionError("Γ₀ is empty after snapping to boundary nodes; both parts need positive length")

    part = BoundaryPartition(
        gamma=_snapped_spans(mesh, mask),
        gamma0=_snapped_spans(mesh, ~mask),
        gamma_mask=mask,
        gamma_length=float(w[mask].sum()),
        gamma0_length=float(w[~mask].sum()),
    )
    logger.debug(f"partition: |Γ|={part.gamma_length:.6g}, |Γ₀|={part.gamma0_length:.6g}")
    return part


# ----- Mesh file format -----

def write_mesh(mesh: Mesh, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"# mesh: {mesh.n_nodes} nodes, {len(mesh.triangles)} triangles"]
    if mesh.domain is not None:
        lines.append("polygon")
        lines += [f"{x:.17g} {y:.17g}" for x, y in mesh.domain.vertices]
    lines.append("nodes")
    lines += [f"{i} {x:.17g} {y:.17g}" for i, (x, y) in enumerate(mesh.nodes)]
    lines.append("triangles")
    lines += [f"{i} {j} {k}" for i, j, k in mesh.triangles]
    lines.append("boundary")
    lines += [f"{i} {s:.17g}" for i, s in zip(mesh.boundary_nodes, mesh.boundary_s)]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_mesh(path) -> Mesh:
    sections = {"polygon": [], "nodes": [], "triangles": [], "boundary": []}
    current = None
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line in sections:
            current = line
            continue
        if current is None:
            raise GeometryError(f"{path}: data before any section header: {line!r}")
        sections[current].append(line.split())

    try:
        nodes_raw = sorted(sections["nodes"], key=lambda r: int(r[0]))
        nodes = np.array([[float(r[1]), float(r[2])] for r in nodes_raw])
        tris = np.array([[int(c) for c in r[:3]] for r in sections["triangles"]], dtype=int)
        bnodes = np.array([int(r[0]) for r in sections["boundary"]], dtype=int)
        bs = np.array([float(r[1]) for r in sections["boundary"]])
    except (ValueError, IndexError) as e:
        raise GeometryError(f"{path}: malformed mesh file: {e}")
    if len(nodes) == 0 or len(tris) == 0 or len(bnodes) < 3:
        raise GeometryError(f"{path}: mesh file needs nodes, triangles and a boundary loop")

    domain = None
    if sections["polygon"]:
        domain = build_polygon([[float(c) for c in r[:2]] for r in sections["polygon"]])
    p = nodes[bnodes]
    perimeter = float(np.hypot(*(np.roll(p, -1, axis=0) - p).T).sum())
    mesh = Mesh(nodes=nodes, triangles=tris, boundary_nodes=bnodes, boundary_s=bs,
                perimeter=perimeter, domain=domain)
    if np.any(mesh.areas <= 0):
        raise GeometryError(f"{path}: triangles must be counterclockwise with positive area")
    _check_conforming(mesh)
    return mesh
