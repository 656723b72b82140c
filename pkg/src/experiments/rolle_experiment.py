"""
Rolle check on constructed boundary traces: v = dist(s, B)² vanishes on a
fat union of arcs B, and cos(kθ) has only isolated zeros
"""

from typing import Any, Dict, List, Tuple

import numpy as np

from ..factorization import rolle_zero_set
from ..fem import BoundaryFunction
from ..geometry import partition_boundary
from ..problem_schema import boundary_angles, build_mesh
from .base_experiment import BaseExperiment

CAPTURE_MIN = 0.9


def fat_cantor_spans(length: float, levels: int = 3, gap: float = 0.25, start: float = 0.0) -> List[Tuple[float, float]]:
    """Arcs left after removing a middle fraction from each arc, halving the fraction per level"""
    spans = [(start, start + length)]
    for level in range(levels):
        frac = gap / 2 ** level
        nxt = []
        for a, b in spans:
            mid, half = 0.5 * (a + b), 0.5 * frac * (b - a)
            nxt += [(a, mid - half), (mid + half, b)]
        spans = nxt
    return spans


def arc_distance(s: np.ndarray, spans, perimeter: float) -> np.ndarray:
    """Distance along the closed boundary loop from each s to the union of spans"""
    d = np.full(len(s), np.inf)
    for a, b in spans:
        rel = np.mod(s - a, perimeter)
        width = b - a
        inside = rel <= width
        out = np.minimum(rel - width, perimeter - rel)
        d = np.minimum(d, np.where(inside, 0.0, out))
    return d


class RolleExperiment(BaseExperiment):
    """Fields: domain/h or mesh, levels, gap, trace (fat|isolated), k, tol"""

    kind = "rolle"

    def run(self) -> Dict[str, Any]:
        mesh = build_mesh(self.case, self.base)
        tol = float(self.case.get('tol', 1e-12))
        L = mesh.perimeter

        if self.case.get('trace', 'fat') == 'isolated':
            k = int(self.case.get('k', 3))
            v = BoundaryFunction(np.cos(k * boundary_angles(mesh)), mesh)
            near = np.abs(v.values) <= np.abs(v.values).max() * 0.05
            rs = rolle_zero_set(v, near, tol)
            verdict = "CONSISTENT" if len(rs) == 0 else "INCONSISTENT"
            return self.row(verdict=verdict, rolle_nodes=len(rs), candidates=int(near.sum()),
                            diagnostic=rs.diagnostic)

        spans = fat_cantor_spans(L * float(self.case.get('extent', 0.5)),
                                 int(self.case.get('levels', 3)), float(self.case.get('gap', 0.25)))
        B = partition_boundary(mesh, spans).gamma_mask
        v = BoundaryFunction(arc_distance(mesh.boundary_s, spans, L) ** 2, mesh)
        rs = rolle_zero_set(v, B, tol)
        interior = B & np.roll(B, 1) & np.roll(B, -1)
        capture = float(rs.mask[interior].mean()) if interior.any() else 0.0
        verdict = "CONSISTENT" if capture >= CAPTURE_MIN else "INCONSISTENT"
        return self.row(verdict=verdict, capture=capture, rolle_nodes=len(rs),
                        arcs=len(spans), b_nodes=int(B.sum()))
