"""
Unique continuation probe on a forward solution: small Cauchy data on γ
against the W^{1,2} size of the solution
"""

from typing import Any, Dict

import numpy as np

from ..factorization import continuation_probe, remark_probe
from ..geometry import partition_boundary
from ..problem_schema import gamma_spans
from .base_experiment import BaseExperiment


class ContinuationExperiment(BaseExperiment):
    """Fields: probe (γ as `gamma` or `gamma_angles`; default Γ₀), scale, tol, chain"""

    kind = "continuation"

    def probe_mask(self, p):
        if 'probe' in self.case:
            return partition_boundary(p.mesh, gamma_spans(self.case['probe'], p.mesh)).gamma_mask
        if p.partition is not None:
            return p.partition.gamma0_mask
        return np.ones(len(p.mesh.boundary_nodes), dtype=bool)

    def run(self) -> Dict[str, Any]:
        p = self.problem
        u = self.solve()
        scale = self.case.get('scale')
        if scale is not None:
            u = u.scaled(float(scale))
        tol = self.case.get('tol')
        res = continuation_probe(u, p.sigma, self.probe_mask(p),
                                 None if tol is None else float(tol),
                                 chain=bool(self.case.get('chain', True)))
        row = self.row(verdict=res.verdict, **res.as_dict())
        row['remark'] = remark_probe(u, p.sigma, self.probe_mask(p))
        return row
