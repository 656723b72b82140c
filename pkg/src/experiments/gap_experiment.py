"""
Two Robin problems that differ only in λ: does the Γ₀ trace tell them apart?
"""

from typing import Any, Dict

import numpy as np

from ..inverse import gap_trend, uniqueness_gap
from ..problem_schema import build_lambda
from .base_experiment import GAP_FLOOR, BaseExperiment


class GapExperiment(BaseExperiment):
    """Fields: lambda2 (same forms as lambda), optional trend_sizes"""

    kind = "gap"

    def second_spec(self):
        p = self.problem
        lam2 = self.case.get('lambda2', self.case['lambda'])
        vals = build_lambda(lam2, p.mesh, p.partition)
        return p.spec.with_lambda(p.spec.lam.with_values(vals))

    def run(self) -> Dict[str, Any]:
        p = self.problem
        spec2 = self.second_spec()
        gap = uniqueness_gap(p.spec, spec2, p.mesh)
        same = np.array_equal(p.spec.lam.values, spec2.lam.values)
        positive = gap > GAP_FLOOR
        verdict = "CONSISTENT" if positive != same else "INCONSISTENT"
        row = self.row(gap=gap, verdict=verdict, same_lambda=same, floor=GAP_FLOOR)
        sizes = self.case.get('trend_sizes')
        if sizes:
            row['trend'] = [(r.nodes, r.arc_length, r.gap) for r in gap_trend(p.spec, p.mesh, sizes)]
        return row
