"""
Base experiment: one suite case in, one report row out
"""

from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

from ..fem import ScalarField, solve_neumann, solve_robin
from ..problem_schema import Problem, build_problem

GAP_FLOOR = 1e-10


class BaseExperiment:
    """Base class for suite experiments"""

    kind = "base"

    def __init__(self, case: Dict[str, Any], seed: int = 0, base: Path = Path(".")):
        self.case = dict(case)
        self.case_id = str(case.get('case_id', ''))
        self.seed = int(case.get('seed', seed))
        self.base = Path(base)
        self.rng = np.random.default_rng(self.seed)
        self._problem: Optional[Problem] = None

    @property
    def problem(self) -> Problem:
        if self._problem is None:
            self._problem = build_problem(self.case, self.base)
        return self._problem

    def solve(self) -> ScalarField:
        p = self.problem
        if p.neumann:
            return solve_neumann(p.mesh, p.sigma, p.g, conormal=p.conormal)
        return solve_robin(p.spec, p.mesh)

    def row(self, **values) -> Dict[str, Any]:
        out = {
            'case_id': self.case_id,
            'kind': self.kind,
            'gap': None,
            'recovery_err': None,
            'masked_fraction': None,
            'verdict': None,
        }
        out.update(values)
        return out

    def run(self) -> Dict[str, Any]:
        raise NotImplementedError("Subclasses must implement run()")
