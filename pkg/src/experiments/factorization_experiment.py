"""
Similarity-principle factorization ∂u = e^Ψ Φ of a forward solution
"""

from typing import Any, Dict

from ..factorization import boundary_log_integral, similarity_factorize
from .base_experiment import BaseExperiment

RECON_TOL = 1e-8


class FactorizationExperiment(BaseExperiment):
    """Fields: realify (bool), recon_tol"""

    kind = "factorization"

    def run(self) -> Dict[str, Any]:
        p = self.problem
        u = self.solve()
        fac = similarity_factorize(u, p.sigma, realify=bool(self.case.get('realify', False)))
        tol = float(self.case.get('recon_tol', RECON_TOL))
        verdict = "CONSISTENT" if fac.reconstruction_error <= tol else "INCONSISTENT"
        row = self.row(verdict=verdict, **fac.summary())
        if not fac.trivial:
            row['log_integral'] = boundary_log_integral(fac.phi, p.mesh)
        return row
