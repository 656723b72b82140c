"""
Closed loop: forward Robin solve, optional trace noise, data completion,
λ recovery on Γ
"""

from typing import Any, Dict

from ..fem import solve_robin
from ..inverse import (
    CauchyData,
    MAX_DEGREE,
    RECOVERY_FLOOR,
    add_trace_noise,
    complete_cauchy_data,
    recover_robin,
    recover_robin_from_data,
)
from .base_experiment import BaseExperiment

NOISELESS_TOL = 0.02
NOISY_TOL = 0.2


class RecoveryExperiment(BaseExperiment):
    """Fields: noise (relative, default 0), reg (default 1e-8, ignored with noise), floor, complete, degree.

    Noisy data goes through recover_robin_from_data with series degree up
    to `degree`; noiseless data is completed and divided pointwise.
    """

    kind = "recovery"

    def run(self) -> Dict[str, Any]:
        p = self.problem
        u = solve_robin(p.spec, p.mesh)
        data = CauchyData.from_solution(u, p.spec)
        noise = float(self.case.get('noise', 0.0))
        floor = float(self.case.get('floor', RECOVERY_FLOOR))
        reg = float(self.case.get('reg', 1e-8))

        if not self.case.get('complete', True):
            rec = recover_robin(u, p.sigma, p.partition, floor)
        elif noise > 0:
            data = add_trace_noise(data, noise, self.rng)
            rec = recover_robin_from_data(p.mesh, p.sigma, p.partition, data, noise,
                                          max_degree=int(self.case.get('degree', MAX_DEGREE)), floor=floor)
        else:
            u_hat = complete_cauchy_data(p.mesh, p.sigma, p.partition, data, reg)
            rec = recover_robin(u_hat, p.sigma, p.partition, floor, data=data, reg=reg)

        err = rec.error_against(p.spec.lam)
        tol = float(self.case.get('tolerance', NOISELESS_TOL if noise == 0 else NOISY_TOL))
        verdict = "CONSISTENT" if err <= tol else "INCONSISTENT"
        return self.row(recovery_err=err, masked_fraction=rec.masked_fraction, verdict=verdict,
                        reg=rec.regularization, misfit=rec.misfit)
