"""
Uniqueness gap under an anisotropic σ, with the Beltrami reduction to an
isotropic problem as supporting evidence
"""

import logging
from typing import Any, Dict

from ..anisotropic import (
    GRID_N,
    far_field_slope,
    mu_on_grid,
    pushforward_conductivity,
    robin_conormal_check,
    solve_beltrami,
)
from ..errors import NumericalError
from ..fem import solve_robin
from .gap_experiment import GapExperiment

logger = logging.getLogger(__name__)


class AnisotropicExperiment(GapExperiment):
    """GapExperiment fields plus grid_n; σ should be matrix valued"""

    kind = "anisotropic"

    def run(self) -> Dict[str, Any]:
        row = super().run()
        p = self.problem
        row['isotropic_input'] = p.sigma.is_isotropic
        try:
            bmap = solve_beltrami(mu_on_grid(p.sigma, p.mesh, int(self.case.get('grid_n', GRID_N))))
            push = pushforward_conductivity(p.sigma, p.mesh, bmap)
            row.update(
                k_bound=bmap.k_bound,
                beltrami_residual=bmap.residual,
                beltrami_iterations=bmap.iterations,
                far_field_slope=far_field_slope(bmap),
                matrix_discrepancy=push.matrix_discrepancy,
                inversion_error=push.inversion_error,
            )
            row.update(robin_conormal_check(solve_robin(p.spec, p.mesh), p.spec, bmap))
        except NumericalError as e:
            logger.warning(f"{self.case_id}: Beltrami diagnostics failed ({e})")
            row['beltrami_error'] = str(e)
        return row
