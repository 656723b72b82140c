"""
Inverse Robin problem: complete Cauchy data measured on Γ₀, recover λ on Γ
from λ = −σ∂ₙu/u, and measure how well Γ₀ data separates two λ.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse.linalg as spla
from scipy.optimize import least_squares

from .errors import ConfigError, InputError, SolverError
from .fem import (
    BoundaryFunction,
    Conductivity,
    RobinSpec,
    ScalarField,
    conormal_flux,
    mass_matrix,
    pin_node,
    solve_robin,
    stiffness_matrix,
)
from .geometry import BoundaryPartition, Mesh

logger = logging.getLogger(__name__)

RECOVERY_FLOOR = 1e-3
CONDITION_LIMIT = 1e14
DISCREPANCY_FACTOR = 1.01
DEFAULT_REGS = tuple(10.0 ** -k for k in range(0, 13))
MAX_DEGREE = 3
ORDER_FACTOR = 1.5
OLS_MAX_EVALS = 40
LOG_LAMBDA_CLIP = 10.0
SEED_RANGE = (1e-2, 1e2)


@dataclass(frozen=True, eq=False)
class CauchyData:
    """Flux g = σ∂ₙu and trace on Γ₀; both span the loop and vanish off Γ₀"""

    g: BoundaryFunction
    trace: BoundaryFunction
    gamma0_mask: np.ndarray

    def __post_init__(self):
        n = len(self.gamma0_mask)
        if len(self.g.values) != n or len(self.trace.values) != n:
            raise InputError("Cauchy data flux and trace must live on the same boundary nodes")
        mask = np.asarray(self.gamma0_mask, dtype=bool)
        object.__setattr__(self, "gamma0_mask", mask)
        object.__setattr__(self, "g", self.g.restricted(mask))
        object.__setattr__(self, "trace", self.trace.restricted(mask))

    @classmethod
    def from_solution(cls, u: ScalarField, spec: RobinSpec) -> "CauchyData":
        return cls(spec.g, u.trace(), spec.partition.gamma0_mask)

    @property
    def is_zero(self) -> bool:
        return not (np.any(self.g.values) or np.any(self.trace.values))

    def with_trace(self, values) -> "CauchyData":
        return CauchyData(self.g, self.trace.with_values(values), self.gamma0_mask)


@dataclass(frozen=True, eq=False)
class RecoveryResult:
    lambda_hat: BoundaryFunction
    mask: np.ndarray
    misfit: Optional[float] = None
    regularization: Optional[float] = None
    gamma_mask: Optional[np.ndarray] = None
    degree: Optional[int] = None

    @property
    def trusted(self) -> np.ndarray:
        """Γ nodes where λ̂ is defined"""
        return self.gamma_mask & ~self.mask

    @property
    def masked_fraction(self) -> float:
        n = int(self.gamma_mask.sum())
        return float((self.gamma_mask & self.mask).sum()) / n if n else 1.0

    def error_against(self, lam: BoundaryFunction) -> float:
        """Relative L²(Γ) error of λ̂ over the trusted nodes"""
        t = self.trusted
        w = self.lambda_hat.weights[t]
        ref = np.asarray(lam.values)[t]
        num = np.dot(w, (self.lambda_hat.values[t] - ref) ** 2)
        return float(np.sqrt(num / max(np.dot(w, ref ** 2), 1e-300)))


# ----- Data completion -----

def _flux_to_solution(mesh: Mesh, sigma: Conductivity) -> np.ndarray:
    """Dense N×nb map from boundary conormal flux (weighted mean removed) to a Neumann solution"""
    w = mesh.boundary_weights
    nb = len(w)
    P = np.eye(nb) - np.outer(np.ones(nb), w) / w.sum()
    F = np.zeros((mesh.n_nodes, nb))
    F[mesh.boundary_nodes] = w[:, None] * P
    K = stiffness_matrix(mesh, sigma)
    pin = int(mesh.boundary_nodes[0])
    Kp, _ = pin_node(K, np.zeros(mesh.n_nodes), pin)
    F[pin] = 0.0
    return spla.splu(Kp.tocsc()).solve(F)


def complete_cauchy_data(mesh: Mesh, sigma: Conductivity, partition: BoundaryPartition,
                         data: CauchyData, reg: float = 1e-8) -> ScalarField:
    """Tikhonov completion of Cauchy data from Γ₀.

    Minimizes ‖tr u − trace‖² + ‖σ∂ₙu − g‖² on Γ₀ plus reg·‖u‖²_{W^{1,2}}
    over discrete σ-harmonic u, parametrized by their boundary flux.
    """
    if partition.gamma0_length <= 0:
        raise InputError("data completion needs Γ₀ of positive length")
    if reg < 0:
        raise InputError(f"regularization must be ≥ 0, got {reg}")
    if data.is_zero:
        return ScalarField(np.zeros(mesh.n_nodes), mesh)

    nb = len(mesh.boundary_nodes)
    w = mesh.boundary_weights
    m0 = data.gamma0_mask
    sw0 = np.sqrt(w[m0])
    A = _flux_to_solution(mesh, sigma)
    U = np.hstack([A, np.ones((mesh.n_nodes, 1))])
    Ab = U[mesh.boundary_nodes][m0]

    rows_trace = sw0[:, None] * Ab
    rows_flux = np.zeros((m0.sum(), nb + 1))
    rows_flux[np.arange(m0.sum()), np.flatnonzero(m0)] = sw0
    gauge = np.append(w / np.sqrt(w.sum()), 0.0)[None, :]
    J = np.vstack([rows_trace, rows_flux, gauge])
    r = np.concatenate([sw0 * data.trace.values[m0], sw0 * data.g.values[m0], [0.0]])

    G = stiffness_matrix(mesh) + mass_matrix(mesh)
    H = J.T @ J + reg * (U.T @ (G @ U))
    cond = float(np.linalg.cond(H))
    logger.debug(f"completion: {nb + 1} unknowns, reg={reg:g}, condition {cond:.3g}")
    if not np.isfinite(cond) or cond > CONDITION_LIMIT:
        raise SolverError(
            f"completion normal equations have condition {cond:.3g} > {CONDITION_LIMIT:g}; "
            "use a larger regularization",
            condition=cond,
        )
    x = scipy.linalg.solve(H, J.T @ r, assume_a="pos")
    return ScalarField(U @ x, mesh)


def data_misfit(u: ScalarField, sigma: Conductivity, data: CauchyData, trace_only: bool = False) -> float:
    """Relative L²(Γ₀) residual of the Cauchy data"""
    m0 = data.gamma0_mask
    w = u.mesh.boundary_weights * m0
    dt = u.trace().values - data.trace.values
    num = np.dot(w, dt ** 2)
    den = np.dot(w, data.trace.values ** 2)
    if not trace_only:
        dg = conormal_flux(u, sigma).values - data.g.values
        num += np.dot(w, dg ** 2)
        den += np.dot(w, data.g.values ** 2)
    return float(np.sqrt(num / den)) if den > 0 else float(np.sqrt(num))


def add_trace_noise(data: CauchyData, level: float, rng: np.random.Generator) -> CauchyData:
    """Gaussian noise of relative RMS `level` on the Γ₀ trace"""
    m0 = data.gamma0_mask
    t = data.trace.values
    rms = float(np.sqrt(np.mean(t[m0] ** 2))) if m0.any() else 0.0
    noisy = t.copy()
    noisy[m0] += level * rms * rng.standard_normal(int(m0.sum()))
    return data.with_trace(noisy)


@dataclass(frozen=True)
class SweepRow:
    reg: float
    misfit: float


def _noise_floor(data: CauchyData, noise: float) -> float:
    """Relative trace noise restated against the full Cauchy data norm"""
    t = data.trace.l2_norm()
    g = data.g.l2_norm()
    total = np.hypot(t, g)
    return noise * t / total if total > 0 else noise


def discrepancy_sweep(mesh: Mesh, sigma: Conductivity, partition: BoundaryPartition, data: CauchyData,
                      noise: float, regs: Sequence[float] = DEFAULT_REGS):
    """Largest reg whose Cauchy misfit is ≤ 1.01·noise level; returns (reg, u, rows).

    The trace noise is rescaled to the joint trace-and-flux norm that
    data_misfit reports, so the flux rows cannot hide an oversmoothed trace.
    """
    target = DISCREPANCY_FACTOR * _noise_floor(data, noise)
    rows: List[SweepRow] = []
    best = None
    for reg in sorted(regs, reverse=True):
        try:
            u = complete_cauchy_data(mesh, sigma, partition, data, reg)
        except SolverError as e:
            logger.info(f"discrepancy sweep: reg={reg:g} skipped ({e})")
            continue
        mis = data_misfit(u, sigma, data)
        rows.append(SweepRow(reg, mis))
        if mis <= target:
            best = (reg, u)
            break
    if best is None:
        if not rows:
            raise SolverError("every regularization in the sweep was ill-conditioned")
        pick = min(rows, key=lambda r: r.misfit)
        logger.warning(f"discrepancy sweep: no reg reaches misfit {target:.3g}; using reg={pick.reg:g}")
        best = (pick.reg, complete_cauchy_data(mesh, sigma, partition, data, pick.reg))
    return best[0], best[1], rows


# ----- Recovery -----

def gamma_coordinate(mesh: Mesh, partition: BoundaryPartition) -> np.ndarray:
    """Arclength along Γ scaled to [−1, 1], runs joined in loop order; NaN off Γ"""
    gm = partition.gamma_mask
    n = len(gm)
    t = np.full(n, np.nan)
    if not gm.any():
        return t
    start = int(np.flatnonzero(~gm)[0]) if not gm.all() else 0
    seg = mesh.boundary_segment_lengths
    pos, prev = 0.0, None
    for i in (start + np.arange(n)) % n:
        if not gm[i]:
            prev = None
            continue
        if prev is not None:
            pos += seg[prev]
        t[i] = pos
        prev = i
    return 2.0 * t / pos - 1.0 if pos > 0 else np.where(gm, 0.0, np.nan)


def _basis(mesh: Mesh, partition: BoundaryPartition, degree: int) -> np.ndarray:
    t = gamma_coordinate(mesh, partition)[partition.gamma_mask]
    return np.polynomial.legendre.legvander(t, min(degree, len(t) - 1))


def fit_robin_ratio(u: ScalarField, sigma: Conductivity, partition: BoundaryPartition,
                    degree: int = 2) -> BoundaryFunction:
    """λ as a Legendre series in Γ arclength minimizing ∫_Γ (σ∂ₙu + λu)² dΛ"""
    gm = partition.gamma_mask
    mesh = u.mesh
    tr = u.trace().values[gm]
    flux = conormal_flux(u, sigma).values[gm]
    sw = np.sqrt(mesh.boundary_weights[gm])
    if not np.any(sw * tr):
        raise InputError("λ cannot be fitted: u vanishes on all of Γ")
    B = _basis(mesh, partition, degree)
    coef, *_ = scipy.linalg.lstsq((sw * tr)[:, None] * B, -sw * flux)
    lam = np.zeros(len(gm))
    lam[gm] = B @ coef
    return BoundaryFunction(lam, mesh)


def recover_robin(u: ScalarField, sigma: Conductivity, partition: BoundaryPartition,
                  floor: float = RECOVERY_FLOOR, degree: Optional[int] = None,
                  data: Optional[CauchyData] = None, reg: Optional[float] = None) -> RecoveryResult:
    """λ̂ = −σ∂ₙu/u on Γ where |u| ≥ floor·max_Γ|u|; other nodes are masked.

    With degree the pointwise quotient is replaced by fit_robin_ratio. When
    the Cauchy data and regularization behind a completed u are given they
    are recorded in the result.
    """
    tr = u.trace().values
    flux = conormal_flux(u, sigma).values
    gmask = partition.gamma_mask
    top = float(np.abs(tr[gmask]).max()) if gmask.any() else 0.0
    small = np.abs(tr) < floor * top if top > 0 else np.ones_like(gmask)
    mask = small | ~gmask
    if not np.any(gmask & ~mask):
        raise InputError(
            "λ cannot be recovered: u vanishes (below the floor) on all of Γ, "
            "where λ = −σ∂ₙu/u is undetermined"
        )
    if degree is None:
        lam = np.zeros(len(tr))
        ok = ~mask
        lam[ok] = -flux[ok] / tr[ok]
    else:
        lam = fit_robin_ratio(u, sigma, partition, degree).values
    neg = gmask & ~mask & (lam < -floor)
    if neg.any():
        logger.warning(f"recover_robin: {int(neg.sum())} Γ nodes give negative λ̂")
    n_masked = int((gmask & mask).sum())
    if n_masked:
        logger.info(f"recover_robin: {n_masked} of {int(gmask.sum())} Γ nodes masked")
    misfit = data_misfit(u, sigma, data) if data is not None else None
    return RecoveryResult(BoundaryFunction(lam, u.mesh), mask, misfit=misfit, regularization=reg,
                          gamma_mask=gmask, degree=degree)


def recover_robin_from_data(mesh: Mesh, sigma: Conductivity, partition: BoundaryPartition, data: CauchyData,
                            noise: float = 0.0, max_degree: int = MAX_DEGREE, floor: float = RECOVERY_FLOOR,
                            reg: float = 1e-8) -> RecoveryResult:
    """λ from Γ₀ Cauchy data by output least squares.

    The completion (discrepancy-chosen reg when noise > 0) seeds a constant
    λ; log λ is then a Legendre series in Γ arclength whose coefficients
    minimize the Γ₀ trace misfit of the forward Robin solve. The degree
    grows until the misfit is within ORDER_FACTOR·noise.
    """
    if noise > 0:
        reg, u_hat, _ = discrepancy_sweep(mesh, sigma, partition, data, noise)
    else:
        u_hat = complete_cauchy_data(mesh, sigma, partition, data, reg)
    gm = partition.gamma_mask
    m0 = data.gamma0_mask
    sw0 = np.sqrt(mesh.boundary_weights[m0])
    target = data.trace.values[m0]
    scale = float(np.linalg.norm(sw0 * target))
    if scale == 0.0:
        raise InputError("λ cannot be recovered from a vanishing Γ₀ trace")

    def forward(B: np.ndarray, coef: np.ndarray) -> ScalarField:
        lam = np.zeros(len(gm))
        lam[gm] = np.exp(np.clip(B @ coef, -LOG_LAMBDA_CLIP, LOG_LAMBDA_CLIP))
        return solve_robin(RobinSpec(sigma, partition, BoundaryFunction(lam, mesh), data.g), mesh)

    seed = fit_robin_ratio(u_hat, sigma, partition, 0).values[gm]
    coef = np.array([np.log(np.clip(np.mean(seed), *SEED_RANGE))])
    best = None
    for degree in range(max_degree + 1):
        B = _basis(mesh, partition, degree)
        if degree > 0 and B.shape[1] <= len(coef):
            break
        coef = np.pad(coef, (0, B.shape[1] - len(coef)))

        def residual(c, B=B):
            return sw0 * (forward(B, c).trace().values[m0] - target) / scale

        sol = least_squares(residual, coef, x_scale=1.0, max_nfev=OLS_MAX_EVALS * len(coef))
        coef = sol.x
        misfit = float(np.linalg.norm(sol.fun))
        logger.debug(f"recover_robin_from_data: degree {degree}, trace misfit {misfit:.3g}")
        if best is None or misfit < best[0]:
            best = (misfit, degree, B, coef.copy())
        if misfit <= ORDER_FACTOR * noise:
            break

    _, degree, B, coef = best
    u_fit = forward(B, coef)
    lam = np.zeros(len(gm))
    lam[gm] = np.exp(np.clip(B @ coef, -LOG_LAMBDA_CLIP, LOG_LAMBDA_CLIP))
    tr = u_fit.trace().values
    top = float(np.abs(tr[gm]).max())
    mask = ~gm | (np.abs(tr) < floor * top)
    logger.info(f"recover_robin_from_data: degree {degree}, reg {reg:g}")
    return RecoveryResult(BoundaryFunction(lam, mesh), mask, misfit=data_misfit(u_fit, sigma, data),
                          regularization=reg, gamma_mask=gm, degree=degree)


# ----- Uniqueness -----

def _check_pair(spec1: RobinSpec, spec2: RobinSpec) -> None:
    s1, s2 = spec1.sigma.nodal_values, spec2.sigma.nodal_values
    if s1.shape != s2.shape or not np.allclose(s1, s2, rtol=0.0, atol=0.0):
        raise ConfigError("the two Robin problems must share σ")
    if not np.array_equal(spec1.partition.gamma_mask, spec2.partition.gamma_mask):
        raise ConfigError("the two Robin problems must share the partition")
    if not np.array_equal(spec1.g.values, spec2.g.values):
        raise ConfigError("the two Robin problems must share g")


def uniqueness_gap(spec1: RobinSpec, spec2: RobinSpec, mesh: Mesh, symmetric: bool = False) -> float:
    """‖u₁ − u₂‖ / ‖u₁‖ on Γ₀; the mean of both norms with `symmetric`"""
    _check_pair(spec1, spec2)
    u1 = solve_robin(spec1, mesh)
    u2 = solve_robin(spec2, mesh)
    m0 = spec1.partition.gamma0_mask
    d = u1.trace().with_values(u1.trace().values - u2.trace().values)
    n1 = u1.trace().l2_norm(m0)
    n2 = u2.trace().l2_norm(m0)
    denom = 0.5 * (n1 + n2) if symmetric else n1
    if denom == 0.0:
        return 0.0
    return d.l2_norm(m0) / denom


@dataclass(frozen=True)
class TrendRow:
    nodes: int
    arc_length: float
    gap: float


def gap_trend(spec: RobinSpec, mesh: Mesh, sizes: Sequence[int] = (2, 4, 8, 16),
              delta: float = 0.5) -> List[TrendRow]:
    """Gap against the number of consecutive Γ nodes where λ is raised by delta·max λ"""
    gnodes = spec.partition.gamma_nodes
    rows = []
    lam = spec.lam.values
    bump = delta * float(lam.max())
    w = mesh.boundary_weights
    for k in sizes:
        k = int(min(k, len(gnodes)))
        start = max(0, len(gnodes) // 2 - k // 2)
        sel = gnodes[start:start + k]
        lam2 = lam.copy()
        lam2[sel] += bump
        gap = uniqueness_gap(spec, spec.with_lambda(spec.lam.with_values(lam2)), mesh)
        rows.append(TrendRow(k, float(w[sel].sum()), gap))
        logger.debug(f"gap trend: {k} nodes → gap {gap:.3g}")
    return rows


def run_uniqueness_experiment(config, out_dir=None, seed: int = 0, threads=None):
    """Run a suite config (dict or YAML path) and return the SuiteReport.

    Failing cases become error rows; an empty case list gives an empty report.
    """
    from .suite_runner import SuiteRunner

    runner = SuiteRunner.from_config(config, seed=seed, threads=threads)
    return runner.run(out_dir)
