"""
Conjugate-Beltrami reduction and the similarity factorization ∂u = e^Ψ Φ.

For an isotropic σ-harmonic u with σ-harmonic conjugate v, f = u + iv solves
∂̄f = ν·conj(∂f) with ν = (1−σ)/(1+σ). The normalized w = (1−ν²)^{1/2}∂f
satisfies ∂̄w = α·conj(w), α = ∂ν/(1−ν²), and the Cauchy transform of
α·conj(w)/w turns it into a holomorphic Φ = w·e^{−s}.

Also here: unique-continuation diagnostics (boundary log-integral, the
discrete Rolle set, boundary norm equivalences and the continuation probe).
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Union

import numpy as np

from .errors import CoefficientError, DomainError, InputError
from .fem import (
    BoundaryFunction,
    Conductivity,
    ScalarField,
    normal_derivative,
    sigma_conjugate,
    solve_dirichlet,
    tangential_derivative,
    w12_norm,
)
from .geometry import Mesh, build_polygon, distance_to_boundary
from .problem_schema import thread_cap

logger = logging.getLogger(__name__)

W_GUARD = 1e-10
LOG_FLOOR = 1e-300
PROBE_TOL = 1e-6
RATIO_CAP = 1e3
CAUCHY_BLOCK = 128

CONSISTENT = "CONSISTENT"
INCONSISTENT = "INCONSISTENT"
NOT_APPLICABLE = "NOT-APPLICABLE"


@dataclass(frozen=True, eq=False)
class ComplexField:
    values: np.ndarray
    mesh: Mesh

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        if v.shape != (self.mesh.n_nodes,):
            raise InputError(f"nodal field needs {self.mesh.n_nodes} values, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise InputError("complex field has non-finite values")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, mesh: Mesh, func: Callable[[np.ndarray], np.ndarray]) -> "ComplexField":
        return cls(np.broadcast_to(func(mesh.z), (mesh.n_nodes,)).astype(complex), mesh)

    @classmethod
    def from_scalar(cls, u: ScalarField) -> "ComplexField":
        return cls(u.values.astype(complex), u.mesh)

    @property
    def real(self) -> np.ndarray:
        return self.values.real

    @property
    def imag(self) -> np.ndarray:
        return self.values.imag

    def element_values(self) -> np.ndarray:
        return self.values[self.mesh.triangles].mean(axis=1)

    def l2_norm(self) -> float:
        """Nodal-average quadrature over elements"""
        ev = self.element_values()
        return float(np.sqrt(np.dot(self.mesh.areas, np.abs(ev) ** 2)))

    def trace(self) -> np.ndarray:
        return self.values[self.mesh.boundary_nodes]

    def with_values(self, values) -> "ComplexField":
        return ComplexField(values, self.mesh)


@dataclass(frozen=True, eq=False)
class FactorizationResult:
    psi: ComplexField
    phi: ComplexField
    dbar_residual: float
    reconstruction_error: float
    max_exp_minus_psi: float = 0.0
    guarded_nodes: int = 0
    conjugate_mismatch: float = 0.0
    boundary_imag_psi: Optional[float] = None
    trivial: bool = False
    du: Optional[ComplexField] = field(default=None, repr=False)

    def summary(self) -> dict:
        return {
            "dbar_residual": self.dbar_residual,
            "reconstruction_error": self.reconstruction_error,
            "max_exp_minus_psi": self.max_exp_minus_psi,
            "guarded_nodes": self.guarded_nodes,
            "conjugate_mismatch": self.conjugate_mismatch,
            "boundary_imag_psi": self.boundary_imag_psi,
            "trivial": self.trivial,
        }


# ----- Discrete derivatives -----

def _element_wirtinger(values: np.ndarray, mesh: Mesh) -> np.ndarray:
    """(M, 2) per-element (∂, ∂̄) of a P1 field"""
    g = np.einsum("eik,ei->ek", mesh.gradients, values[mesh.triangles])
    d = 0.5 * (g[:, 0] - 1j * g[:, 1])
    db = 0.5 * (g[:, 0] + 1j * g[:, 1])
    return np.column_stack([d, db])


def _to_nodes(element_values: np.ndarray, mesh: Mesh) -> np.ndarray:
    """Area-weighted average of piecewise-constant values over each node's star"""
    num = np.zeros(mesh.n_nodes, dtype=complex)
    den = np.zeros(mesh.n_nodes)
    a = np.repeat(mesh.areas, 3)
    np.add.at(num, mesh.triangles.ravel(), a * np.repeat(element_values, 3))
    np.add.at(den, mesh.triangles.ravel(), a)
    return num / den


def _values(f: Union[ScalarField, ComplexField]) -> np.ndarray:
    return np.asarray(f.values, dtype=complex)


def complex_derivative(u: Union[ScalarField, ComplexField]) -> ComplexField:
    """∂u = ½(∂ₓ₁ − i∂ₓ₂), piecewise constant averaged to nodes"""
    return ComplexField(_to_nodes(_element_wirtinger(_values(u), u.mesh)[:, 0], u.mesh), u.mesh)


def dbar(f: Union[ScalarField, ComplexField]) -> ComplexField:
    """∂̄f = ½(∂ₓ₁ + i∂ₓ₂), piecewise constant averaged to nodes"""
    return ComplexField(_to_nodes(_element_wirtinger(_values(f), f.mesh)[:, 1], f.mesh), f.mesh)


def _interior_elements(mesh: Mesh) -> np.ndarray:
    return ~mesh.is_boundary[mesh.triangles].any(axis=1)


def dbar_residual(f: ComplexField) -> float:
    """‖∂̄f‖ / ‖f‖ over elements away from ∂Ω"""
    mesh = f.mesh
    keep = _interior_elements(mesh)
    if not keep.any():
        keep = np.ones(len(mesh.triangles), dtype=bool)
    db = _element_wirtinger(f.values, mesh)[keep, 1]
    ev = f.element_values()[keep]
    a = mesh.areas[keep]
    denom = float(np.sqrt(np.dot(a, np.abs(ev) ** 2)))
    if denom == 0.0:
        return 0.0
    return float(np.sqrt(np.dot(a, np.abs(db) ** 2))) / denom


# ----- Beltrami coefficient -----

def beltrami_coefficient(sigma: Conductivity, mesh: Mesh) -> ComplexField:
    """ν = (1−σ)/(1+σ) at the nodes"""
    if not sigma.is_isotropic:
        raise CoefficientError("the conjugate Beltrami reduction needs an isotropic σ")
    s = sigma.nodal_values
    if np.any(s <= 0):
        raise CoefficientError("σ must be positive for ‖ν‖∞ < 1")
    nu = (1.0 - s) / (1.0 + s)
    return ComplexField(nu.astype(complex), mesh)


# ----- Cauchy transform -----

def _self_integrals(mesh: Mesh) -> np.ndarray:
    """(M, 3): ∫_T dA/(w − p_i) for each vertex p_i of each triangle T"""
    z = mesh.z[mesh.triangles]
    out = np.empty(z.shape, dtype=complex)
    for i in range(3):
        a = z[:, (i + 1) % 3] - z[:, i]
        b = z[:, (i + 2) % 3] - z[:, i]
        d = b - a
        out[:, i] = (np.conj(a) - np.conj(d) * a / d) * np.log(b / a) / 2j
    return out


def _centroid_block(zs: np.ndarray, centroids: np.ndarray, ga: np.ndarray) -> np.ndarray:
    return (ga[None, :] / (centroids[None, :] - zs[:, None])).sum(axis=1)


def cauchy_transform(g: ComplexField, points: Optional[np.ndarray] = None,
                     threads: Optional[int] = None) -> Union[ComplexField, np.ndarray]:
    """C[g](z) = −(1/π)∬ g(w)/(w − z) dm₂(w).

    Centroid rule on every element, replaced on the elements touching an
    evaluation node by the exact integral of 1/(w − z) times the element mean.
    Evaluates at the mesh nodes unless `points` are given.
    """
    mesh = g.mesh
    c = mesh.centroids[:, 0] + 1j * mesh.centroids[:, 1]
    ge = g.element_values()
    ga = ge * mesh.areas
    at_nodes = points is None
    zs = mesh.z if at_nodes else np.asarray(points, dtype=complex).ravel()

    blocks = [zs[i:i + CAUCHY_BLOCK] for i in range(0, len(zs), CAUCHY_BLOCK)]
    n_workers = max(1, min(threads or thread_cap(), len(blocks)))
    logger.debug(f"cauchy transform: {len(zs)} points, {len(c)} elements, {n_workers} threads")
    if n_workers == 1:
        parts = [_centroid_block(b, c, ga) for b in blocks]
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            parts = list(pool.map(lambda b: _centroid_block(b, c, ga), blocks))
    total = np.concatenate(parts) if parts else np.zeros(0, dtype=complex)

    if at_nodes:
        z_tri = mesh.z[mesh.triangles]
        centroid_part = mesh.areas[:, None] / (c[:, None] - z_tri)
        corr = ge[:, None] * (_self_integrals(mesh) - centroid_part)
        np.add.at(total, mesh.triangles.ravel(), corr.ravel())
        return ComplexField(-total / np.pi, mesh)
    return -total / np.pi


# ----- Factorization -----

def realify_on_boundary(result: FactorizationResult) -> FactorizationResult:
    """Shift a holomorphic h out of Ψ so that Im Ψ = 0 on ∂Ω.

    H is the harmonic extension of Im Ψ|∂Ω, K its harmonic conjugate and
    h = −K + iH. Ψ − h and Φ·e^h keep ∂u = e^Ψ Φ.
    """
    if result.trivial:
        return result
    mesh = result.psi.mesh
    H = solve_dirichlet(mesh, None, result.psi.trace().imag)
    K = sigma_conjugate(H, Conductivity.constant(mesh, 1.0))
    h = -K.values + 1j * H.values
    psi = result.psi.with_values(result.psi.values - h)
    phi = result.phi.with_values(result.phi.values * np.exp(h))
    imag_b = float(np.abs(psi.trace().imag).max())
    logger.debug(f"realify: max |Im Ψ| on ∂Ω = {imag_b:.3g}")
    return replace(
        result,
        psi=psi,
        phi=phi,
        dbar_residual=dbar_residual(phi),
        max_exp_minus_psi=float(np.exp(-psi.values.real).max()),
        boundary_imag_psi=imag_b,
    )


def similarity_factorize(u: ScalarField, sigma: Conductivity, realify: bool = False,
                         threads: Optional[int] = None) -> FactorizationResult:
    """∂u = e^Ψ Φ with Φ approximately holomorphic.

    Ψ = s − ½log(1−ν²) − log(1+σ) and Φ = w·e^{−s}, where s = C[α·conj(w)/w]
    and the quotient is zeroed where |w| < 1e-10·max|w|.
    """
    mesh = u.mesh
    nu = beltrami_coefficient(sigma, mesh)
    s_nodal = sigma.nodal_values
    du = complex_derivative(u)

    if np.abs(du.values).max() == 0.0 or np.ptp(u.values) == 0.0:
        logger.info("factorization: ∇u ≡ 0, returning the trivial factorization Φ ≡ 0")
        psi = ComplexField(-np.log1p(s_nodal) - 0.5 * np.log(1.0 - nu.real ** 2), mesh)
        zero = ComplexField(np.zeros(mesh.n_nodes), mesh)
        return FactorizationResult(psi, zero, 0.0, 0.0, float(np.exp(-psi.real).max()), trivial=True, du=du)

    v = sigma_conjugate(u, sigma)
    df_direct = complex_derivative(ComplexField(u.values + 1j * v.values, mesh))
    df = (1.0 + s_nodal) * du.values
    mismatch = float(np.linalg.norm(df_direct.values - df) / np.linalg.norm(df))
    logger.debug(f"factorization: ∂f vs (1+σ)∂u mismatch {mismatch:.3g}")

    one_minus = 1.0 - nu.real ** 2
    w = np.sqrt(one_minus) * df
    alpha = complex_derivative(nu).values / one_minus
    guard = W_GUARD * np.abs(w).max()
    small = np.abs(w) < guard
    q = np.zeros(mesh.n_nodes, dtype=complex)
    q[~small] = alpha[~small] * np.conj(w[~small]) / w[~small]
    if small.any():
        logger.warning(f"factorization: {int(small.sum())} nodes with |w| below {guard:.3g}, quotient set to 0")

    s = cauchy_transform(ComplexField(q, mesh), threads=threads).values
    psi = ComplexField(s - 0.5 * np.log(one_minus) - np.log1p(s_nodal), mesh)
    phi = ComplexField(w * np.exp(-s), mesh)

    recon = np.exp(psi.values) * phi.values
    rec_err = float(np.linalg.norm(du.values - recon) / np.linalg.norm(du.values))
    result = FactorizationResult(
        psi=psi,
        phi=phi,
        dbar_residual=dbar_residual(phi),
        reconstruction_error=rec_err,
        max_exp_minus_psi=float(np.exp(-psi.real).max()),
        guarded_nodes=int(small.sum()),
        conjugate_mismatch=mismatch,
        du=du,
    )
    logger.info(f"factorization: ∂̄Φ residual {result.dbar_residual:.3g}, reconstruction {rec_err:.3g}")
    return realify_on_boundary(result) if realify else result


# ----- Unique-continuation diagnostics -----

def boundary_log_integral(phi: Union[ComplexField, BoundaryFunction, np.ndarray], mesh: Mesh) -> float:
    """∫_∂Ω log|Φ| dΛ with |Φ| floored at 1e-300"""
    if isinstance(phi, ComplexField):
        vals = phi.trace()
    elif isinstance(phi, BoundaryFunction):
        vals = phi.values
    else:
        vals = np.asarray(phi)
        if vals.shape == (mesh.n_nodes,) and mesh.n_nodes != len(mesh.boundary_nodes):
            vals = vals[mesh.boundary_nodes]
    mod = np.maximum(np.abs(vals), LOG_FLOOR)
    return float(np.dot(mesh.boundary_weights, np.log(mod)))


@dataclass(frozen=True, eq=False)
class RolleSet:
    nodes: np.ndarray
    mask: np.ndarray
    diagnostic: str = ""

    def __len__(self) -> int:
        return len(self.nodes)


def _as_mask(B, n: int) -> np.ndarray:
    B = np.asarray(B)
    if B.dtype == bool:
        if B.shape != (n,):
            raise InputError(f"boundary subset mask needs {n} entries, got {B.shape}")
        return B.copy()
    mask = np.zeros(n, dtype=bool)
    mask[B.astype(int)] = True
    return mask


def rolle_zero_set(v: BoundaryFunction, B, tol: float) -> RolleSet:
    """Nodes of B with both neighbors in B where |∂_τ v| ≤ tol/h.

    B is a boolean mask or an index array over the boundary loop.
    """
    n = len(v.values)
    mask = _as_mask(B, n)
    off = mask & (np.abs(v.values) > tol)
    if off.any():
        logger.warning(f"rolle: {int(off.sum())} nodes of B have |v| > {tol:.3g}; dropped")
        mask &= ~off
    inner = mask & np.roll(mask, 1) & np.roll(mask, -1)
    if not inner.any():
        msg = "B has no three consecutive boundary nodes; isolated zeros carry no arclength"
        logger.info(f"rolle: {msg}")
        return RolleSet(np.zeros(0, dtype=int), np.zeros(n, dtype=bool), msg)
    h_b = float(v.mesh.boundary_segment_lengths.mean())
    dtv = tangential_derivative(v).values
    keep = inner & (np.abs(dtv) <= tol / h_b)
    msg = "" if keep.any() else "∂_τ v exceeds tol/h on every interior node of B"
    return RolleSet(np.flatnonzero(keep), keep, msg)


@dataclass(frozen=True)
class NormEquivalence:
    tangential: float
    normal: float
    maximal: float
    weighted_interior: float

    def as_triple(self):
        return self.tangential, self.normal, self.maximal


def _domain_of(mesh: Mesh):
    return mesh.domain if mesh.domain is not None else build_polygon(mesh.boundary_points)


def _recovered_gradient(u: ScalarField) -> np.ndarray:
    g = u.element_gradients()
    mesh = u.mesh
    return np.column_stack([_to_nodes(g[:, 0], mesh).real, _to_nodes(g[:, 1], mesh).real])


def nontangential_gradient_max(u: ScalarField, alpha: float = 2.0) -> BoundaryFunction:
    """sup of |∇u| over elements in the cone |x − ξ| < α·d(x, ∂Ω), per boundary node ξ"""
    if alpha <= 1.0:
        raise DomainError(f"aperture must exceed 1, got {alpha}")
    mesh = u.mesh
    gmod = np.linalg.norm(u.element_gradients(), axis=1)
    dist = distance_to_boundary(_domain_of(mesh), mesh.centroids)
    c = mesh.centroids[:, 0] + 1j * mesh.centroids[:, 1]
    xi = mesh.z[mesh.boundary_nodes]
    out = np.zeros(len(xi))
    for i in range(0, len(xi), CAUCHY_BLOCK):
        blk = xi[i:i + CAUCHY_BLOCK]
        inside = np.abs(c[None, :] - blk[:, None]) < alpha * dist[None, :]
        out[i:i + CAUCHY_BLOCK] = np.where(inside, gmod[None, :], 0.0).max(axis=1)
    # the elements at ξ itself
    pos = mesh.boundary_position
    touch = np.zeros(len(xi))
    tri_b = mesh.is_boundary[mesh.triangles]
    for k in range(3):
        nodes = mesh.triangles[tri_b[:, k], k]
        np.maximum.at(touch, pos[nodes], gmod[tri_b[:, k]])
    return BoundaryFunction(np.maximum(out, touch), mesh)


def norm_equivalence_report(u: ScalarField, sigma: Conductivity, alpha: float = 2.0) -> NormEquivalence:
    """‖∂_τu‖, ‖∂ₙu‖, ‖M_α∇u‖ on ∂Ω plus the distance-weighted interior norm"""
    mesh = u.mesh
    tang = tangential_derivative(u.trace()).l2_norm()
    norm = normal_derivative(u, sigma).l2_norm()
    maximal = nontangential_gradient_max(u, alpha).l2_norm()

    rg = _recovered_gradient(u)
    hess = np.stack([
        np.einsum("eik,ei->ek", mesh.gradients, rg[mesh.triangles, j]) for j in range(2)
    ], axis=1)
    dist = distance_to_boundary(_domain_of(mesh), mesh.centroids)
    weighted = float(np.dot(mesh.areas * dist, (hess ** 2).sum(axis=(1, 2))))
    interior = float(np.sqrt(weighted + w12_norm(u) ** 2))
    return NormEquivalence(tang, norm, maximal, interior)


@dataclass(frozen=True)
class ContinuationVerdict:
    verdict: str
    eps1: float
    eps2: float
    tol: float
    rolle_nodes: int = 0
    phi_on_rolle: Optional[float] = None
    log_integral: Optional[float] = None
    notes: str = ""

    def as_dict(self) -> dict:
        return {
            "verdict": self.verdict, "eps1": self.eps1, "eps2": self.eps2, "tol": self.tol,
            "rolle_nodes": self.rolle_nodes, "phi_on_rolle": self.phi_on_rolle,
            "log_integral": self.log_integral, "notes": self.notes,
        }


def continuation_probe(u: ScalarField, sigma: Conductivity, gamma, tol: Optional[float] = None,
                       chain: bool = True) -> ContinuationVerdict:
    """Check that small Cauchy data on γ comes with a small solution.

    ε₁ = max(|u|, |∂ₙu|) on γ and ε₂ = ‖u‖_{W^{1,2}}. With ε₁ ≤ tol the
    verdict is CONSISTENT when ε₂ ≤ 1e3·tol. With ε₁ above tol the probe is
    not triggered. Default tol is 1e-6 times the largest Cauchy datum on ∂Ω.
    """
    mesh = u.mesh
    mask = gamma.gamma_mask if hasattr(gamma, "gamma_mask") else _as_mask(gamma, len(mesh.boundary_nodes))
    if not mask.any():
        raise InputError("continuation probe needs a nonempty γ")
    tr = u.trace().values
    dn = normal_derivative(u, sigma).values
    if tol is None:
        tol = PROBE_TOL * max(np.abs(tr).max(), np.abs(dn).max())
    eps1 = float(max(np.abs(tr[mask]).max(), np.abs(dn[mask]).max()))
    eps2 = w12_norm(u)

    if eps1 > tol:
        return ContinuationVerdict(NOT_APPLICABLE, eps1, eps2, tol, notes="Cauchy data on γ above tol")

    verdict = CONSISTENT if eps2 <= RATIO_CAP * tol else INCONSISTENT
    rolle_n, phi_max, log_int, notes = 0, None, None, ""
    if chain and eps2 > 0 and sigma.is_isotropic:
        rolle = rolle_zero_set(u.trace(), mask, tol)
        rolle_n = len(rolle)
        try:
            fac = similarity_factorize(u, sigma)
            if rolle_n:
                phi_max = float(np.abs(fac.phi.trace()[rolle.nodes]).max())
            log_int = boundary_log_integral(fac.phi, mesh)
        except InputError as e:
            notes = f"factorization skipped: {e}"
        if rolle.diagnostic:
            notes = (notes + "; " if notes else "") + rolle.diagnostic
    logger.info(f"continuation probe: ε₁={eps1:.3g} ε₂={eps2:.3g} → {verdict}")
    return ContinuationVerdict(verdict, eps1, eps2, tol, rolle_n, phi_max, log_int, notes)


def remark_probe(u: ScalarField, sigma: Conductivity, gamma, fraction: float = 0.1) -> dict:
    """max |∂ₙu/u| over the nodes of γ where |u| ≤ fraction·max_γ|u|; exploratory"""
    mask = gamma.gamma_mask if hasattr(gamma, "gamma_mask") else _as_mask(gamma, len(u.mesh.boundary_nodes))
    tr = u.trace().values
    dn = normal_derivative(u, sigma).values
    top = np.abs(tr[mask]).max() if mask.any() else 0.0
    sel = mask & (np.abs(tr) <= fraction * top) & (tr != 0.0)
    ratio = float(np.abs(dn[sel] / tr[sel]).max()) if sel.any() else None
    return {"nodes": int(sel.sum()), "max_ratio": ratio, "max_u_on_gamma": float(top)}
