"""
P1 finite elements for the conductivity equation ∇·(σ∇u) = 0.

Neumann and Robin solvers, boundary traces and fluxes, σ-harmonic conjugates
and a Fourier-Galerkin reference solution on the unit disk.

Boundary integrals use node-support weights (half the adjacent boundary
segments), the same weights that measure Γ and Γ₀ in BoundaryPartition.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.special import roots_legendre

from .errors import CoefficientError, CompatibilityError, InputError, SolverError
from .geometry import BoundaryPartition, Mesh

logger = logging.getLogger(__name__)

RESIDUAL_TARGET = 1e-12
COMPAT_TOL = 1e-8
CONJUGATE_TOL = 0.25
CONJUGATE_TOL_MAX = 0.75


# ----- Fields -----

@dataclass(frozen=True, eq=False)
class ScalarField:
    values: np.ndarray
    mesh: Mesh

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.mesh.n_nodes,):
            raise InputError(f"nodal field needs {self.mesh.n_nodes} values, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise InputError("nodal field has non-finite values")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, mesh: Mesh, func: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> "ScalarField":
        x, y = mesh.nodes.T
        return cls(np.broadcast_to(func(x, y), (mesh.n_nodes,)).astype(float), mesh)

    def element_gradients(self) -> np.ndarray:
        """(M, 2) piecewise-constant gradient"""
        return np.einsum("eik,ei->ek", self.mesh.gradients, self.values[self.mesh.triangles])

    def trace(self) -> "BoundaryFunction":
        return BoundaryFunction(self.values[self.mesh.boundary_nodes], self.mesh)

    def scaled(self, factor: float) -> "ScalarField":
        return ScalarField(self.values * factor, self.mesh)

    def __sub__(self, other: "ScalarField") -> "ScalarField":
        return ScalarField(self.values - other.values, self.mesh)

    def __add__(self, other: "ScalarField") -> "ScalarField":
        return ScalarField(self.values + other.values, self.mesh)


@dataclass(frozen=True, eq=False)
class BoundaryFunction:
    """Values on the ordered boundary loop; weights are node-support lengths"""

    values: np.ndarray
    mesh: Optional[Mesh] = None
    measure_weights: Optional[np.ndarray] = None

    def __post_init__(self):
        v = np.asarray(self.values)
        v = v.astype(complex) if np.iscomplexobj(v) else v.astype(float)
        object.__setattr__(self, "values", v)
        if self.measure_weights is None:
            if self.mesh is None:
                raise InputError("BoundaryFunction needs a mesh or explicit weights")
            object.__setattr__(self, "measure_weights", self.mesh.boundary_weights)
        if len(self.measure_weights) != len(v):
            raise InputError(
                f"boundary function has {len(v)} values for {len(self.measure_weights)} boundary nodes"
            )

    @classmethod
    def from_function(cls, mesh: Mesh, func: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> "BoundaryFunction":
        x, y = mesh.boundary_points.T
        return cls(np.broadcast_to(func(x, y), x.shape).copy(), mesh)

    @classmethod
    def constant(cls, mesh: Mesh, value: float) -> "BoundaryFunction":
        return cls(np.full(len(mesh.boundary_nodes), float(value)), mesh)

    @property
    def weights(self) -> np.ndarray:
        return self.measure_weights

    def integral(self, mask: Optional[np.ndarray] = None) -> float:
        w = self.weights if mask is None else self.weights * mask
        return complex(np.dot(w, self.values)) if np.iscomplexobj(self.values) else float(np.dot(w, self.values))

    def l2_norm(self, mask: Optional[np.ndarray] = None) -> float:
        w = self.weights if mask is None else self.weights * mask
        return float(np.sqrt(np.dot(w, np.abs(self.values) ** 2)))

    def restricted(self, mask: np.ndarray) -> "BoundaryFunction":
        """Zero outside mask"""
        return BoundaryFunction(np.where(mask, self.values, 0.0), self.mesh, self.measure_weights)

    def scaled(self, factor: float) -> "BoundaryFunction":
        return BoundaryFunction(self.values * factor, self.mesh, self.measure_weights)

    def with_values(self, values) -> "BoundaryFunction":
        return BoundaryFunction(values, self.mesh, self.measure_weights)


@dataclass(frozen=True, eq=False)
class Conductivity:
    """Nodal σ: shape (N,) isotropic or (N, 2, 2) symmetric"""

    nodal_values: np.ndarray
    ellipticity_c: Optional[float] = None

    def __post_init__(self):
        v = np.asarray(self.nodal_values, dtype=float)
        object.__setattr__(self, "nodal_values", v)
        if v.ndim == 1:
            lo, hi = float(v.min()), float(v.max())
        elif v.ndim == 3 and v.shape[1:] == (2, 2):
            if np.abs(v[:, 0, 1] - v[:, 1, 0]).max() > 1e-12 * max(1.0, np.abs(v).max()):
                raise CoefficientError("anisotropic conductivity must be symmetric")
            eig = np.linalg.eigvalsh(v)
            lo, hi = float(eig.min()), float(eig.max())
        else:
            raise CoefficientError(f"conductivity must be (N,) or (N,2,2), got {v.shape}")
        if not np.all(np.isfinite(v)) or lo <= 0.0:
            raise CoefficientError("conductivity must be positive definite at every node")
        c = self.ellipticity_c
        if c is None:
            c = min(lo, 1.0 / hi)
            object.__setattr__(self, "ellipticity_c", c)
        if lo < c * (1 - 1e-12) or hi > (1.0 / c) * (1 + 1e-12):
            raise CoefficientError(
                f"ellipticity violated: values in [{lo:.4g}, {hi:.4g}] but c={c:.4g} requires [c, 1/c]"
            )

    @classmethod
    def constant(cls, mesh: Mesh, value: float) -> "Conductivity":
        return cls(np.full(mesh.n_nodes, float(value)))

    @classmethod
    def from_function(cls, mesh: Mesh, func) -> "Conductivity":
        x, y = mesh.nodes.T
        return cls(np.broadcast_to(func(x, y), x.shape).astype(float))

    @property
    def is_isotropic(self) -> bool:
        return self.nodal_values.ndim == 1

    def element_values(self, mesh: Mesh) -> np.ndarray:
        return self.nodal_values[mesh.triangles].mean(axis=1)

    def boundary_values(self, mesh: Mesh) -> np.ndarray:
        return self.nodal_values[mesh.boundary_nodes]

    def inverse(self) -> "Conductivity":
        if self.is_isotropic:
            return Conductivity(1.0 / self.nodal_values)
        return Conductivity(np.linalg.inv(self.nodal_values))

    def as_matrix(self) -> np.ndarray:
        if self.is_isotropic:
            return self.nodal_values[:, None, None] * np.eye(2)[None]
        return self.nodal_values


@dataclass(frozen=True, eq=False)
class RobinSpec:
    """σ∂ₙu = g on Γ₀ and σ∂ₙu + λu = 0 on Γ; lam and g span the whole loop"""

    sigma: Conductivity
    partition: BoundaryPartition
    lam: BoundaryFunction
    g: BoundaryFunction

    def __post_init__(self):
        mask = self.partition.gamma_mask
        lam = np.asarray(self.lam.values, dtype=float)
        if len(lam) == mask.sum() and len(lam) != len(mask):
            full = np.zeros(len(mask))
            full[mask] = lam
            lam = full
        if len(lam) != len(mask):
            raise CoefficientError("λ must be given on Γ or on the whole boundary loop")
        lam = np.where(mask, lam, 0.0)
        if np.any(lam[mask] < 0.0):
            raise CoefficientError("λ must be ≥ 0 a.e. on Γ")
        if not np.any(lam[mask] > 0.0):
            raise CoefficientError("λ must not vanish identically on Γ")
        object.__setattr__(self, "lam", BoundaryFunction(lam, self.g.mesh, self.g.measure_weights))
        object.__setattr__(self, "g", self.g.with_values(np.where(mask, 0.0, self.g.values)))

    def with_lambda(self, lam: BoundaryFunction) -> "RobinSpec":
        return RobinSpec(self.sigma, self.partition, lam, self.g)

    def with_g(self, g: BoundaryFunction) -> "RobinSpec":
        return RobinSpec(self.sigma, self.partition, self.lam, g)


# ----- Assembly -----

def stiffness_matrix(mesh: Mesh, sigma: Optional[Conductivity] = None) -> sp.csr_matrix:
    G = mesh.gradients
    A = mesh.areas
    if sigma is None:
        Ke = A[:, None, None] * np.einsum("eik,ejk->eij", G, G)
    elif sigma.is_isotropic:
        s = sigma.element_values(mesh)
        Ke = (s * A)[:, None, None] * np.einsum("eik,ejk->eij", G, G)
    else:
        S = sigma.element_values(mesh)
        Ke = A[:, None, None] * np.einsum("eik,ekl,ejl->eij", G, S, G)
    T = mesh.triangles
    rows = np.repeat(T, 3, axis=1).ravel()
    cols = np.tile(T, (1, 3)).ravel()
    n = mesh.n_nodes
    return sp.coo_matrix((Ke.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def mass_matrix(mesh: Mesh) -> sp.csr_matrix:
    local = (np.ones((3, 3)) + np.eye(3)) / 12.0
    Me = mesh.areas[:, None, None] * local[None]
    T = mesh.triangles
    rows = np.repeat(T, 3, axis=1).ravel()
    cols = np.tile(T, (1, 3)).ravel()
    n = mesh.n_nodes
    return sp.coo_matrix((Me.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def _boundary_diag(mesh: Mesh, nodal: np.ndarray) -> sp.csr_matrix:
    d = np.zeros(mesh.n_nodes)
    d[mesh.boundary_nodes] = mesh.boundary_weights * nodal
    return sp.diags(d).tocsr()


def _boundary_load(mesh: Mesh, nodal: np.ndarray) -> np.ndarray:
    f = np.zeros(mesh.n_nodes)
    f[mesh.boundary_nodes] = mesh.boundary_weights * nodal
    return f


def boundary_load(mesh: Mesh, func: Callable[[np.ndarray, np.ndarray], np.ndarray], order: int = 4,
                  sigma: Optional[Conductivity] = None) -> np.ndarray:
    """∫ g φₖ dΛ for each boundary node k, Gauss–Legendre on every segment.

    With sigma the integrand is σg, σ linear along each segment.
    """
    t, wq = roots_legendre(order)
    t = 0.5 * (t + 1.0)
    wq = 0.5 * wq
    p = mesh.boundary_points
    q = np.roll(p, -1, axis=0)
    pts = p[:, None, :] + t[None, :, None] * (q - p)[:, None, :]
    vals = np.broadcast_to(func(pts[..., 0], pts[..., 1]), pts.shape[:2]).astype(float)
    if sigma is not None:
        s = sigma.boundary_values(mesh)
        vals = vals * ((1.0 - t) * s[:, None] + t * np.roll(s, -1)[:, None])
    seg = mesh.boundary_segment_lengths
    left = seg * np.sum(vals * (1.0 - t) * wq, axis=1)
    right = seg * np.sum(vals * t * wq, axis=1)
    return left + np.roll(right, 1)


def _solve(A: sp.spmatrix, f: np.ndarray, label: str) -> np.ndarray:
    """Sparse LU first, conjugate gradients if the factorization fails"""
    A = A.tocsc()
    try:
        x = spla.factorized(A)(f)
        if np.all(np.isfinite(x)):
            return x
        logger.warning(f"{label}: direct solve produced non-finite values, retrying with CG")
    except RuntimeError as e:
        logger.warning(f"{label}: factorization failed ({e}), retrying with CG")
    x, info = spla.cg(A, f, rtol=RESIDUAL_TARGET, maxiter=20 * A.shape[0])
    if info != 0:
        diag = A.diagonal()
        raise SolverError(
            f"{label}: iterative solve did not converge (info={info}); "
            f"diagonal range [{diag.min():.3g}, {diag.max():.3g}]",
            condition=float(diag.max() / max(diag.min(), 1e-300)),
        )
    return x


def _check_residual(A, x, f, label: str, tol: float = 1e-10) -> float:
    scale = max(np.linalg.norm(f), np.linalg.norm(abs(A) @ np.abs(x)), 1e-300)
    res = float(np.linalg.norm(A @ x - f) / scale)
    if res > tol:
        logger.warning(f"{label}: relative residual {res:.3g} above {tol:g}")
    if res > 1e-6:
        raise SolverError(f"{label}: relative residual {res:.3g}; check the mesh and σ", residual=res)
    logger.debug(f"{label}: relative residual {res:.3g}")
    return res


def interior_residual(u: ScalarField, sigma: Conductivity) -> float:
    """Relative size of the interior rows of K u"""
    K = stiffness_matrix(u.mesh, sigma)
    inner = ~u.mesh.is_boundary
    r = (K @ u.values)[inner]
    scale = (abs(K) @ np.abs(u.values))[inner]
    return float(np.linalg.norm(r) / max(np.linalg.norm(scale), 1e-300))


def node_masses(mesh: Mesh) -> np.ndarray:
    """∫φ_i over Ω"""
    m = np.zeros(mesh.n_nodes)
    np.add.at(m, mesh.triangles.ravel(), np.repeat(mesh.areas / 3.0, 3))
    return m


def pin_node(K: sp.spmatrix, f: np.ndarray, pin: int) -> Tuple[sp.csc_matrix, np.ndarray]:
    K = K.tolil()
    f = f.copy()
    K[pin, :] = 0.0
    K[:, pin] = 0.0
    K[pin, pin] = 1.0
    f[pin] = 0.0
    return K.tocsc(), f


# ----- Solvers -----

def _as_boundary_values(mesh: Mesh, g) -> np.ndarray:
    vals = g.values if isinstance(g, BoundaryFunction) else np.asarray(g, dtype=float)
    if vals.shape != (len(mesh.boundary_nodes),):
        raise InputError(f"boundary data needs {len(mesh.boundary_nodes)} values, got {vals.shape}")
    return np.asarray(vals, dtype=float)


def solve_neumann(mesh: Mesh, sigma: Conductivity,
                  g: Union[BoundaryFunction, Sequence[float], Callable[[np.ndarray, np.ndarray], np.ndarray]],
                  conormal: bool = False, anchor: Optional[int] = None) -> ScalarField:
    """Solve ∇·(σ∇u) = 0 with ∂ₙu = g (or σ∂ₙu = g when conormal).

    g is nodal boundary data (lumped load) or a callable g(x, y) integrated
    by boundary_load. The solution has zero mean over Ω, or u(anchor) = 0
    when an anchor node is given. Data failing ∫ gσ dΛ = 0 by more than
    1e-8·‖g‖‖σ‖ is rejected; smaller defects are projected out.
    """
    w = mesh.boundary_weights
    if callable(g):
        flux_sigma = None if conormal or not sigma.is_isotropic else sigma
        g = boundary_load(mesh, g, sigma=flux_sigma) / w
        conormal = True
    g_vals = _as_boundary_values(mesh, g)
    if conormal or not sigma.is_isotropic:
        q = g_vals.copy()
        s_norm = 1.0
    else:
        s_b = sigma.boundary_values(mesh)
        q = s_b * g_vals
        s_norm = float(np.sqrt(np.dot(w, s_b ** 2)))

    defect = float(np.dot(w, q))
    g_norm = float(np.sqrt(np.dot(w, g_vals ** 2)))
    tol = COMPAT_TOL * max(g_norm * s_norm, 1e-300)
    if abs(defect) > tol and g_norm > 0:
        raise CompatibilityError(
            f"Neumann data is incompatible: ⟨g, σ⟩ = {defect:.3g} (tolerance {tol:.3g}); "
            "the flux through ∂Ω must vanish",
            residual=defect,
        )
    if defect != 0.0:
        logger.debug(f"projecting out compatibility defect {defect:.3g}")
        q = q - defect / w.sum()

    K = stiffness_matrix(mesh, sigma)
    f = _boundary_load(mesh, q)
    pin = int(anchor) if anchor is not None else int(mesh.boundary_nodes[0])
    Kp, fp = pin_node(K, f, pin)
    u = _solve(Kp, fp, "neumann")
    _check_residual(K, u, f, "neumann")

    if anchor is None:
        m = node_masses(mesh)
        u = u - np.dot(m, u) / m.sum()
    else:
        u = u - u[pin]
    return ScalarField(u, mesh)


def solve_dirichlet(mesh: Mesh, sigma: Optional[Conductivity], trace: Sequence[float]) -> ScalarField:
    """σ-harmonic extension of boundary values"""
    K = stiffness_matrix(mesh, sigma)
    b = mesh.boundary_nodes
    inner = np.flatnonzero(~mesh.is_boundary)
    u = np.zeros(mesh.n_nodes)
    u[b] = np.asarray(trace, dtype=float)
    if len(inner):
        rhs = -(K[inner][:, b] @ u[b])
        u[inner] = _solve(K[inner][:, inner], rhs, "dirichlet")
    return ScalarField(u, mesh)


def robin_system(spec: RobinSpec, mesh: Mesh) -> Tuple[sp.csr_matrix, np.ndarray]:
    K = stiffness_matrix(mesh, spec.sigma)
    R = _boundary_diag(mesh, spec.lam.values)
    f = _boundary_load(mesh, spec.g.values)
    return (K + R).tocsr(), f


def solve_robin(spec: RobinSpec, mesh: Mesh) -> ScalarField:
    """∫σ∇u·∇ψ + ∫_Γ λuψ = ∫_Γ₀ gψ for all P1 ψ"""
    if spec.partition.gamma_length <= 0 or spec.partition.gamma0_length <= 0:
        raise CoefficientError("both Γ and Γ₀ need positive length")
    A, f = robin_system(spec, mesh)
    u = _solve(A, f, "robin")
    _check_residual(A, u, f, "robin")
    field_ = ScalarField(u, mesh)
    lhs, rhs = flux_balance(field_, spec)
    scale = max(abs(rhs), abs(lhs), np.linalg.norm(f), 1e-300)
    if abs(lhs - rhs) > 1e-8 * scale:
        logger.warning(f"robin: flux balance off by {abs(lhs - rhs) / scale:.3g}")
    return field_


def flux_balance(u: ScalarField, spec: RobinSpec) -> Tuple[float, float]:
    """(∫_Γ λu dΛ, ∫_Γ₀ g dΛ)"""
    w = u.mesh.boundary_weights
    tr = u.values[u.mesh.boundary_nodes]
    return float(np.dot(w, spec.lam.values * tr)), float(np.dot(w, spec.g.values))


def is_symmetric_positive_definite(A: sp.spmatrix) -> bool:
    """Dense Cholesky; meant for test-sized systems"""
    dense = A.toarray()
    if not np.allclose(dense, dense.T, rtol=0.0, atol=1e-12 * np.abs(dense).max()):
        return False
    try:
        scipy.linalg.cholesky(dense, lower=True)
    except np.linalg.LinAlgError:
        return False
    return True


# ----- Boundary quantities -----

def conormal_flux(u: ScalarField, sigma: Conductivity) -> BoundaryFunction:
    """The boundary function φ with Σ w φ ψ = ∫ σ∇u·∇ψ for boundary hats ψ"""
    K = stiffness_matrix(u.mesh, sigma)
    r = (K @ u.values)[u.mesh.boundary_nodes]
    return BoundaryFunction(r / u.mesh.boundary_weights, u.mesh)


def normal_derivative(u: ScalarField, sigma: Conductivity) -> BoundaryFunction:
    """∂ₙu for isotropic σ, n·σ∇u for anisotropic σ"""
    res = interior_residual(u, sigma)
    if res > 1e-6:
        logger.debug(f"normal_derivative: interior residual {res:.3g}, field is not a discrete solution")
    flux = conormal_flux(u, sigma)
    if sigma.is_isotropic:
        return flux.with_values(flux.values / sigma.boundary_values(u.mesh))
    return flux


def tangential_derivative(trace: BoundaryFunction) -> BoundaryFunction:
    """Periodic centered difference in arclength"""
    if trace.mesh is None:
        raise InputError("tangential_derivative needs the boundary loop geometry")
    seg = trace.mesh.boundary_segment_lengths
    v = trace.values
    d = (np.roll(v, -1) - np.roll(v, 1)) / (seg + np.roll(seg, 1))
    return trace.with_values(d)


def conjugate_tolerance(mesh: Mesh) -> float:
    """Curl-misfit gate for sigma_conjugate; the P1 misfit of a true solution is O(h)"""
    return min(CONJUGATE_TOL + 1.5 * mesh.h, CONJUGATE_TOL_MAX)


def sigma_conjugate(u: ScalarField, sigma: Conductivity, tol: Optional[float] = None) -> ScalarField:
    """v with ∇v ≈ (−σ∂₂u, σ∂₁u), least squares over elements, ∫_∂Ω v dΛ = 0.

    Fields whose relative gradient misfit exceeds tol (conjugate_tolerance
    of the mesh by default) are rejected as non-solutions.
    """
    if not sigma.is_isotropic:
        raise CoefficientError("sigma_conjugate needs an isotropic conductivity")
    mesh = u.mesh
    grad = u.element_gradients()
    s = sigma.element_values(mesh)
    target = np.column_stack([-s * grad[:, 1], s * grad[:, 0]])

    K = stiffness_matrix(mesh)
    b = np.zeros(mesh.n_nodes)
    np.add.at(b, mesh.triangles.ravel(),
              (mesh.areas[:, None] * np.einsum("eik,ek->ei", mesh.gradients, target)).ravel())
    pin = int(mesh.boundary_nodes[0])
    Kp, bp = pin_node(K, b, pin)
    v = _solve(Kp, bp, "sigma_conjugate")

    t_norm = float(np.sqrt(np.dot(mesh.areas, (target ** 2).sum(axis=1))))
    if t_norm > 0:
        gv = np.einsum("eik,ei->ek", mesh.gradients, v[mesh.triangles])
        misfit = float(np.sqrt(np.dot(mesh.areas, ((gv - target) ** 2).sum(axis=1)))) / t_norm
        if tol is None:
            tol = conjugate_tolerance(mesh)
        logger.debug(f"sigma_conjugate: gradient misfit {misfit:.3g} (gate {tol:.3g})")
        if misfit > CONJUGATE_TOL:
            logger.warning(f"sigma_conjugate: coarse-mesh gradient misfit {misfit:.3g}")
        if misfit > tol:
            raise InputError(
                f"σ∇u is far from curl-free (misfit {misfit:.3g}); u does not solve the conductivity equation",
                residual=misfit,
            )
    w = mesh.boundary_weights
    v = v - np.dot(w, v[mesh.boundary_nodes]) / w.sum()
    return ScalarField(v, mesh)


def w12_norm(u: ScalarField) -> float:
    K = stiffness_matrix(u.mesh)
    M = mass_matrix(u.mesh)
    x = u.values
    return float(np.sqrt(max(x @ (K @ x) + x @ (M @ x), 0.0)))


def l2_norm(u: ScalarField) -> float:
    x = u.values
    return float(np.sqrt(max(x @ (mass_matrix(u.mesh) @ x), 0.0)))


def robin_energy_norm(u: ScalarField, sigma: Conductivity, lam: BoundaryFunction,
                      partition: BoundaryPartition) -> float:
    """(∫σ|∇u|² + ∫_Γ λu²)^{1/2}"""
    mask = partition.gamma_mask
    lam_vals = np.asarray(lam.values, dtype=float)
    if len(lam_vals) == mask.sum() and len(lam_vals) != len(mask):
        full = np.zeros(len(mask))
        full[mask] = lam_vals
        lam_vals = full
    x = u.values
    tr = x[u.mesh.boundary_nodes]
    energy = x @ (stiffness_matrix(u.mesh, sigma) @ x)
    gamma_term = np.dot(u.mesh.boundary_weights * mask, lam_vals * tr ** 2)
    return float(np.sqrt(max(energy + gamma_term, 0.0)))


# ----- Disk reference solution -----

def _arc_coefficients(spans: Sequence[Tuple[float, float]], K: int) -> np.ndarray:
    """Exact Fourier coefficients of the indicator of a union of arcs, k = -K..K"""
    k = np.arange(-K, K + 1)
    out = np.zeros(2 * K + 1, dtype=complex)
    for a, b in spans:
        nz = k != 0
        out[nz] += (np.exp(-1j * k[nz] * a) - np.exp(-1j * k[nz] * b)) / (2j * np.pi * k[nz])
        out[~nz] += (b - a) / (2.0 * np.pi)
    return out


@dataclass(frozen=True, eq=False)
class DiskOracle:
    """u = Σ û_k r^{|k|} e^{ikθ} on the unit disk"""

    coefficients: np.ndarray
    gamma_spans: Tuple[Tuple[float, float], ...]
    lambda_const: float
    condition: float = field(default=0.0)

    @property
    def K(self) -> int:
        return (len(self.coefficients) - 1) // 2

    def trace_at(self, theta) -> np.ndarray:
        k = np.arange(-self.K, self.K + 1)
        return (np.exp(1j * np.multiply.outer(np.asarray(theta, float), k)) @ self.coefficients).real

    def flux_at(self, theta) -> np.ndarray:
        k = np.arange(-self.K, self.K + 1)
        return (np.exp(1j * np.multiply.outer(np.asarray(theta, float), k)) @ (np.abs(k) * self.coefficients)).real

    def interior_at(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=complex)
        k = np.arange(-self.K, self.K + 1)
        r, t = np.abs(z), np.angle(z)
        kern = np.power.outer(r, np.abs(k)) * np.exp(1j * np.multiply.outer(t, k))
        return (kern @ self.coefficients).real

    def boundary_pair(self, n: Optional[int] = None) -> Tuple[BoundaryFunction, BoundaryFunction]:
        """(trace, ∂ₙu) on n equispaced angles"""
        n = n or 2 * self.K + 1
        theta = 2.0 * np.pi * np.arange(n) / n
        w = np.full(n, 2.0 * np.pi / n)
        return (BoundaryFunction(self.trace_at(theta), measure_weights=w),
                BoundaryFunction(self.flux_at(theta), measure_weights=w))


def disk_series_oracle(modes: Sequence[Tuple[int, float]], lambda_const: float,
                       split: Sequence[Tuple[float, float]], resolution: int = 256) -> DiskOracle:
    """Fourier-Galerkin solution of the Robin problem on the unit disk, σ ≡ 1.

    `split` lists the Γ arcs as angle spans; Γ₀ is the complement. The flux
    on Γ₀ is g(θ) = Σ amp·cos(kθ) over `modes`, with negative k meaning
    sin(|k|θ).
    """
    K = int(resolution)
    gamma = tuple((float(a), float(b)) for a, b in split)
    kmax = max([abs(int(k)) for k, _ in modes] + [0])

    chi = _arc_coefficients(gamma, 2 * K + kmax)
    chi0 = -chi
    chi0[2 * K + kmax] += 1.0

    g_hat = np.zeros(2 * kmax + 1, dtype=complex)
    for k, amp in modes:
        k = int(k)
        if k >= 0:
            g_hat[kmax + k] += amp / 2.0
            g_hat[kmax - k] += amp / 2.0
        else:
            g_hat[kmax - k] += amp / 2j
            g_hat[kmax + k] -= amp / 2j
    # coefficients of g·χ₀ for |k| ≤ K
    rhs = np.convolve(chi0, g_hat)[(2 * K + kmax) + kmax - K:(2 * K + kmax) + kmax + K + 1]

    kk = np.arange(-K, K + 1)
    lam_hat = lambda_const * chi
    center = 2 * K + kmax
    T = lam_hat[center + kk[:, None] - kk[None, :]]
    A = np.diag(np.abs(kk).astype(complex)) + T
    cond = float(np.linalg.cond(A))
    if not np.isfinite(cond) or cond > 1e14:
        raise SolverError(f"disk oracle system is singular at resolution {K} (cond {cond:.3g})", condition=cond)
    coeffs = np.linalg.solve(A, rhs)
    coeffs = 0.5 * (coeffs + np.conj(coeffs[::-1]))
    logger.debug(f"disk oracle: K={K}, cond={cond:.3g}")
    return DiskOracle(coeffs, gamma, float(lambda_const), cond)
