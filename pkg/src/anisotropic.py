"""
Anisotropic conductivities through a Beltrami homeomorphism.

For a symmetric σ the complex dilatation μ₁ defines Θ with ∂̄Θ = μ₁∂Θ and
Θ(z) = z + O(1/z); the pushforward of σ by Θ is the scalar √det σ ∘ Θ⁻¹.
Θ is computed on a uniform grid: Neumann iteration h = μ(1 + B h) with the
Beurling transform as an FFT multiplier, then Θ = z + C[h] with the Cauchy
transform as an aperiodic FFT convolution.
"""

import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Optional, Tuple

import numpy as np
from numpy import fft
from scipy.interpolate import RegularGridInterpolator, griddata
from scipy.spatial import cKDTree

from .errors import CoefficientError, ConvergenceError, DomainError, GeometryError, SolverError
from .factorization import ComplexField
from .fem import BoundaryFunction, Conductivity, RobinSpec, ScalarField, conormal_flux, tangential_derivative
from .geometry import Mesh, boundary_frames

logger = logging.getLogger(__name__)

GRID_N = 128
MAX_ITER = 200
ITER_TOL = 1e-10
NEWTON_TOL = 1e-10
JACOBIAN_FLOOR = 1e-8
RESIDUAL_WARN = 1e-2
BLEND_START = 0.5
BLEND_END = 0.75


@dataclass(frozen=True, eq=False)
class GridField:
    """Values on the uniform n×n grid of [x0, x1]×[y0, y1], rows indexed by y"""

    x0: float
    x1: float
    y0: float
    y1: float
    values: np.ndarray

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def dx(self) -> float:
        return (self.x1 - self.x0) / (self.n - 1)

    @property
    def dy(self) -> float:
        return (self.y1 - self.y0) / (self.n - 1)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.x0, self.x1, self.n)

    @property
    def y(self) -> np.ndarray:
        return np.linspace(self.y0, self.y1, self.n)

    @property
    def z(self) -> np.ndarray:
        return self.x[None, :] + 1j * self.y[:, None]

    @property
    def center(self) -> complex:
        return complex(0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))

    def box_radius(self) -> np.ndarray:
        """max(|x−cx|/Hx, |y−cy|/Hy): 1 on the box boundary"""
        c = self.center
        hx, hy = 0.5 * (self.x1 - self.x0), 0.5 * (self.y1 - self.y0)
        return np.maximum(np.abs(self.x[None, :] - c.real) / hx, np.abs(self.y[:, None] - c.imag) / hy)

    def with_values(self, values) -> "GridField":
        return GridField(self.x0, self.x1, self.y0, self.y1, np.asarray(values))


# ----- μ₁ -----

def mu1_values(S: np.ndarray) -> np.ndarray:
    """(−σ₁₁ + σ₂₂ − 2iσ₁₂)/(σ₁₁ + σ₂₂ + 2√det σ) for (..., 2, 2) symmetric PD σ"""
    S = np.asarray(S, dtype=float)
    if not np.allclose(S[..., 0, 1], S[..., 1, 0], rtol=0.0, atol=1e-12 * max(np.abs(S).max(), 1.0)):
        raise CoefficientError("conductivity matrix is not symmetric")
    a, b, d = S[..., 0, 0], S[..., 0, 1], S[..., 1, 1]
    det = a * d - b * b
    if np.any(a <= 0) or np.any(det <= 0):
        raise CoefficientError("conductivity matrix is not positive definite")
    return (-a + d - 2j * b) / (a + d + 2.0 * np.sqrt(det))


def mu1(sigma: Conductivity, mesh: Mesh) -> ComplexField:
    """Nodal complex dilatation; zero exactly where σ is scalar"""
    if sigma.is_isotropic:
        return ComplexField(np.zeros(mesh.n_nodes), mesh)
    return ComplexField(mu1_values(sigma.nodal_values), mesh)


def _smoothstep(t: np.ndarray) -> np.ndarray:
    t = np.clip(t, 0.0, 1.0)
    return t ** 3 * (10.0 - 15.0 * t + 6.0 * t ** 2)


def _blend_weight(rho: np.ndarray) -> np.ndarray:
    """1 inside ρ ≤ 0.5, C² decay to 0 at ρ = 0.75"""
    return _smoothstep((BLEND_END - rho) / (BLEND_END - BLEND_START))


# ----- Point location on the mesh -----

def _locate(mesh: Mesh, pts: np.ndarray, k: int = 12) -> Tuple[np.ndarray, np.ndarray]:
    """Containing triangle (−1 outside) and barycentric coordinates per point"""
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    k = min(k, len(mesh.triangles))
    tree = cKDTree(mesh.centroids)
    _, cand = tree.query(pts, k=k)
    cand = cand.reshape(len(pts), k)
    p = mesh.nodes[mesh.triangles]
    T = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)
    Tinv = np.linalg.inv(T)
    tri = -np.ones(len(pts), dtype=int)
    bary = np.zeros((len(pts), 3))
    for j in range(k):
        c = cand[:, j]
        lam = np.einsum("pij,pj->pi", Tinv[c], pts - p[c, 0])
        b = np.column_stack([1.0 - lam.sum(axis=1), lam])
        hit = (tri < 0) & (b.min(axis=1) >= -1e-12)
        tri[hit] = c[hit]
        bary[hit] = b[hit]
    return tri, bary


def _matrix_field(sigma: Conductivity) -> np.ndarray:
    v = sigma.nodal_values
    if sigma.is_isotropic:
        return v[:, None, None] * np.eye(2)[None]
    return v


def _sample_matrices(sigma: Conductivity, mesh: Mesh, pts: np.ndarray) -> np.ndarray:
    """P1 interpolation inside the mesh, nearest boundary value outside"""
    S = _matrix_field(sigma)
    tri, bary = _locate(mesh, pts)
    out = np.empty((len(pts), 2, 2))
    inside = tri >= 0
    if inside.any():
        nodes = mesh.triangles[tri[inside]]
        out[inside] = np.einsum("pk,pkij->pij", bary[inside], S[nodes])
    if (~inside).any():
        _, near = cKDTree(mesh.boundary_points).query(pts[~inside])
        out[~inside] = S[mesh.boundary_nodes[near]]
    return out


def extend_conductivity(sigma: Conductivity, mesh: Mesh, n: int = GRID_N) -> GridField:
    """σ on a grid over twice the bounding box, blended to I₂ before the outer 25%"""
    lo, hi = mesh.nodes.min(axis=0), mesh.nodes.max(axis=0)
    c, half = 0.5 * (lo + hi), (hi - lo)
    if np.any(half <= 0):
        raise GeometryError("mesh has a degenerate bounding box")
    grid = GridField(c[0] - half[0], c[0] + half[0], c[1] - half[1], c[1] + half[1], np.zeros((n, n)))
    z = grid.z.ravel()
    S = _sample_matrices(sigma, mesh, np.column_stack([z.real, z.imag]))
    chi = _blend_weight(grid.box_radius().ravel())
    S = np.eye(2)[None] + chi[:, None, None] * (S - np.eye(2)[None])
    return grid.with_values(S.reshape(n, n, 2, 2))


def mu_on_grid(sigma: Conductivity, mesh: Mesh, n: int = GRID_N) -> GridField:
    S = extend_conductivity(sigma, mesh, n)
    return S.with_values(mu1_values(S.values))


# ----- Beurling and Cauchy transforms on the grid -----

def _beurling_symbol(n: int, dx: float, dy: float) -> np.ndarray:
    kx = 2.0 * np.pi * fft.fftfreq(n, dx)
    ky = 2.0 * np.pi * fft.fftfreq(n, dy)
    xi = kx[None, :] + 1j * ky[:, None]
    sym = np.zeros_like(xi)
    nz = xi != 0
    sym[nz] = np.conj(xi[nz]) / xi[nz]
    return sym


def _triangle_inverse_integral(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Signed ∫ dA/w over the triangle (0, a, b)"""
    d = b - a
    out = np.zeros(np.broadcast(a, b).shape, dtype=complex)
    ok = np.abs(d) > 0
    out[ok] = (np.conj(a[ok]) - np.conj(d[ok]) * a[ok] / d[ok]) * np.log(b[ok] / a[ok]) / 2j
    return out


def _cell_integral(c: np.ndarray, hx: float, hy: float) -> np.ndarray:
    """∫ dA/w over the rectangle centered at c with half-widths hx, hy"""
    corners = [c + complex(-hx, -hy), c + complex(hx, -hy), c + complex(hx, hy), c + complex(-hx, hy)]
    return sum(_triangle_inverse_integral(corners[k], corners[(k + 1) % 4]) for k in range(4))


def _cauchy_kernel(n: int, dx: float, dy: float) -> np.ndarray:
    """Extended (2n−1)×(2n−1) convolution kernel of the cell-averaged Cauchy transform"""
    m = 2 * n - 1
    idx = np.arange(m)
    d = np.where(idx < n, idx, idx - m)
    offsets = d[None, :] * dx + 1j * d[:, None] * dy
    return -_cell_integral(-offsets, 0.5 * dx, 0.5 * dy) / np.pi


def grid_cauchy_transform(h: np.ndarray, dx: float, dy: float) -> np.ndarray:
    """−(1/π)∬ h(w)/(w − z) dm₂ for h piecewise constant on grid cells"""
    n = h.shape[0]
    m = 2 * n - 1
    K = _cauchy_kernel(n, dx, dy)
    return fft.ifft2(fft.fft2(K) * fft.fft2(h, s=(m, m)))[:n, :n]


# ----- Beltrami map -----

@dataclass(frozen=True, eq=False)
class BeltramiMap:
    grid: GridField
    theta_values: np.ndarray
    k_bound: float
    residual: float = 0.0
    iterations: int = 0
    update_norms: Tuple[float, ...] = ()
    h: Optional[np.ndarray] = field(default=None, repr=False)

    @classmethod
    def linear(cls, a: complex, b: complex, box: Tuple[float, float, float, float], n: int = 65) -> "BeltramiMap":
        """Θ(z) = a z + b z̄ sampled on a grid"""
        grid = GridField(*box, np.zeros((n, n)))
        z = grid.z
        k = abs(b) / abs(a)
        if k >= 1.0:
            raise DomainError(f"|b/a| = {k:.3g} ≥ 1 is not orientation preserving")
        return cls(grid, a * z + b * np.conj(z), k)

    @cached_property
    def _derivatives(self) -> Tuple[np.ndarray, np.ndarray]:
        dy_, dx_ = np.gradient(self.theta_values, self.grid.dy, self.grid.dx)
        return 0.5 * (dx_ - 1j * dy_), 0.5 * (dx_ + 1j * dy_)

    @property
    def d_theta(self) -> np.ndarray:
        return self._derivatives[0]

    @property
    def dbar_theta(self) -> np.ndarray:
        return self._derivatives[1]

    def beltrami_ratio(self) -> np.ndarray:
        a = self.d_theta
        return np.where(np.abs(a) > 0, self.dbar_theta / np.where(a == 0, 1.0, a), 0.0)

    @cached_property
    def _interpolators(self):
        g = self.grid
        axes = (g.y, g.x)

        def make(values):
            return (RegularGridInterpolator(axes, values.real), RegularGridInterpolator(axes, values.imag))

        return make(self.theta_values), make(self.d_theta), make(self.dbar_theta)

    def _interp(self, which: int, z: np.ndarray) -> np.ndarray:
        re, im = self._interpolators[which]
        g = self.grid
        if (np.any(z.real < g.x0 - 1e-12) or np.any(z.real > g.x1 + 1e-12)
                or np.any(z.imag < g.y0 - 1e-12) or np.any(z.imag > g.y1 + 1e-12)):
            raise DomainError("point outside the Beltrami grid box")
        pts = np.column_stack([np.clip(z.imag, g.y0, g.y1), np.clip(z.real, g.x0, g.x1)])
        return re(pts) + 1j * im(pts)

    def __call__(self, z):
        z_arr = np.atleast_1d(np.asarray(z, dtype=complex))
        out = self._interp(0, z_arr.ravel()).reshape(z_arr.shape)
        return complex(out[0]) if np.ndim(z) == 0 else out

    def jacobian(self, z) -> Tuple[np.ndarray, np.ndarray]:
        """(∂Θ, ∂̄Θ) at points"""
        z_arr = np.atleast_1d(np.asarray(z, dtype=complex)).ravel()
        return self._interp(1, z_arr), self._interp(2, z_arr)

    def invert(self, w, tol: float = NEWTON_TOL, max_iter: int = 50) -> np.ndarray:
        """Θ⁻¹ by Newton from the nearest grid preimage"""
        w = np.atleast_1d(np.asarray(w, dtype=complex)).ravel()
        g = self.grid
        tv = self.theta_values.ravel()
        _, near = cKDTree(np.column_stack([tv.real, tv.imag])).query(np.column_stack([w.real, w.imag]))
        z = g.z.ravel()[near].copy()
        scale = max(g.x1 - g.x0, g.y1 - g.y0)
        r = self._interp(0, z) - w
        for it in range(max_iter):
            if np.abs(r).max() <= tol * scale:
                break
            a, b = self.jacobian(z)
            den = np.abs(a) ** 2 - np.abs(b) ** 2
            if np.any(den <= 0):
                raise ConvergenceError("Θ is not locally invertible at a Newton iterate",
                                       residual=float(np.abs(r).max()))
            z = z + (np.conj(a) * (-r) - b * np.conj(-r)) / den
            z = np.clip(z.real, g.x0, g.x1) + 1j * np.clip(z.imag, g.y0, g.y1)
            r = self._interp(0, z) - w
        res = float(np.abs(r).max()) / scale
        if res > tol:
            raise ConvergenceError(f"Θ inversion did not converge (residual {res:.3g})", residual=res)
        return z


def solve_beltrami(mu: GridField, tol: float = ITER_TOL, max_iter: int = MAX_ITER) -> BeltramiMap:
    """Θ = z + C[h] with h = μ(1 + B h).

    The update norm shrinks by at most sup|μ| per step. The residual
    ‖∂̄Θ − μ∂Θ‖/‖∂Θ‖ is measured with centered differences away from the
    grid rim.
    """
    m = np.asarray(mu.values, dtype=complex)
    k = float(np.abs(m).max()) if m.size else 0.0
    if k >= 1.0:
        raise DomainError(f"sup|μ| = {k:.6g} must be below 1")
    sym = _beurling_symbol(mu.n, mu.dx, mu.dy)

    h = m.copy()
    history = []
    for it in range(1, max_iter + 1):
        h_new = m * (1.0 + fft.ifft2(sym * fft.fft2(h)))
        norm_new = float(np.linalg.norm(h_new))
        upd = float(np.linalg.norm(h_new - h)) / norm_new if norm_new > 0 else 0.0
        history.append(upd)
        h = h_new
        if upd <= tol:
            break
    else:
        raise ConvergenceError(
            f"Beltrami iteration reached {max_iter} steps (update {history[-1]:.3g})",
            residual=history[-1],
        )
    logger.debug(f"beltrami: k={k:.3g}, {it} iterations, last update {history[-1]:.3g}")

    theta = mu.z + grid_cauchy_transform(h, mu.dx, mu.dy)
    bmap = BeltramiMap(mu.with_values(np.zeros(m.shape)), theta, k, 0.0, it, tuple(history), h)
    inner = (slice(2, -2), slice(2, -2))
    a, b = bmap.d_theta[inner], bmap.dbar_theta[inner]
    residual = float(np.linalg.norm(b - m[inner] * a) / max(np.linalg.norm(a), 1e-300))
    if residual > RESIDUAL_WARN:
        logger.warning(f"beltrami: residual {residual:.3g} (μ may be rough at grid scale)")
    object.__setattr__(bmap, "residual", residual)
    return bmap


def far_field_slope(bmap: BeltramiMap, lo: float = 0.8, hi: float = 0.97) -> float:
    """Slope of log|Θ(z) − z| against log|z − c| on the outer ring of the box"""
    g = bmap.grid
    rho = g.box_radius()
    ring = (rho >= lo) & (rho <= hi)
    dev = np.abs(bmap.theta_values - g.z)[ring]
    r = np.abs(g.z - g.center)[ring]
    keep = dev > 0
    if keep.sum() < 2:
        return float("-inf")
    return float(np.polyfit(np.log(r[keep]), np.log(dev[keep]), 1)[0])


# ----- Pushforward -----

def _real_jacobian(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    tx, ty = a + b, 1j * (a - b)
    return np.stack([np.stack([tx.real, ty.real], -1), np.stack([tx.imag, ty.imag], -1)], -2)


@dataclass(frozen=True, eq=False)
class PushforwardResult:
    points: np.ndarray
    preimages: np.ndarray
    sigma_tilde: np.ndarray
    matrix_discrepancy: float
    inversion_error: Optional[float] = None

    @property
    def conductivity(self) -> Conductivity:
        return Conductivity(self.sigma_tilde)


def pushforward_conductivity(sigma: Conductivity, mesh: Mesh, bmap: BeltramiMap,
                             points: Optional[np.ndarray] = None) -> PushforwardResult:
    """σ̃ = √det σ ∘ Θ⁻¹ at image points (default Θ of the mesh nodes).

    The matrix pushforward DΘ σ DΘᵀ / det DΘ is evaluated at the same points
    and its largest relative distance from σ̃·I₂ is reported.
    """
    own = points is None
    w = bmap(mesh.z) if own else np.asarray(points, dtype=complex).ravel()
    z = bmap.invert(w)
    S = _sample_matrices(sigma, mesh, np.column_stack([z.real, z.imag]))
    det = np.linalg.det(S)
    st = np.sqrt(det)

    a, b = bmap.jacobian(z)
    D = _real_jacobian(a, b)
    detD = np.linalg.det(D)
    if np.any(detD <= 0):
        raise SolverError("DΘ is not orientation preserving at some points", condition=float(detD.min()))
    M = np.einsum("pij,pjk,plk->pil", D, S, D) / detD[:, None, None]
    disc = float((np.linalg.norm(M - st[:, None, None] * np.eye(2)[None], axis=(1, 2)) / st).max())
    inv_err = float(np.abs(z - mesh.z).max()) if own else None
    logger.debug(f"pushforward: matrix discrepancy {disc:.3g}")
    return PushforwardResult(w, z, st, disc, inv_err)


@dataclass(frozen=True, eq=False)
class TransportedBoundaryData:
    mesh: Mesh
    points: np.ndarray
    dtau: np.ndarray
    flux: np.ndarray
    jacobian: np.ndarray


def _tangent_stretch(mesh: Mesh, bmap: BeltramiMap) -> np.ndarray:
    """|DΘτ| at the boundary nodes"""
    tau = boundary_frames(mesh).tau_complex
    a, b = bmap.jacobian(mesh.z[mesh.boundary_nodes])
    jac = np.abs(a * tau + b * np.conj(tau))
    if jac.min() < JACOBIAN_FLOOR:
        raise SolverError(f"|DΘτ| = {jac.min():.3g} is degenerate", condition=float(jac.min()))
    return jac


def pushforward_boundary_data(u_trace: BoundaryFunction, flux: BoundaryFunction,
                              bmap: BeltramiMap) -> TransportedBoundaryData:
    """∂_τ u and n·σ∇u divided by |DΘτ| at the mapped boundary nodes"""
    mesh = u_trace.mesh
    jac = _tangent_stretch(mesh, bmap)
    dtau = tangential_derivative(u_trace).values
    return TransportedBoundaryData(
        mesh=mesh,
        points=bmap(mesh.z[mesh.boundary_nodes]),
        dtau=dtau / jac,
        flux=np.asarray(flux.values) / jac,
        jacobian=jac,
    )


def pullback_boundary_data(data: TransportedBoundaryData) -> Tuple[BoundaryFunction, BoundaryFunction]:
    """(∂_τ u, n·σ∇u) back on ∂Ω"""
    return (BoundaryFunction(data.dtau * data.jacobian, data.mesh),
            BoundaryFunction(data.flux * data.jacobian, data.mesh))


def robin_conormal_check(u: ScalarField, spec: RobinSpec, bmap: BeltramiMap) -> dict:
    """n·σ∇u + λu on Γ against its transport with λ̃ = λ/|DΘτ|"""
    mesh = u.mesh
    mask = spec.partition.gamma_mask
    jac = _tangent_stretch(mesh, bmap)
    flux = conormal_flux(u, spec.sigma).values
    tr = u.trace().values
    lam_tilde = spec.lam.values / jac
    original = (flux + spec.lam.values * tr)[mask]
    transported = (flux / jac + lam_tilde * tr)[mask]
    scale = max(np.abs(flux[mask]).max(), 1e-300)
    return {
        "robin_residual": float(np.abs(original).max() / scale),
        "transported_residual": float(np.abs(transported).max() / scale),
        "transport_defect": float(np.abs(transported * jac[mask] - original).max() / scale),
        "lambda_tilde_range": (float(lam_tilde[mask].min()), float(lam_tilde[mask].max())),
    }


def composition_residual(bmap: BeltramiMap, u: Callable[[np.ndarray, np.ndarray], np.ndarray],
                         region: float = 0.35) -> float:
    """Relative Laplacian of v = u∘Θ⁻¹ over the image of the inner region.

    Meant for constant σ on the region, where σ̃ is constant and v harmonic.
    """
    g = bmap.grid
    inner = g.box_radius() <= region
    z = g.z[inner]
    w = bmap.theta_values[inner]
    vals = u(z.real, z.imag)

    lo_x, hi_x = np.percentile(w.real, [10, 90])
    lo_y, hi_y = np.percentile(w.imag, [10, 90])
    step = min(g.dx, g.dy)
    X, Y = np.meshgrid(np.arange(lo_x, hi_x, step), np.arange(lo_y, hi_y, step))
    v = griddata((w.real, w.imag), vals, (X, Y), method="cubic")
    if v.shape[0] < 3 or v.shape[1] < 3:
        raise GeometryError("image region too small for the composition check")
    lap = (v[1:-1, 2:] + v[1:-1, :-2] + v[2:, 1:-1] + v[:-2, 1:-1] - 4.0 * v[1:-1, 1:-1]) / step ** 2
    gy, gx = np.gradient(v, step)
    grad = np.hypot(gx, gy)[1:-1, 1:-1]
    ok = np.isfinite(lap) & np.isfinite(grad)
    if not ok.any():
        raise GeometryError("composition check has no interior samples")
    size = max(hi_x - lo_x, hi_y - lo_y)
    return float(np.sqrt(np.mean(lap[ok] ** 2)) * size / max(np.sqrt(np.mean(grad[ok] ** 2)), 1e-300))


# ----- Grid files -----

def write_grid(field_: GridField, path) -> Path:
    """Header `x0 x1 y0 y1 n [complex]`, then n rows (real parts, then imaginary parts)"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    vals = np.asarray(field_.values)
    is_complex = np.iscomplexobj(vals)
    head = f"{field_.x0:.17g} {field_.x1:.17g} {field_.y0:.17g} {field_.y1:.17g} {field_.n}"
    lines = [head + (" complex" if is_complex else "")]
    blocks = [vals.real, vals.imag] if is_complex else [vals]
    for blk in blocks:
        lines += [" ".join(f"{x:.17g}" for x in row) for row in blk]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_grid(path) -> GridField:
    rows = [r.split() for r in Path(path).read_text().splitlines() if r.strip() and not r.startswith("#")]
    if not rows or len(rows[0]) < 5:
        raise GeometryError(f"{path}: grid header must read `x0 x1 y0 y1 n`")
    head = rows[0]
    x0, x1, y0, y1 = (float(t) for t in head[:4])
    n = int(head[4])
    is_complex = len(head) > 5 and head[5] == "complex"
    body = np.array([[float(t) for t in r] for r in rows[1:]])
    expect = 2 * n if is_complex else n
    if body.shape != (expect, n):
        raise GeometryError(f"{path}: expected {expect}×{n} values, got {body.shape}")
    vals = body[:n] + 1j * body[n:] if is_complex else body
    return GridField(x0, x1, y0, y1, vals)
