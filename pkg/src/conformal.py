"""
Schwarz-Christoffel maps from the unit disk onto polygons.

    φ(z) = A + C ∫₀^z Π_k (1 − w/z_k)^{−μ_k} dw

with prevertices z_k on the circle and turning exponents μ_k = 1 − (interior
angle)/π, which sum to 2. Integrals run over composite Gauss panels with
Gauss-Jacobi end panels at the prevertex singularities.
"""

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import least_squares
from scipy.special import roots_jacobi, roots_legendre

from . import disk_hardy
from .errors import ConvergenceError, DomainError, GeometryError
from .geometry import Domain, build_polygon, points_inside

logger = logging.getLogger(__name__)

GAUSS_ORDER = 16
GRADING_LEVELS = 12


@dataclass(frozen=True, eq=False)
class ConformalMap:
    prevertices: np.ndarray
    turning_exponents: np.ndarray
    scale: complex
    shift: complex
    vertices: Optional[np.ndarray] = None

    @property
    def angles(self) -> np.ndarray:
        return np.mod(np.angle(self.prevertices), 2.0 * np.pi)

    @property
    def n(self) -> int:
        return len(self.prevertices)

    def scaled(self, factor: float) -> "ConformalMap":
        v = None if self.vertices is None else self.vertices * factor
        return ConformalMap(self.prevertices, self.turning_exponents,
                            self.scale * factor, self.shift * factor, v)

    def __call__(self, z):
        return evaluate(self, z)


# ----- Quadrature -----

@lru_cache(maxsize=64)
def _jacobi(n: int, alpha: float, beta: float) -> Tuple[np.ndarray, np.ndarray]:
    return roots_jacobi(n, alpha, beta)


@lru_cache(maxsize=8)
def _legendre(n: int) -> Tuple[np.ndarray, np.ndarray]:
    return roots_legendre(n)


def _integrand(m: ConformalMap, w: np.ndarray) -> np.ndarray:
    """Π (1 − w/z_k)^{−μ_k}, principal branches"""
    w = np.asarray(w, dtype=complex)
    out = np.ones(w.shape, dtype=complex)
    for zk, mu in zip(m.prevertices, m.turning_exponents):
        out *= np.power(1.0 - w / zk, -mu)
    return out


def _graded_breaks(n_levels: int) -> np.ndarray:
    """[0, 1/2, 3/4, ..., 1 − 2^{-n}] then 1"""
    t = 1.0 - 0.5 ** np.arange(n_levels)
    t[0] = 0.0
    return np.append(t, 1.0)


def _segment_integral(m: ConformalMap, a: complex, b: complex,
                      end_exponent: float = 0.0, end_prevertex: Optional[complex] = None) -> complex:
    """∫_a^b of the SC integrand along a straight segment.

    When b is a prevertex, the last panel uses Gauss-Jacobi with the
    singular factor (1 − w/z_k)^{−μ_k} as its weight.
    """
    xg, wg = _legendre(GAUSS_ORDER)
    d = b - a
    total = 0j
    breaks = _graded_breaks(GRADING_LEVELS) if end_prevertex is not None else np.linspace(0.0, 1.0, 5)
    last = len(breaks) - 2
    for j in range(len(breaks) - 1):
        t0, t1 = breaks[j], breaks[j + 1]
        half = 0.5 * (t1 - t0)
        if j == last and end_prevertex is not None:
            xj, wj = _jacobi(GAUSS_ORDER, -end_exponent, 0.0)
            t = t0 + half * (1.0 + xj)
            # 1 − w/z_k = (d/z_k)·half·(1 − x) on the last panel
            slope = d / end_prevertex * half
            base = slope * (1.0 - xj)
            regular = _integrand(m, a + d * t) / np.power(base, -end_exponent)
            total += d * half * np.sum(wj * regular * np.power(slope, -end_exponent))
        else:
            t = t0 + half * (1.0 + xg)
            total += d * half * np.sum(wg * _integrand(m, a + d * t))
    return total


def _arc_integral(m: ConformalMap, i: int, ta: float, tb: float,
                  start_singular: bool, end_singular: bool) -> float:
    """∫ |φ′(e^{it})|/|C| dt over [ta, tb] inside side i"""
    mu = m.turning_exponents
    n = m.n
    mu_a = mu[i] if start_singular else 0.0
    mu_b = mu[(i + 1) % n] if end_singular else 0.0
    za = m.prevertices[i]
    zb = m.prevertices[(i + 1) % n]

    def modulus(t):
        return np.abs(_integrand(m, np.exp(1j * t)))

    length = tb - ta
    if length <= 0:
        return 0.0
    cut = [ta, ta + 0.25 * length, tb - 0.25 * length, tb]
    total = 0.0
    xg, wg = _legendre(GAUSS_ORDER)
    for j in range(3):
        a, b = cut[j], cut[j + 1]
        half = 0.5 * (b - a)
        if j == 0 and mu_a:
            xj, wj = _jacobi(GAUSS_ORDER, 0.0, -mu_a)
            t = a + half * (1.0 + xj)
            sing = np.abs(2.0 * np.sin(0.5 * (t - np.angle(za)))) ** (-mu_a)
            reg = modulus(t) / sing
            # |2 sin((t−θ_a)/2)| ≈ (t − a) near the start
            corr = (np.abs(2.0 * np.sin(0.5 * (t - a))) / (t - a)) ** (-mu_a)
            total += half * np.sum(wj * reg * corr * half ** (-mu_a))
        elif j == 2 and mu_b:
            xj, wj = _jacobi(GAUSS_ORDER, -mu_b, 0.0)
            t = a + half * (1.0 + xj)
            sing = np.abs(2.0 * np.sin(0.5 * (t - np.angle(zb)))) ** (-mu_b)
            reg = modulus(t) / sing
            corr = (np.abs(2.0 * np.sin(0.5 * (b - t))) / (b - t)) ** (-mu_b)
            total += half * np.sum(wj * reg * corr * half ** (-mu_b))
        else:
            t = a + half * (1.0 + xg)
            total += half * np.sum(wg * modulus(t))
    return float(total)


def _side_thetas(m: ConformalMap) -> Tuple[np.ndarray, np.ndarray]:
    """Start/end angle of each side, unwrapped so that end > start"""
    th = m.angles
    start = th
    end = np.roll(th, -1)
    end = np.where(end <= start, end + 2.0 * np.pi, end)
    return start, end


def side_lengths(m: ConformalMap) -> np.ndarray:
    start, end = _side_thetas(m)
    return np.array([abs(m.scale) * _arc_integral(m, i, start[i], end[i], True, True)
                     for i in range(m.n)])


# ----- Construction -----

def turning_exponents(domain: Domain) -> np.ndarray:
    return 1.0 - domain.interior_angles() / math.pi


def _angles_from_params(y: np.ndarray) -> np.ndarray:
    """Monotone reparametrization: n−1 free reals -> increasing angles, last fixed at 2π"""
    e = np.exp(np.append(y, 0.0))
    return 2.0 * np.pi * np.cumsum(e) / e.sum()


def _vertex_images(m: ConformalMap) -> np.ndarray:
    return np.array([m.shift + m.scale * _segment_integral(m, 0j, zk, mu, zk)
                     for zk, mu in zip(m.prevertices, m.turning_exponents)])


def schwarz_christoffel(domain: Domain, initial_angles: Optional[Sequence[float]] = None) -> ConformalMap:
    """Solve the parameter problem for a disk map onto `domain`.

    Normalization φ(0) = polygon centroid. Unknowns are the prevertex angles
    (through a monotone reparametrization) and the complex scale C; the
    residual is the mismatch of all vertex images, relative to the diameter.
    """
    v = domain.vertices[:, 0] + 1j * domain.vertices[:, 1]
    n = len(v)
    mu = turning_exponents(domain)
    if abs(mu.sum() - 2.0) > 1e-9:
        raise GeometryError(f"turning exponents sum to {mu.sum():.12g}, expected 2")
    center = domain.centroid
    if not points_inside(domain, np.array([[center.real, center.imag]]))[0]:
        raise GeometryError("polygon centroid lies outside the polygon; cannot normalize φ(0)")
    diam = float(np.abs(v[:, None] - v[None, :]).max())

    if initial_angles is None:
        s = np.append(domain.vertex_s[1:], domain.perimeter)
        initial_angles = 2.0 * np.pi * s / domain.perimeter
    th0 = np.asarray(initial_angles, dtype=float)
    e = np.diff(np.concatenate([[0.0], th0]))
    y0 = np.log(np.maximum(e[:-1], 1e-12) / e[-1])

    def unpack(x):
        th = _angles_from_params(x[: n - 1])
        # vertex k sits at angle th[k-1]; vertex 0 at 2π
        th = np.roll(th, 1)
        C = complex(x[n - 1], x[n])
        return th, C

    def residual(x):
        th, C = unpack(x)
        m = ConformalMap(np.exp(1j * th), mu, C, center)
        r = (_vertex_images(m) - v) / diam
        return np.concatenate([r.real, r.imag])

    # initial scale from the first side
    th_init = np.roll(_angles_from_params(y0), 1)
    m_init = ConformalMap(np.exp(1j * th_init), mu, 1.0, 0j)
    first = _segment_integral(m_init, 0j, m_init.prevertices[0], mu[0], m_init.prevertices[0])
    C0 = (v[0] - center) / first if abs(first) > 0 else diam
    x0 = np.concatenate([y0, [C0.real, C0.imag]])

    sol = least_squares(residual, x0, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=200 * (n + 1))
    res = float(np.abs(sol.fun).max())
    logger.debug(f"SC parameter problem: n={n}, nfev={sol.nfev}, residual={res:.3g}")
    if not np.isfinite(res) or res > 1e-6:
        raise ConvergenceError(f"Schwarz-Christoffel parameter problem did not converge (residual {res:.3g})",
                               residual=res)
    th, C = unpack(sol.x)
    return ConformalMap(np.exp(1j * th), mu, C, center, domain.vertices.copy())


# ----- Evaluation -----

def _near_prevertex(m: ConformalMap, z: np.ndarray, tol: float = 1e-14) -> bool:
    return bool(np.any(np.abs(np.asarray(z)[..., None] - m.prevertices) <= tol))


def map_derivative(m: ConformalMap, z):
    """φ′(z) = C Π (1 − z/z_k)^{−μ_k}; |z| ≤ 1 away from the prevertices"""
    z_arr = np.asarray(z, dtype=complex)
    if np.any(np.abs(z_arr) > 1.0 + 1e-14):
        raise DomainError("map_derivative needs |z| ≤ 1")
    if _near_prevertex(m, z_arr):
        raise DomainError("map_derivative is singular at a prevertex")
    out = m.scale * _integrand(m, z_arr)
    return complex(out) if z_arr.ndim == 0 else out


def sqrt_derivative(m: ConformalMap, z):
    """(φ′)^{1/2} continued from z = 0 along radii"""
    z_arr = np.asarray(z, dtype=complex)
    out = np.sqrt(complex(m.scale)) * np.ones(z_arr.shape, dtype=complex)
    for zk, mu in zip(m.prevertices, m.turning_exponents):
        out *= np.power(1.0 - z_arr / zk, -0.5 * mu)
    return out


def evaluate(m: ConformalMap, z):
    """φ(z) for |z| < 1 by integration along the ray from 0"""
    z_arr = np.atleast_1d(np.asarray(z, dtype=complex))
    if np.any(np.abs(z_arr) >= 1.0):
        raise DomainError("evaluate needs |z| < 1; use boundary_correspondence on the circle")
    out = np.array([m.shift + m.scale * _segment_integral(m, 0j, zi) for zi in z_arr.ravel()])
    out = out.reshape(z_arr.shape)
    return complex(out[0]) if np.ndim(z) == 0 else out


def boundary_correspondence(m: ConformalMap, theta: Sequence[float]) -> np.ndarray:
    """Image points φ(e^{iθ}) on ∂Ω, located along each side by arclength"""
    theta = np.mod(np.asarray(theta, dtype=float), 2.0 * np.pi)
    verts = m.vertices[:, 0] + 1j * m.vertices[:, 1] if m.vertices is not None else _vertex_images(m)
    start, end = _side_thetas(m)
    out = np.empty(len(theta), dtype=complex)
    for j, t in enumerate(theta):
        i = _side_index(start, end, t)
        tt = t if t >= start[i] else t + 2.0 * np.pi
        s = abs(m.scale) * _arc_integral(m, i, start[i], tt, True, False)
        a, b = verts[i], verts[(i + 1) % m.n]
        out[j] = a + (b - a) * s / abs(b - a)
    return out


def _side_index(start: np.ndarray, end: np.ndarray, t: float) -> int:
    for i in range(len(start)):
        if start[i] <= t < end[i] or start[i] <= t + 2.0 * np.pi < end[i]:
            return i
    return len(start) - 1


# ----- Identities and norms -----

def perimeter_integral(m: ConformalMap) -> float:
    """∫_𝕋 |φ′| dθ"""
    return float(side_lengths(m).sum())


def area_integral(m: ConformalMap, n_theta_panels: int = 4, levels: int = 18) -> float:
    """∫_𝔻 |φ′|² dm₂ on a polar Gauss grid graded toward the circle and the prevertices"""
    xg, wg = _legendre(GAUSS_ORDER)
    r_breaks = _graded_breaks(levels)
    r_nodes, r_weights = [], []
    for r0, r1 in zip(r_breaks[:-1], r_breaks[1:]):
        half = 0.5 * (r1 - r0)
        r_nodes.append(r0 + half * (1.0 + xg))
        r_weights.append(half * wg)
    r = np.concatenate(r_nodes)
    wr = np.concatenate(r_weights)

    start, end = _side_thetas(m)
    t_nodes, t_weights = [], []
    for a, b in zip(start, end):
        mid = 0.5 * (a + b)
        for lo, hi in ((a, mid), (mid, b)):
            # grade toward the prevertex end of each half
            toward_lo = lo == a
            g = _graded_breaks(levels)
            pieces = lo + (hi - lo) * (1.0 - g[::-1]) if toward_lo else lo + (hi - lo) * g
            pieces = np.sort(pieces)
            for p0, p1 in zip(pieces[:-1], pieces[1:]):
                half = 0.5 * (p1 - p0)
                t_nodes.append(p0 + half * (1.0 + xg))
                t_weights.append(half * wg)
    t = np.concatenate(t_nodes)
    wt = np.concatenate(t_weights)

    total = 0.0
    for rj, wj in zip(r, wr):
        vals = np.abs(m.scale * _integrand(m, rj * np.exp(1j * t))) ** 2
        total += wj * rj * np.dot(wt, vals)
    return float(total)


def arclength_pullback(m: ConformalMap, E: Sequence[Tuple[float, float]]) -> float:
    """Λ(E) = ∫_{φ⁻¹(E)} |φ′| dθ for E a union of arclength spans on ∂Ω"""
    if not E:
        return 0.0
    if m.vertices is None:
        raise DomainError("arclength_pullback needs the polygon vertices stored on the map")
    domain = build_polygon(m.vertices)
    L = domain.perimeter
    vs = np.append(domain.vertex_s, L)
    total = 0.0
    for a, b in E:
        a, b = float(a), float(b)
        if b <= a:
            continue
        for k in range(int(math.floor(a / L)), int(math.ceil(b / L))):
            lo, hi = max(a - k * L, 0.0), min(b - k * L, L)
            if hi > lo:
                total += _pullback_span(m, vs, lo, hi)
    return float(total)


def _preimage_on_side(m: ConformalMap, i: int, s_local: float, side_len: float) -> float:
    """Angle in side i whose image sits at arclength s_local from the side start"""
    start, end = _side_thetas(m)
    if s_local <= 0.0:
        return start[i]
    if s_local >= side_len:
        return end[i]
    lo, hi = start[i], end[i]
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        s_mid = abs(m.scale) * _arc_integral(m, i, start[i], mid, True, False)
        if s_mid < s_local:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-14:
            break
    return 0.5 * (lo + hi)


def _pullback_span(m: ConformalMap, vs: np.ndarray, lo: float, hi: float) -> float:
    start, end = _side_thetas(m)
    lengths = np.diff(vs)
    total = 0.0
    for i in range(m.n):
        a, b = max(lo, vs[i]), min(hi, vs[i + 1])
        if b <= a:
            continue
        ta = _preimage_on_side(m, i, a - vs[i], lengths[i])
        tb = _preimage_on_side(m, i, b - vs[i], lengths[i])
        total += abs(m.scale) * _arc_integral(m, i, ta, tb, ta == start[i], tb == end[i])
    return total


def boundary_quadrature(m: ConformalMap) -> Tuple[np.ndarray, np.ndarray]:
    """Angles and weights of the composite Gauss-Jacobi rule on 𝕋, with the
    prevertex singularities absorbed into the weights' |φ′| factor"""
    start, end = _side_thetas(m)
    xg, wg = _legendre(GAUSS_ORDER)
    nodes, weights = [], []
    g = _graded_breaks(2 * GRADING_LEVELS)
    for a, b in zip(start, end):
        cuts = np.linspace(a, b, 9)
        inner = np.concatenate([a + (cuts[1] - a) * (1.0 - g[::-1]),
                                cuts[2:-2],
                                cuts[-2] + (b - cuts[-2]) * g])
        inner = np.unique(inner)
        for p0, p1 in zip(inner[:-1], inner[1:]):
            half = 0.5 * (p1 - p0)
            nodes.append(p0 + half * (1.0 + xg))
            weights.append(half * wg)
    return np.concatenate(nodes), np.concatenate(weights)


def smirnov_norm(f_boundary: Callable[[np.ndarray], np.ndarray], m: ConformalMap) -> float:
    """‖(f∘φ)(φ′)^{1/2}‖ in H²(𝔻), equal to ‖f‖ in L²(∂Ω, Λ).

    f_boundary takes complex boundary points and returns values.
    """
    theta, w = boundary_quadrature(m)
    pts = boundary_correspondence(m, theta)
    vals = np.asarray(f_boundary(pts)) * sqrt_derivative(m, np.exp(1j * theta))
    return float(np.sqrt(np.dot(w, np.abs(vals) ** 2)))


def smirnov_series(f_boundary: Callable[[np.ndarray], np.ndarray], m: ConformalMap,
                   N: int = 256) -> disk_hardy.CircleSeries:
    """(f∘φ)(φ′)^{1/2} sampled at 2N+1 nodes, half-step shifted off the prevertices"""
    M = 2 * N + 1
    theta = 2.0 * np.pi * (np.arange(M) + 0.5) / M
    pts = boundary_correspondence(m, theta)
    vals = np.asarray(f_boundary(pts)) * sqrt_derivative(m, np.exp(1j * theta))
    return disk_hardy.CircleSeries.from_samples(vals)


def a2_of_derivative(m: ConformalMap, N: int = 256) -> Tuple[float, float]:
    """A₂ constants of |φ′| and 1/|φ′| sampled on 𝕋"""
    M = 2 * N + 1
    theta = 2.0 * np.pi * (np.arange(M) + 0.5) / M
    mod = np.abs(map_derivative(m, np.exp(1j * theta)))
    return disk_hardy.a2_constant(mod), disk_hardy.a2_constant(1.0 / mod)


def inverse_derivative_norm(m: ConformalMap, rho: float = 0.9, M: int = 1025) -> float:
    """(∫|1/φ′(ρe^{iθ})|² dθ)^{1/2}"""
    theta = 2.0 * np.pi * np.arange(M) / M
    vals = 1.0 / np.abs(map_derivative(m, rho * np.exp(1j * theta)))
    return float(np.sqrt(2.0 * np.pi * np.mean(vals ** 2)))


# ----- Map files -----

def write_map(m: ConformalMap, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["# prevertex_angle turning_exponent"]
    lines += [f"prevertex {t:.17g} {mu:.17g}" for t, mu in zip(m.angles, m.turning_exponents)]
    lines.append(f"scale {m.scale.real:.17g} {m.scale.imag:.17g}")
    lines.append(f"shift {m.shift.real:.17g} {m.shift.imag:.17g}")
    if m.vertices is not None:
        lines += [f"vertex {x:.17g} {y:.17g}" for x, y in m.vertices]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_map(path) -> ConformalMap:
    angles, mus, verts = [], [], []
    scale = shift = None
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].split()
        if not line:
            continue
        key, vals = line[0], [float(x) for x in line[1:]]
        if key == "prevertex":
            angles.append(vals[0])
            mus.append(vals[1])
        elif key == "scale":
            scale = complex(vals[0], vals[1])
        elif key == "shift":
            shift = complex(vals[0], vals[1])
        elif key == "vertex":
            verts.append(vals[:2])
    if not angles or scale is None or shift is None:
        raise GeometryError(f"{path}: map file needs prevertex, scale and shift lines")
    return ConformalMap(np.exp(1j * np.asarray(angles)), np.asarray(mus), scale, shift,
                        np.asarray(verts) if verts else None)
