"""
Hardy-space toolkit on the unit disk.

Boundary functions are truncated Fourier series sampled at 2N+1 equispaced
angles; conjugation, Poisson extension and outer functions act on the
coefficients directly.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy.ndimage import maximum_filter1d

from .errors import CoefficientError, DomainError

logger = logging.getLogger(__name__)

DEFAULT_ORDER = 256
CONE_RADII = 16
CONE_OFFSETS = 33


def circle_nodes(N: int) -> np.ndarray:
    M = 2 * N + 1
    return 2.0 * np.pi * np.arange(M) / M


@dataclass(frozen=True, eq=False)
class CircleSeries:
    """Coefficients c_k for k = -N..N, stored in that order"""

    coefficients: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=complex)
        if c.ndim != 1 or len(c) % 2 == 0:
            raise CoefficientError("a CircleSeries needs 2N+1 coefficients")
        object.__setattr__(self, "coefficients", c)

    @property
    def N(self) -> int:
        return (len(self.coefficients) - 1) // 2

    @property
    def k(self) -> np.ndarray:
        return np.arange(-self.N, self.N + 1)

    def coefficient(self, k: int) -> complex:
        if abs(k) > self.N:
            return 0j
        return complex(self.coefficients[k + self.N])

    @property
    def mean(self) -> complex:
        return self.coefficient(0)

    @classmethod
    def from_samples(cls, values: Sequence[complex]) -> "CircleSeries":
        v = np.asarray(values)
        if len(v) % 2 == 0:
            raise CoefficientError(f"need an odd number of equispaced samples, got {len(v)}")
        return cls(np.fft.fftshift(np.fft.fft(v)) / len(v))

    @classmethod
    def from_function(cls, func: Callable[[np.ndarray], np.ndarray], N: int = DEFAULT_ORDER) -> "CircleSeries":
        return cls.from_samples(func(circle_nodes(N)))

    @classmethod
    def from_modes(cls, modes: Iterable[Tuple[int, complex]], N: int) -> "CircleSeries":
        c = np.zeros(2 * N + 1, dtype=complex)
        for k, amp in modes:
            c[k + N] += amp
        return cls(c)

    def samples(self) -> np.ndarray:
        """Values at the 2N+1 nodes of circle_nodes(N)"""
        c = self.coefficients
        return np.fft.ifft(np.fft.ifftshift(c)) * len(c)

    def evaluate(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        return np.exp(1j * np.multiply.outer(theta, self.k)) @ self.coefficients

    def is_real(self, tol: float = 1e-12) -> bool:
        c = self.coefficients
        scale = max(1.0, float(np.abs(c).max(initial=0.0)))
        return bool(np.abs(c - np.conj(c[::-1])).max(initial=0.0) <= tol * scale)

    def resized(self, N: int) -> "CircleSeries":
        out = np.zeros(2 * N + 1, dtype=complex)
        m = min(N, self.N)
        out[N - m:N + m + 1] = self.coefficients[self.N - m:self.N + m + 1]
        return CircleSeries(out)

    def l2_norm(self) -> float:
        """(∫|ψ|² dθ)^{1/2} by Parseval"""
        return float(np.sqrt(2.0 * np.pi * np.sum(np.abs(self.coefficients) ** 2)))

    def __add__(self, other: "CircleSeries") -> "CircleSeries":
        N = max(self.N, other.N)
        return CircleSeries(self.resized(N).coefficients + other.resized(N).coefficients)

    def __sub__(self, other: "CircleSeries") -> "CircleSeries":
        return self + other.scaled(-1.0)

    def scaled(self, factor: complex) -> "CircleSeries":
        return CircleSeries(self.coefficients * factor)


@dataclass(frozen=True, eq=False)
class DiskFunction:
    """Boundary series plus how it extends inside: 'harmonic' or 'holomorphic'.

    Outer functions also keep the holomorphic series of their logarithm and
    are evaluated as its exponential.
    """

    series: CircleSeries
    kind: str = "harmonic"
    log_series: Optional[CircleSeries] = None

    def __post_init__(self):
        if self.kind not in ("harmonic", "holomorphic"):
            raise CoefficientError(f"unknown DiskFunction kind {self.kind!r}")

    def __call__(self, z) -> np.ndarray:
        if self.log_series is not None:
            return np.exp(poisson_extend(self.log_series, z))
        return poisson_extend(self.series, z)


def hardy_projection(series: CircleSeries) -> CircleSeries:
    """Drop the negative modes"""
    c = series.coefficients.copy()
    c[: series.N] = 0.0
    return CircleSeries(c)


def holomorphic(series: CircleSeries, tol: float = 1e-12) -> DiskFunction:
    c = series.coefficients
    neg = np.abs(c[: series.N]).max(initial=0.0)
    if neg > tol * max(1.0, float(np.abs(c).max(initial=0.0))):
        logger.warning(f"projecting out negative modes of size {neg:.3g}")
    return DiskFunction(hardy_projection(series), kind="holomorphic")


def boundary_values(f: DiskFunction) -> np.ndarray:
    """Values of f at circle_nodes(N)"""
    if f.log_series is not None:
        return np.exp(f.log_series.samples())
    return f.series.samples()


# ----- Operations -----

def poisson_extend(series: CircleSeries, z):
    """Σ c_k r^{|k|} e^{ikθ} at z = r e^{iθ}, |z| < 1"""
    z_arr = np.asarray(z, dtype=complex)
    if np.any(np.abs(z_arr) >= 1.0):
        raise DomainError("poisson_extend needs |z| < 1")
    flat = z_arr.ravel()
    r, theta = np.abs(flat), np.angle(flat)
    k = series.k
    out = np.empty(len(flat), dtype=complex)
    step = max(1, 2_000_000 // max(1, len(k)))
    for start in range(0, len(flat), step):
        sl = slice(start, start + step)
        kernel = np.power.outer(r[sl], np.abs(k)) * np.exp(1j * np.multiply.outer(theta[sl], k))
        out[sl] = kernel @ series.coefficients
    if z_arr.ndim == 0:
        return complex(out[0])
    return out.reshape(z_arr.shape)


def conjugate_function(series: CircleSeries) -> CircleSeries:
    """Multiplier −i·sgn(k); the output has zero mean"""
    if not series.is_real():
        raise CoefficientError("conjugate_function needs a real-valued series")
    return CircleSeries(-1j * np.sign(series.k) * series.coefficients)


def outer_function(h: Optional[CircleSeries], samples_of_h: Sequence[float]) -> DiskFunction:
    """Outer function E_h = exp(log h + i·conj(log h)) with E_h(0) > 0.

    `h` is optional; only the samples at circle_nodes(N) are used.
    """
    w = np.asarray(samples_of_h, dtype=float)
    if np.any(~np.isfinite(w)) or np.any(w <= 0.0):
        raise CoefficientError("outer_function needs h > 0 at every node so that log h ∈ L¹(𝕋)")
    if h is not None and 2 * h.N + 1 != len(w):
        logger.debug("samples and series differ in order, using the samples")

    log_h = CircleSeries.from_samples(np.log(w))
    log_h = CircleSeries(_realify(log_h.coefficients))
    N = log_h.N
    c = log_h.coefficients.copy()
    c[:N] = 0.0
    c[N + 1:] *= 2.0
    log_outer = CircleSeries(c)

    # exp on a 4x finer grid, truncated back to order N
    fine = log_outer.resized(4 * N + 1)
    values = np.exp(fine.samples())
    series = CircleSeries.from_samples(values).resized(N)
    return DiskFunction(hardy_projection(series), kind="holomorphic", log_series=log_outer)


def _realify(c: np.ndarray) -> np.ndarray:
    """Enforce c_{-k} = conj(c_k) on coefficients of a real function"""
    return 0.5 * (c + np.conj(c[::-1]))


def hardy_norm(f: DiskFunction, p: float = 2.0, radii: Optional[Sequence[float]] = None) -> float:
    """H^p norm, (∫|f|^p dθ)^{1/p} at the boundary.

    p = 2 uses Parseval on the coefficients. Other p take the max over the
    supplied radii of the circle integral, which should grow with the radius.
    """
    if not 1.0 <= p < np.inf:
        raise DomainError(f"hardy_norm needs p in [1, ∞), got {p}")
    if p == 2.0 and radii is None:
        return f.series.l2_norm()
    if f.kind != "holomorphic":
        raise CoefficientError("hardy_norm on sampled radii needs a holomorphic DiskFunction")
    profile = hardy_norm_profile(f, p, radii)
    return float(max(profile.values()))


def hardy_norm_profile(f: DiskFunction, p: float, radii: Optional[Sequence[float]] = None) -> dict:
    if radii is None:
        radii = [0.5, 0.7, 0.8, 0.9, 0.95, 0.99]
    M = 2 * max(f.series.N, 64) + 1
    theta = 2.0 * np.pi * np.arange(M) / M
    profile = {}
    for rho in sorted(float(r) for r in radii):
        vals = np.abs(f(rho * np.exp(1j * theta)))
        profile[rho] = float((2.0 * np.pi * np.mean(vals ** p)) ** (1.0 / p))
    seq = list(profile.values())
    if any(b < a * (1 - 1e-10) for a, b in zip(seq, seq[1:])):
        logger.warning("circle means are not increasing in the radius")
    return profile


def _arc_means(values: np.ndarray) -> list:
    """For each arc length L = 1..M, the mean over the arc starting at node i"""
    M = len(values)
    doubled = np.concatenate([values, values])
    csum = np.concatenate([[0.0], np.cumsum(doubled)])
    start = np.arange(M)
    return [(csum[start + L] - csum[start]) / L for L in range(1, M + 1)]


def a2_constant(w: Sequence[float]) -> float:
    """sup over node-aligned arcs of (mean w)(mean 1/w); always ≥ 1"""
    w = np.asarray(w, dtype=float)
    if np.any(~np.isfinite(w)) or np.any(w <= 0.0):
        raise CoefficientError("a2_constant needs strictly positive weights")
    if np.ptp(w) == 0.0:
        return 1.0
    scale = np.exp(np.mean(np.log(w)))
    w = w / scale
    best = 1.0
    for mw, miw in zip(_arc_means(w), _arc_means(1.0 / w)):
        best = max(best, float((mw * miw).max()))
    return best


def hl_maximal(phi: Sequence[complex]) -> np.ndarray:
    """Per node, max over node-aligned arcs containing it of the mean of |φ|"""
    a = np.abs(np.asarray(phi))
    M = len(a)
    out = a.copy()
    for L, means in enumerate(_arc_means(a), start=1):
        if L == 1:
            continue
        win = maximum_filter1d(means, size=L, mode="wrap")
        out = np.maximum(out, np.roll(win, L - 1 - L // 2))
    return out


def nontangential_max(f: DiskFunction, alpha: float, n_radii: int = CONE_RADII,
                      n_offsets: int = CONE_OFFSETS) -> np.ndarray:
    """|f| maximized over a sampled cone {|z − ξ| < α(1 − |z|)} at each node ξ"""
    if not alpha > 1.0:
        raise DomainError(f"nontangential_max needs α > 1, got {alpha}")
    M = 2 * f.series.N + 1
    theta = 2.0 * np.pi * np.arange(M) / M
    out = np.abs(boundary_values(f))
    gaps = np.geomspace(1.0, 1.0 / M, n_radii)
    for gap in gaps:
        r = 1.0 - gap
        if r <= 0.0:
            t_max = np.pi
        else:
            arg = gap * np.sqrt(alpha * alpha - 1.0) / (2.0 * np.sqrt(r))
            t_max = np.pi if arg >= 1.0 else 2.0 * np.arcsin(arg)
        offsets = np.linspace(-t_max, t_max, n_offsets) * (1.0 - 1e-9)
        z = r * np.exp(1j * (theta[:, None] + offsets[None, :]))
        out = np.maximum(out, np.abs(f(z)).max(axis=1))
    return out


def weighted_conjugation_ratio(w: Sequence[float], phi: Sequence[float]) -> float:
    """∫|φ̃|² w / ∫|φ|² w for real samples φ"""
    w = np.asarray(w, dtype=float)
    series = CircleSeries.from_samples(np.asarray(phi, dtype=float))
    series = CircleSeries(_realify(series.coefficients))
    conj = conjugate_function(series).samples().real
    return float(np.sum(conj ** 2 * w) / np.sum(np.asarray(phi) ** 2 * w))


# ----- Series files -----

def write_series(series: CircleSeries, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["# k re im"]
    lines += [f"{k} {c.real:.17g} {c.imag:.17g}" for k, c in zip(series.k, series.coefficients)]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_series(path) -> CircleSeries:
    entries = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            k = int(parts[0])
            re_ = float(parts[1])
            im_ = float(parts[2]) if len(parts) > 2 else 0.0
        except (ValueError, IndexError):
            raise CoefficientError(f"{path}: bad series line {raw!r}")
        entries[k] = entries.get(k, 0j) + complex(re_, im_)
    if not entries:
        raise CoefficientError(f"{path}: empty series file")
    N = max(abs(k) for k in entries)
    return CircleSeries.from_modes(entries.items(), N)
