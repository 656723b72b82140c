"""
Config schema: required fields per config section, YAML loaders, the
conductivity formula registry and the worker-thread cap.
"""

import hashlib
import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Union

import numpy as np
import yaml

from .errors import ConfigError

logger = logging.getLogger(__name__)


def thread_cap() -> int:
    """ROBINUCQ_THREADS, or the CPU count"""
    raw = os.getenv("ROBINUCQ_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            logger.warning(f"ignoring ROBINUCQ_THREADS={raw!r}: not an integer")
    return os.cpu_count() or 1


# Required keys per section; alternatives are grouped in tuples (one of them)
CONFIG_FIELDS = {
    'problem': [
        ('mesh', 'domain'),
        'sigma',
    ],
    'robin': [
        'partition',
        'lambda',
        'g',
    ],
    'neumann': [
        'g',
    ],
    'suite': [
        'cases',
    ],
    'case': [
        'case_id',
        'kind',
    ],
}

CASE_KINDS = ('gap', 'recovery', 'continuation', 'factorization', 'anisotropic', 'rolle')


def missing_fields(section: str, cfg: Dict[str, Any]) -> list:
    missing = []
    for field in CONFIG_FIELDS[section]:
        options = field if isinstance(field, tuple) else (field,)
        if not any(o in cfg for o in options):
            missing.append(" | ".join(options))
    return missing


def require_fields(section: str, cfg: Dict[str, Any], where: str = "config") -> None:
    missing = missing_fields(section, cfg)
    if missing:
        raise ConfigError(f"{where}: missing {section} field(s): {', '.join(missing)}")


def load_yaml(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: invalid YAML ({e})")
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def config_hash(cfg: Dict[str, Any]) -> str:
    """sha256 of the canonical JSON form"""
    blob = json.dumps(cfg, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def file_digest(path: Union[str, Path]) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ----- Conductivity formulas -----
# Each takes node coordinates plus keyword parameters; r is measured from the origin.

def _one(x, y):
    return np.ones_like(x)


def _constant(x, y, value=1.0):
    return np.full_like(x, float(value))


def _radial_bump(x, y, a=0.5, b=4.0):
    return 1.0 + a * np.exp(-b * (x ** 2 + y ** 2))


def _smooth_wave(x, y, a=0.3, k=1.0):
    if abs(a) >= 1.0:
        raise ConfigError("smooth_wave needs |a| < 1 to stay elliptic")
    return 1.0 + a * np.sin(k * np.pi * x) * np.cos(k * np.pi * y)


def _diag(x, y, a=1.0, d=4.0):
    out = np.zeros((len(x), 2, 2))
    out[:, 0, 0] = a
    out[:, 1, 1] = d
    return out


def _aniso_bump(x, y, a=0.5, b=4.0):
    e = a * np.exp(-b * (x ** 2 + y ** 2))
    out = np.zeros((len(x), 2, 2))
    out[:, 0, 0] = 1.0 + e
    out[:, 0, 1] = out[:, 1, 0] = 0.5 * e
    out[:, 1, 1] = 1.0 + 2.0 * e
    return out


SIGMA_FORMULAS: Dict[str, Callable[..., np.ndarray]] = {
    'one': _one,
    'constant': _constant,
    'radial_bump': _radial_bump,
    'smooth_wave': _smooth_wave,
    'diag': _diag,
    'aniso_bump': _aniso_bump,
}


def sigma_formula(name: str, x: np.ndarray, y: np.ndarray, **params) -> np.ndarray:
    if name not in SIGMA_FORMULAS:
        raise ConfigError(f"unknown σ formula {name!r}; known: {', '.join(SIGMA_FORMULAS)}")
    try:
        return SIGMA_FORMULAS[name](x, y, **params)
    except TypeError as e:
        raise ConfigError(f"σ formula {name!r}: bad parameters ({e})")


# ----- Problem assembly -----

@dataclass(frozen=True, eq=False)
class Problem:
    """A configured forward problem: mesh, σ, and either Robin or Neumann data"""

    mesh: Any
    sigma: Any
    g: Any
    partition: Any = None
    lam: Any = None
    spec: Any = None
    neumann: bool = False
    conormal: bool = False
    source: Optional[Dict[str, Any]] = None


def build_domain(dcfg: Dict[str, Any]):
    from . import geometry

    if 'vertices' in dcfg:
        return geometry.build_polygon(dcfg['vertices'])
    shape = dcfg.get('shape', 'square')
    if shape == 'square':
        return geometry.unit_square()
    if shape == 'rectangle':
        return geometry.rectangle(float(dcfg.get('width', 2.0)), float(dcfg.get('height', 1.0)))
    if shape == 'lshape':
        return geometry.l_shape()
    if shape == 'ngon':
        return geometry.regular_ngon(int(dcfg.get('n', 64)), float(dcfg.get('radius', 1.0)))
    if shape == 'disk':
        return geometry.disk_polygon(int(dcfg.get('n', 64)))
    raise ConfigError(f"unknown domain shape {shape!r}")


def build_mesh(cfg: Dict[str, Any], base: Path = Path("."), h: Optional[float] = None):
    from . import geometry

    if 'mesh' in cfg:
        return geometry.read_mesh(base / cfg['mesh'])
    if 'domain' not in cfg:
        raise ConfigError("config needs `mesh` or `domain`")
    h = float(h if h is not None else cfg.get('h', 0.1))
    return geometry.triangulate(build_domain(cfg['domain']), h)


def build_sigma(scfg: Any, mesh, base: Path = Path(".")):
    from .fem import Conductivity

    x, y = mesh.nodes.T
    if isinstance(scfg, (int, float)):
        return Conductivity.constant(mesh, float(scfg))
    if not isinstance(scfg, dict):
        raise ConfigError("sigma must be a number or a mapping")
    if 'constant' in scfg:
        return Conductivity.constant(mesh, float(scfg['constant']))
    if 'matrix' in scfg:
        M = np.asarray(scfg['matrix'], dtype=float)
        if M.shape != (2, 2):
            raise ConfigError("sigma.matrix must be 2×2")
        return Conductivity(np.broadcast_to(M, (mesh.n_nodes, 2, 2)).copy())
    if 'file' in scfg:
        vals = np.loadtxt(base / scfg['file'], ndmin=1)
        if vals.ndim == 2 and vals.shape[1] == 4:
            vals = vals.reshape(-1, 2, 2)
        return Conductivity(vals)
    if 'formula' in scfg:
        params = {k: v for k, v in scfg.items() if k != 'formula'}
        return Conductivity(sigma_formula(scfg['formula'], x, y, **params))
    raise ConfigError("sigma needs one of: constant, matrix, file, formula")


def boundary_angles(mesh) -> np.ndarray:
    c = mesh.nodes.mean(axis=0) if mesh.domain is None else np.array([mesh.domain.centroid.real,
                                                                       mesh.domain.centroid.imag])
    p = mesh.boundary_points - c
    return np.mod(np.arctan2(p[:, 1], p[:, 0]), 2.0 * np.pi)


def build_boundary_values(vcfg: Any, mesh, name: str) -> np.ndarray:
    """Number, per-node list, or {mode: cos|sin, k, amplitude} in the boundary angle"""
    nb = len(mesh.boundary_nodes)
    if isinstance(vcfg, (int, float)):
        return np.full(nb, float(vcfg))
    if isinstance(vcfg, list):
        vals = np.asarray(vcfg, dtype=float)
        return vals
    if isinstance(vcfg, dict) and 'mode' in vcfg:
        th = boundary_angles(mesh)
        k = int(vcfg.get('k', 1))
        amp = float(vcfg.get('amplitude', 1.0))
        if vcfg['mode'] == 'cos':
            return amp * np.cos(k * th)
        if vcfg['mode'] == 'sin':
            return amp * np.sin(k * th)
        raise ConfigError(f"{name}.mode must be cos or sin")
    raise ConfigError(f"{name} must be a number, a list or a mode mapping")


def gamma_spans(pcfg: Dict[str, Any], mesh) -> list:
    """Arclength spans from `gamma`, or angle spans from `gamma_angles` (regular n-gons)"""
    if 'gamma' in pcfg:
        return [tuple(map(float, s)) for s in pcfg['gamma']]
    if 'gamma_angles' in pcfg:
        L = mesh.perimeter
        return [(float(a) / (2.0 * np.pi) * L, float(b) / (2.0 * np.pi) * L) for a, b in pcfg['gamma_angles']]
    raise ConfigError("partition needs `gamma` or `gamma_angles`")


def build_lambda(lcfg: Any, mesh, partition) -> np.ndarray:
    nb = len(mesh.boundary_nodes)
    mask = partition.gamma_mask
    if isinstance(lcfg, (int, float)):
        return np.where(mask, float(lcfg), 0.0)
    vals = np.asarray(lcfg, dtype=float)
    if len(vals) == mask.sum():
        full = np.zeros(nb)
        full[mask] = vals
        return full
    if len(vals) == nb:
        return np.where(mask, vals, 0.0)
    raise ConfigError(f"lambda has {len(vals)} samples; Γ has {int(mask.sum())} nodes")


def build_problem(cfg: Dict[str, Any], base: Path = Path("."), h: Optional[float] = None,
                  mesh=None) -> Problem:
    """Mesh, σ, partition and boundary data from a problem config mapping"""
    from .fem import BoundaryFunction, RobinSpec
    from .geometry import partition_boundary

    require_fields('problem', cfg)
    mesh = mesh if mesh is not None else build_mesh(cfg, base, h)
    sigma = build_sigma(cfg['sigma'], mesh, base)
    neumann = bool(cfg.get('neumann', False))
    conormal = bool(cfg.get('conormal', False))
    require_fields('neumann' if neumann else 'robin', cfg)
    g = BoundaryFunction(build_boundary_values(cfg['g'], mesh, 'g'), mesh)
    if neumann:
        return Problem(mesh, sigma, g, neumann=True, conormal=conormal, source=cfg)

    partition = partition_boundary(mesh, gamma_spans(cfg['partition'], mesh))
    lam = BoundaryFunction(build_lambda(cfg['lambda'], mesh, partition), mesh)
    spec = RobinSpec(sigma, partition, lam, g)
    return Problem(mesh, sigma, spec.g, partition, spec.lam, spec, source=cfg)


def load_problem(path: Union[str, Path], h: Optional[float] = None) -> Problem:
    path = Path(path)
    return build_problem(load_yaml(path), path.parent, h)


def load_suite(config: Union[str, Path, Dict[str, Any]]):
    """(defaults, cases, base dir); each case gets the defaults merged underneath"""
    if isinstance(config, dict):
        cfg, base = config, Path(".")
    else:
        cfg, base = load_yaml(config), Path(config).parent
    require_fields('suite', cfg, "suite config")
    defaults = cfg.get('defaults') or {}
    cases = []
    for i, case in enumerate(cfg['cases'] or []):
        if not isinstance(case, dict):
            raise ConfigError(f"suite case #{i} must be a mapping")
        merged = {**defaults, **case}
        require_fields('case', merged, f"suite case #{i}")
        if merged['kind'] not in CASE_KINDS:
            raise ConfigError(f"suite case {merged['case_id']!r}: unknown kind {merged['kind']!r}")
        cases.append(merged)
    return defaults, cases, base
