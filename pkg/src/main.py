"""
Main script: command-line entry point for the Robin uniqueness workbench
"""

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from . import anisotropic, conformal, disk_hardy, factorization, fem, geometry, inverse
from .errors import InputError, NumericalError, WorkbenchError
from .experiments.continuation_experiment import ContinuationExperiment
from .experiments.rolle_experiment import RolleExperiment
from .problem_schema import (
    build_domain,
    build_lambda,
    build_mesh,
    build_problem,
    config_hash,
    load_yaml,
)
from .report_generator import (
    RunManifest,
    generate_excel,
    write_boundary_csv,
    write_columns,
    write_factorization_csv,
    write_json,
    write_nodal_csv,
)

logger = logging.getLogger(__name__)

Sections = Dict[str, List[Dict[str, Any]]]


class CliParser(argparse.ArgumentParser):
    """Usage errors exit with code 1"""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


class Run:
    """Per-invocation state: parsed args, output dir, manifest"""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.out = Path(args.out)
        self.manifest = RunManifest(seed=args.seed)
        self.rng = np.random.default_rng(args.seed)
        self._cfg: Optional[Dict[str, Any]] = None

    @property
    def h(self) -> Optional[float]:
        h = self.args.mesh_h
        if h is None and self._cfg is not None:
            h = self._cfg.get('h')
        if h is not None and self.args.refine:
            h = float(h) / 2 ** self.args.refine
        return h

    def config(self) -> Dict[str, Any]:
        if self._cfg is None:
            path = Path(self.args.spec)
            self._cfg = load_yaml(path)
            self.manifest.add_input(path)
            self.manifest.config_hash = config_hash(self._cfg)
            if 'mesh' in self._cfg:
                self.manifest.add_input(path.parent / self._cfg['mesh'])
        return self._cfg

    @property
    def base(self) -> Path:
        return Path(self.args.spec).parent

    def problem(self):
        cfg = self.config()
        with self.manifest.stage("build"):
            return build_problem(cfg, self.base, self.h)

    def output(self, path: Path) -> Path:
        self.manifest.add_output(path)
        print(f"   ✓ wrote {path}")
        return path


def _forward(run: Run, p) -> fem.ScalarField:
    with run.manifest.stage("solve"):
        if p.neumann:
            return fem.solve_neumann(p.mesh, p.sigma, p.g, conormal=p.conormal)
        return fem.solve_robin(p.spec, p.mesh)


def _read_series(run: Run) -> disk_hardy.CircleSeries:
    path = Path(run.args.series)
    run.manifest.add_input(path)
    return disk_hardy.read_series(path)


def _read_map(run: Run) -> conformal.ConformalMap:
    path = Path(run.args.map)
    run.manifest.add_input(path)
    return conformal.read_map(path)


# ----- mesh / solve / factorize -----

def cmd_mesh(run: Run) -> Sections:
    cfg = run.config()
    with run.manifest.stage("triangulate"):
        mesh = build_mesh(cfg, run.base, run.h)
    run.output(geometry.write_mesh(mesh, run.out / "mesh.txt"))
    return {'mesh': [{
        'nodes': mesh.n_nodes, 'triangles': len(mesh.triangles), 'h': mesh.h,
        'boundary_nodes': len(mesh.boundary_nodes), 'perimeter': mesh.perimeter, 'area': mesh.total_area,
    }]}


def cmd_solve(run: Run) -> Sections:
    p = run.problem()
    u = _forward(run, p)
    run.output(write_nodal_csv(run.out / "nodal.csv", u))
    run.output(write_boundary_csv(run.out / "boundary.csv", u, p.sigma))
    check = {
        'problem': 'neumann' if p.neumann else 'robin',
        'nodes': p.mesh.n_nodes,
        'interior_residual': fem.interior_residual(u, p.sigma),
        'w12_norm': fem.w12_norm(u),
    }
    if not p.neumann:
        robin, flux = fem.flux_balance(u, p.spec)
        check.update(flux_balance_robin=robin, flux_balance_g=flux,
                     energy_norm=fem.robin_energy_norm(u, p.sigma, p.spec.lam, p.partition))
    return {'solve': [check]}


def cmd_factorize(run: Run) -> Sections:
    p = run.problem()
    u = _forward(run, p)
    with run.manifest.stage("factorize"):
        fac = factorization.similarity_factorize(u, p.sigma, realify=run.args.realify, threads=run.args.threads)
    run.output(write_factorization_csv(run.out / "factorization.csv", fac))
    summary = fac.summary()
    if not fac.trivial:
        summary['log_integral'] = factorization.boundary_log_integral(fac.phi, p.mesh)
    if not p.sigma.is_isotropic:
        summary['note'] = 'σ is anisotropic'
    run.output(write_json(run.out / "factorization.json", summary))
    return {'factorization': [summary]}


def _case(run: Run, kind: str, **extra) -> Dict[str, Any]:
    case = {**run.config(), 'case_id': Path(run.args.spec).stem, 'kind': kind}
    if run.h is not None:
        case['h'] = run.h
    case.update({k: v for k, v in extra.items() if v is not None})
    return case


def cmd_probe(run: Run) -> Sections:
    probe = None
    if run.args.probe_gamma:
        g = run.args.probe_gamma
        probe = {'gamma': [g[i:i + 2] for i in range(0, len(g) - 1, 2)]}
    case = _case(run, 'continuation', probe=probe, tol=run.args.tol, scale=run.args.scale)
    with run.manifest.stage("probe"):
        row = ContinuationExperiment(case, run.args.seed, run.base).run()
    run.output(write_json(run.out / "probe.json", row))
    return {'continuation': [row]}


def cmd_rolle(run: Run) -> Sections:
    case = _case(run, 'rolle', levels=run.args.levels, gap=run.args.gap,
                 trace=run.args.trace, k=run.args.k, tol=run.args.tol)
    with run.manifest.stage("rolle"):
        row = RolleExperiment(case, run.args.seed, run.base).run()
    run.output(write_json(run.out / "rolle.json", row))
    return {'rolle': [row]}


# ----- hardy -----

def cmd_hardy_conjugate(run: Run) -> Sections:
    s = _read_series(run)
    conj = disk_hardy.conjugate_function(s)
    run.output(disk_hardy.write_series(conj, run.out / "conjugate.series"))
    return {'conjugate': [{'order': s.N, 'l2_in': s.l2_norm(), 'l2_out': conj.l2_norm(), 'mean_in': abs(s.mean)}]}


def cmd_hardy_outer(run: Run) -> Sections:
    s = _read_series(run)
    E = disk_hardy.outer_function(s, s.samples().real)
    run.output(disk_hardy.write_series(E.series, run.out / "outer.series"))
    mod = np.abs(disk_hardy.boundary_values(E))
    target = s.samples().real
    return {'outer': [{
        'order': s.N,
        'E(0)': float(E(0.0).real),
        'modulus_error': float(np.abs(mod - target).max() / np.abs(target).max()),
        'h2_norm': disk_hardy.hardy_norm(E),
    }]}


def cmd_hardy_a2(run: Run) -> Sections:
    w = _read_series(run).samples().real
    return {'a2': [{'samples': len(w), 'a2': disk_hardy.a2_constant(w)}]}


def cmd_hardy_maximal(run: Run) -> Sections:
    s = _read_series(run)
    vals = s.samples()
    mx = disk_hardy.hl_maximal(vals)
    theta = disk_hardy.circle_nodes(s.N)
    run.output(write_columns(run.out / "maximal.csv", {'theta': theta, 'abs': np.abs(vals), 'maximal': mx}))
    return {'maximal': [{'samples': len(vals), 'max': float(mx.max()), 'min_ratio': float((mx / np.maximum(np.abs(vals), 1e-300)).min())}]}


def cmd_hardy_nt(run: Run) -> Sections:
    s = _read_series(run)
    f = disk_hardy.holomorphic(s) if run.args.kind == 'holomorphic' else disk_hardy.DiskFunction(s)
    nt = disk_hardy.nontangential_max(f, run.args.alpha)
    theta = disk_hardy.circle_nodes(f.series.N)
    run.output(write_columns(run.out / "nontangential.csv", {'theta': theta, 'nt_max': nt}))
    return {'nontangential': [{'alpha': run.args.alpha, 'kind': f.kind, 'max': float(nt.max())}]}


# ----- conformal -----

def cmd_conformal_fit(run: Run) -> Sections:
    cfg = run.config()
    if 'domain' not in cfg:
        raise InputError("conformal fit needs a `domain` polygon")
    domain = build_domain(cfg['domain'])
    with run.manifest.stage("fit"):
        m = conformal.schwarz_christoffel(domain)
    run.output(conformal.write_map(m, run.out / "map.txt"))
    a2_mod, a2_inv = conformal.a2_of_derivative(m)
    return {'conformal': [{
        'vertices': m.n,
        'perimeter': domain.perimeter,
        'perimeter_integral': conformal.perimeter_integral(m),
        'area': domain.area,
        'area_integral': conformal.area_integral(m),
        'a2_derivative': a2_mod,
        'a2_inverse_derivative': a2_inv,
    }]}


def cmd_conformal_eval(run: Run) -> Sections:
    m = _read_map(run)
    if run.args.points:
        pts = np.asarray(run.args.points, dtype=float).reshape(-1, 2)
        z = pts[:, 0] + 1j * pts[:, 1]
        w = conformal.evaluate(m, z)
        dw = conformal.map_derivative(m, z)
        run.output(write_columns(run.out / "map_eval.csv", {
            'x': z.real, 'y': z.imag, 'Re phi': w.real, 'Im phi': w.imag, 'abs dphi': np.abs(dw),
        }))
        return {'evaluate': [{'points': len(z)}]}
    theta = 2.0 * np.pi * np.arange(run.args.n) / run.args.n
    w = conformal.boundary_correspondence(m, theta)
    run.output(write_columns(run.out / "boundary_map.csv", {'theta': theta, 'x': w.real, 'y': w.imag}))
    return {'boundary_correspondence': [{'samples': len(theta)}]}


def cmd_conformal_a2(run: Run) -> Sections:
    m = _read_map(run)
    a2_mod, a2_inv = conformal.a2_of_derivative(m)
    return {'a2': [{
        'a2_derivative': a2_mod,
        'a2_inverse_derivative': a2_inv,
        'inverse_derivative_norm': conformal.inverse_derivative_norm(m),
    }]}


# ----- iso -----

def cmd_iso_mu1(run: Run) -> Sections:
    p = run.problem()
    mu = anisotropic.mu1(p.sigma, p.mesh)
    x, y = p.mesh.nodes.T
    run.output(write_columns(run.out / "mu1.csv", {'x': x, 'y': y, 'Re mu1': mu.real, 'Im mu1': mu.imag}))
    return {'mu1': [{'nodes': p.mesh.n_nodes, 'max_abs_mu1': float(np.abs(mu.values).max())}]}


def _beltrami(run: Run, p) -> anisotropic.BeltramiMap:
    with run.manifest.stage("beltrami"):
        return anisotropic.solve_beltrami(anisotropic.mu_on_grid(p.sigma, p.mesh, run.args.grid_n))


def cmd_iso_solve(run: Run) -> Sections:
    p = run.problem()
    bmap = _beltrami(run, p)
    run.output(anisotropic.write_grid(bmap.grid.with_values(bmap.theta_values), run.out / "theta.grid"))
    return {'beltrami': [{
        'k': bmap.k_bound, 'iterations': bmap.iterations, 'residual': bmap.residual,
        'far_field_slope': anisotropic.far_field_slope(bmap),
    }]}


def cmd_iso_pushforward(run: Run) -> Sections:
    p = run.problem()
    bmap = _beltrami(run, p)
    with run.manifest.stage("pushforward"):
        push = anisotropic.pushforward_conductivity(p.sigma, p.mesh, bmap)
    run.output(write_columns(run.out / "pushforward.csv", {
        'x': push.points.real, 'y': push.points.imag, 'sigma_tilde': push.sigma_tilde,
    }))
    check = {'matrix_discrepancy': push.matrix_discrepancy, 'inversion_error': push.inversion_error}
    if not p.neumann:
        check.update(anisotropic.robin_conormal_check(_forward(run, p), p.spec, bmap))
    return {'pushforward': [check]}


# ----- invert -----

def _robin(run: Run):
    p = run.problem()
    if p.neumann:
        raise InputError("invert commands need a Robin problem (partition, lambda, g)")
    return p


def _cauchy_data(run: Run, p) -> inverse.CauchyData:
    if run.args.data:
        path = Path(run.args.data)
        run.manifest.add_input(path)
        table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if table.shape != (len(p.mesh.boundary_nodes), 2):
            raise InputError(f"{path}: expected columns g,u for {len(p.mesh.boundary_nodes)} boundary nodes")
        g = fem.BoundaryFunction(table[:, 0], p.mesh)
        return inverse.CauchyData(g, fem.BoundaryFunction(table[:, 1], p.mesh), p.partition.gamma0_mask)
    data = inverse.CauchyData.from_solution(_forward(run, p), p.spec)
    if run.args.noise:
        data = inverse.add_trace_noise(data, run.args.noise, run.rng)
    return data


def _complete(run: Run, p, data) -> Tuple[fem.ScalarField, float]:
    with run.manifest.stage("complete"):
        if run.args.noise and not run.args.data:
            reg, u, rows = inverse.discrepancy_sweep(p.mesh, p.sigma, p.partition, data, run.args.noise)
            run.output(write_columns(run.out / "sweep.csv", {
                'reg': [r.reg for r in rows], 'misfit': [r.misfit for r in rows],
            }))
            return u, reg
        return inverse.complete_cauchy_data(p.mesh, p.sigma, p.partition, data, run.args.reg), run.args.reg


def cmd_invert_complete(run: Run) -> Sections:
    p = _robin(run)
    data = _cauchy_data(run, p)
    u, reg = _complete(run, p, data)
    run.output(write_nodal_csv(run.out / "completed.csv", u))
    run.output(write_boundary_csv(run.out / "boundary.csv", u, p.sigma))
    return {'completion': [{
        'reg': reg,
        'misfit': inverse.data_misfit(u, p.sigma, data),
        'trace_misfit': inverse.data_misfit(u, p.sigma, data, trace_only=True),
    }]}


def cmd_invert_recover(run: Run) -> Sections:
    p = _robin(run)
    data = _cauchy_data(run, p)
    if run.args.degree is not None:
        with run.manifest.stage("recover"):
            rec = inverse.recover_robin_from_data(p.mesh, p.sigma, p.partition, data, run.args.noise,
                                                  max_degree=run.args.degree, floor=run.args.floor,
                                                  reg=run.args.reg)
    else:
        u, reg = _complete(run, p, data)
        with run.manifest.stage("recover"):
            rec = inverse.recover_robin(u, p.sigma, p.partition, run.args.floor, data=data, reg=reg)
    lam_hat = np.where(rec.mask, np.nan, rec.lambda_hat.values)
    g = p.partition.gamma_mask
    run.output(write_columns(run.out / "lambda.csv", {
        's': p.mesh.boundary_s[g], 'lambda_true': p.spec.lam.values[g],
        'lambda_hat': lam_hat[g], 'masked': rec.mask[g].astype(int),
    }))
    check = {'reg': rec.regularization, 'misfit': rec.misfit, 'masked_fraction': rec.masked_fraction}
    if rec.degree is not None:
        check['degree'] = rec.degree
    if not run.args.data:
        check['recovery_err'] = rec.error_against(p.spec.lam)
    return {'recovery': [check]}


def cmd_invert_gap(run: Run) -> Sections:
    p = _robin(run)
    lam2 = run.args.lambda2 if run.args.lambda2 is not None else run.config().get('lambda2', run.config()['lambda'])
    spec2 = p.spec.with_lambda(p.spec.lam.with_values(build_lambda(lam2, p.mesh, p.partition)))
    with run.manifest.stage("gap"):
        gap = inverse.uniqueness_gap(p.spec, spec2, p.mesh, symmetric=run.args.symmetric)
    sections: Sections = {'gap': [{'gap': gap, 'nodes': p.mesh.n_nodes}]}
    if run.args.trend:
        with run.manifest.stage("trend"):
            rows = inverse.gap_trend(p.spec, p.mesh, run.args.trend)
        run.output(write_columns(run.out / "gap_trend.csv", {
            'nodes': [r.nodes for r in rows], 'arc_length': [r.arc_length for r in rows], 'gap': [r.gap for r in rows],
        }))
        sections['trend'] = [{'nodes': r.nodes, 'arc_length': r.arc_length, 'gap': r.gap} for r in rows]
    return sections


def cmd_suite(run: Run) -> Sections:
    path = Path(run.args.config)
    run.manifest.add_input(path)
    with run.manifest.stage("suite"):
        report = inverse.run_uniqueness_experiment(path, run.out, seed=run.args.seed, threads=run.args.threads)
    run.manifest.config_hash = report.summary["config_hash"]
    for p in report.outputs:
        run.manifest.add_output(p)
    return {'summary': [dict(report.summary, verdicts=str(report.summary['verdicts']))]}


# ----- parser -----

def _common() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--out', default=None, help="output directory (default runs/<command>)")
    common.add_argument('--seed', type=int, default=0)
    common.add_argument('--threads', type=int, default=None, help="worker cap (overrides ROBINUCQ_THREADS)")
    common.add_argument('--verbose', '-v', action='store_true')
    common.add_argument('--format', choices=['csv', 'json'], default='csv',
                        help="json also writes the checks as report.json")
    return common


def _problem_args(p: argparse.ArgumentParser) -> None:
    p.add_argument('--spec', required=True, help="problem config (YAML)")
    p.add_argument('--mesh-h', type=float, default=None)
    p.add_argument('--refine', type=int, default=0, help="halve h this many times")


def build_parser() -> CliParser:
    common = _common()
    parser = CliParser(prog="python -m src.main", description="Robin uniqueness workbench")
    sub = parser.add_subparsers(dest='command', required=True, parser_class=CliParser)

    def leaf(group, name: str, func: Callable[[Run], Sections], problem: bool = True, **kw):
        p = group.add_parser(name, parents=[common], **kw)
        if problem:
            _problem_args(p)
        p.set_defaults(func=func)
        return p

    leaf(sub, 'mesh', cmd_mesh, help="triangulate the configured domain")
    leaf(sub, 'solve', cmd_solve, help="forward Robin or Neumann solve")
    p = leaf(sub, 'factorize', cmd_factorize, help="similarity-principle factorization")
    p.add_argument('--realify', action='store_true')
    p = leaf(sub, 'probe-continuation', cmd_probe, help="unique continuation probe")
    p.add_argument('--probe-gamma', type=float, nargs='+', default=None, help="arclength spans a1 b1 [a2 b2 ...]")
    p.add_argument('--tol', type=float, default=None)
    p.add_argument('--scale', type=float, default=None)
    p = leaf(sub, 'rolle', cmd_rolle, help="Rolle zero-set check on constructed traces")
    p.add_argument('--levels', type=int, default=None)
    p.add_argument('--gap', type=float, default=None)
    p.add_argument('--trace', choices=['fat', 'isolated'], default=None)
    p.add_argument('--k', type=int, default=None)
    p.add_argument('--tol', type=float, default=None)

    hardy = sub.add_parser('hardy').add_subparsers(dest='action', required=True, parser_class=CliParser)
    for name, func in [('conjugate', cmd_hardy_conjugate), ('outer', cmd_hardy_outer),
                       ('a2', cmd_hardy_a2), ('maximal', cmd_hardy_maximal), ('nt', cmd_hardy_nt)]:
        p = leaf(hardy, name, func, problem=False)
        p.add_argument('--series', required=True, help="series file (k re im)")
        if name == 'nt':
            p.add_argument('--alpha', type=float, default=2.0)
            p.add_argument('--kind', choices=['harmonic', 'holomorphic'], default='harmonic')

    conf = sub.add_parser('conformal').add_subparsers(dest='action', required=True, parser_class=CliParser)
    leaf(conf, 'fit', cmd_conformal_fit)
    p = leaf(conf, 'eval', cmd_conformal_eval, problem=False)
    p.add_argument('--map', required=True)
    p.add_argument('--points', type=float, nargs='+', default=None, help="x1 y1 x2 y2 ... inside the disk")
    p.add_argument('--n', type=int, default=256, help="boundary samples when no points are given")
    p = leaf(conf, 'a2', cmd_conformal_a2, problem=False)
    p.add_argument('--map', required=True)

    iso = sub.add_parser('iso').add_subparsers(dest='action', required=True, parser_class=CliParser)
    leaf(iso, 'mu1', cmd_iso_mu1)
    for name, func in [('solve', cmd_iso_solve), ('pushforward', cmd_iso_pushforward)]:
        p = leaf(iso, name, func)
        p.add_argument('--grid-n', type=int, default=anisotropic.GRID_N)

    inv = sub.add_parser('invert').add_subparsers(dest='action', required=True, parser_class=CliParser)
    for name, func in [('complete', cmd_invert_complete), ('recover', cmd_invert_recover)]:
        p = leaf(inv, name, func)
        p.add_argument('--data', default=None, help="CSV g,u per boundary node (default: synthetic forward run)")
        p.add_argument('--noise', type=float, default=0.0)
        p.add_argument('--reg', type=float, default=1e-8)
        if name == 'recover':
            p.add_argument('--floor', type=float, default=inverse.RECOVERY_FLOOR)
            p.add_argument('--degree', type=int, default=None,
                           help="fit log λ as a series up to this degree by output least squares")
    p = leaf(inv, 'gap', cmd_invert_gap)
    p.add_argument('--lambda2', type=float, default=None)
    p.add_argument('--symmetric', action='store_true')
    p.add_argument('--trend', type=int, nargs='+', default=None, help="perturbed node counts")
    p = leaf(inv, 'suite', cmd_suite, problem=False)
    p.add_argument('--config', required=True)

    p = leaf(sub, 'suite', cmd_suite, problem=False)
    p.add_argument('--config', required=True)
    return parser


def _label(args: argparse.Namespace) -> str:
    return " ".join(x for x in (args.command, getattr(args, 'action', None)) if x)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.threads:
        os.environ["ROBINUCQ_THREADS"] = str(args.threads)
    label = _label(args)
    if args.out is None:
        args.out = str(Path("runs") / label.replace(" ", "_"))

    print("=" * 80)
    print(f"🧮 ROBIN UNIQUENESS WORKBENCH · {label}")
    print("=" * 80)
    for key in ('spec', 'config', 'series', 'map'):
        if getattr(args, key, None):
            print(f"Input:  {getattr(args, key)}")
    print(f"Output: {args.out}")
    print("=" * 80)

    run = Run(args)
    try:
        sections = args.func(run)
        run.output(generate_excel(run.out / "report.xlsx", f"Robin uniqueness workbench · {label}", sections))
        if args.format == 'json':
            run.output(write_json(run.out / "report.json", sections))
    except WorkbenchError as e:
        print(f"\n✗ {type(e).__name__}: {e}")
        run.manifest.record_error(e, e.exit_code)
        return e.exit_code
    except np.linalg.LinAlgError as e:
        print(f"\n✗ linear algebra failure: {e}")
        run.manifest.record_error(e, NumericalError.exit_code)
        return NumericalError.exit_code
    finally:
        run.output(run.manifest.write(run.out))

    for name, records in sections.items():
        for rec in records:
            shown = ", ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}"
                              for k, v in rec.items() if not isinstance(v, (list, dict)))
            print(f"   {name}: {shown}")
    print("\n✅ DONE!")
    return 0


if __name__ == "__main__":
    sys.exit(main())
