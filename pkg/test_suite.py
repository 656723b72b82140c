import csv
import io
import json
import tempfile
import unittest
from contextlib import redirect_stderr, redirect_stdout
from pathlib import Path

import numpy as np
import yaml

from src.disk_hardy import CircleSeries, circle_nodes, read_series, write_series
from src.errors import ConfigError
from src.experiments.base_experiment import BaseExperiment
from src.experiments.rolle_experiment import arc_distance, fat_cantor_spans
from src.inverse import run_uniqueness_experiment
from src.main import main
from src.suite_runner import REPORT_COLUMNS, SuiteRunner, summarize

SUITE = {
    'defaults': {
        'domain': {'shape': 'disk', 'n': 32},
        'h': 0.2,
        'sigma': {'constant': 1.0},
        'partition': {'gamma_angles': [[np.pi, 2.0 * np.pi]]},
        'lambda': 0.5,
        'g': {'mode': 'cos', 'k': 1},
    },
    'cases': [
        {'case_id': 'gap-same', 'kind': 'gap', 'lambda2': 0.5},
        {'case_id': 'gap-differ', 'kind': 'gap', 'lambda2': 1.0},
        {'case_id': 'recover-direct', 'kind': 'recovery', 'lambda': 0.7, 'complete': False},
        {'case_id': 'recover-noisy', 'kind': 'recovery', 'lambda': 0.7, 'noise': 0.01},
        {'case_id': 'broken', 'kind': 'gap', 'partition': {'gamma': [[0.01, 0.02]]}},
        {'case_id': 'rolle-isolated', 'kind': 'rolle', 'trace': 'isolated', 'k': 3},
    ],
}


def quiet(func, *args, **kwargs):
    with redirect_stdout(io.StringIO()):
        return func(*args, **kwargs)


class TestSuiteRunner(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.TemporaryDirectory()
        runner = SuiteRunner.from_config(SUITE, seed=0, threads=2)
        cls.report = quiet(runner.run, cls.tmp.name)
        cls.rows = {r['case_id']: r for r in cls.report.rows}

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()

    def test_rows_keep_case_order(self):
        """One row per case, in config order."""
        self.assertEqual([r['case_id'] for r in self.report.rows], [c['case_id'] for c in SUITE['cases']])

    def test_gap_verdicts(self):
        """Equal λ gives no gap, different λ a clear one; both are consistent."""
        self.assertLessEqual(self.rows['gap-same']['gap'], 1e-12)
        self.assertGreater(self.rows['gap-differ']['gap'], 1e-3)
        self.assertEqual(self.rows['gap-same']['verdict'], 'CONSISTENT')
        self.assertEqual(self.rows['gap-differ']['verdict'], 'CONSISTENT')

    def test_recovery_row(self):
        """Recovery from the forward solution is exact."""
        row = self.rows['recover-direct']
        self.assertLess(row['recovery_err'], 1e-8)
        self.assertEqual(row['verdict'], 'CONSISTENT')

    def test_noisy_recovery_row(self):
        """1% trace noise is recovered within 20% and the completion's reg and misfit are reported."""
        row = self.rows['recover-noisy']
        self.assertLessEqual(row['recovery_err'], 0.2)
        self.assertEqual(row['verdict'], 'CONSISTENT')
        self.assertIsNotNone(row['reg'])
        self.assertLess(row['misfit'], 0.05)

    def test_failing_case_becomes_error_row(self):
        """A bad partition fails its own case only."""
        self.assertIn('PartitionError', self.rows['broken']['error'])
        self.assertEqual(len(self.report.failed), 1)
        self.assertEqual(self.report.summary['errors'], 1)

    def test_isolated_zeros(self):
        """Isolated zeros of cos 3θ never form a Rolle set."""
        row = self.rows['rolle-isolated']
        self.assertEqual(row['rolle_nodes'], 0)
        self.assertEqual(row['verdict'], 'CONSISTENT')

    def test_summary(self):
        """Differing gaps sit above the floor; the seed and config hash are recorded."""
        s = self.report.summary
        self.assertTrue(s['gaps_separated'])
        self.assertEqual(s['seed'], 0)
        self.assertEqual(len(s['config_hash']), 64)

    def test_outputs(self):
        """report.csv has the report columns, one line per case; summary.json and report.xlsx exist."""
        out = Path(self.tmp.name)
        with open(out / "report.csv", newline="") as fh:
            table = list(csv.reader(fh))
        self.assertEqual(table[0], REPORT_COLUMNS)
        self.assertEqual(len(table), 1 + len(SUITE['cases']))
        summary = json.loads((out / "summary.json").read_text())
        self.assertEqual(summary['summary']['cases'], len(SUITE['cases']))
        self.assertTrue((out / "report.xlsx").is_file())

    def test_unknown_kind(self):
        """Case kinds must be registered."""
        bad = {'cases': [{'case_id': 'x', 'kind': 'tomography'}]}
        with self.assertRaises(ConfigError):
            SuiteRunner.from_config(bad)


class TestSummarize(unittest.TestCase):

    def test_overlapping_gaps(self):
        """A differing gap at the identical-λ floor is not separated."""
        rows = [
            {'case_id': 'a', 'gap': 1e-6, 'same_lambda': True, 'verdict': 'INCONSISTENT'},
            {'case_id': 'b', 'gap': 2e-6, 'same_lambda': False, 'verdict': 'CONSISTENT'},
        ]
        s = summarize(rows)
        self.assertFalse(s['gaps_separated'])
        self.assertEqual(s['verdicts'], {'INCONSISTENT': 1, 'CONSISTENT': 1})

    def test_empty(self):
        """No rows, no gap statistics."""
        s = summarize([])
        self.assertEqual(s['cases'], 0)
        self.assertIsNone(s['gaps_separated'])

    def test_empty_suite_run(self):
        """A suite with no cases still writes an empty report."""
        with tempfile.TemporaryDirectory() as tmp:
            report = quiet(run_uniqueness_experiment, {'cases': []}, tmp)
            with open(Path(tmp) / "report.csv", newline="") as fh:
                self.assertEqual(list(csv.reader(fh)), [REPORT_COLUMNS])
        self.assertEqual(report.rows, [])
        self.assertEqual(report.summary['errors'], 0)


class TestExperimentHelpers(unittest.TestCase):

    def test_base_run(self):
        """The base experiment has no run of its own."""
        with self.assertRaises(NotImplementedError):
            BaseExperiment({'case_id': 'x', 'kind': 'base'}).run()

    def test_fat_cantor_spans(self):
        """One level removes the middle quarter; each level doubles the arcs."""
        self.assertEqual(fat_cantor_spans(1.0, levels=1), [(0.0, 0.375), (0.625, 1.0)])
        spans = fat_cantor_spans(2.0, levels=3)
        self.assertEqual(len(spans), 8)
        self.assertTrue(all(a < b for a, b in spans))

    def test_arc_distance_wraps(self):
        """Distance to an arc is measured both ways round the loop."""
        d = arc_distance(np.array([0.5, 1.5, 3.9]), [(0.0, 1.0)], 4.0)
        np.testing.assert_allclose(d, [0.0, 0.5, 0.1])


class TestCommandLine(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_bad_flag_exits_one(self):
        """Usage errors exit with code 1."""
        with self.assertRaises(SystemExit) as ctx, redirect_stdout(io.StringIO()), redirect_stderr(io.StringIO()):
            main(['solve', '--bogus'])
        self.assertEqual(ctx.exception.code, 1)

    def test_missing_config(self):
        """A missing problem file is an input error."""
        code = quiet(main, ['solve', '--spec', str(self.dir / "nope.yaml"), '--out', str(self.dir / "out")])
        self.assertEqual(code, 1)

    def test_failed_run_keeps_manifest(self):
        """A failing command still writes manifest.json with the error and exit code."""
        out = self.dir / "out"
        code = quiet(main, ['solve', '--spec', str(self.dir / "nope.yaml"), '--out', str(out)])
        manifest = json.loads((out / "manifest.json").read_text())
        self.assertEqual(manifest['exit_code'], code)
        self.assertIn('ConfigError', manifest['error'])
        self.assertEqual(code, 1)

    def test_json_format(self):
        """--format json adds report.json next to the workbook; the manifest records no error."""
        series = write_series(CircleSeries.from_modes([(-1, 0.5), (1, 0.5)], 8), self.dir / "cos.series")
        out = self.dir / "out"
        code = quiet(main, ['hardy', 'conjugate', '--series', str(series), '--out', str(out), '--format', 'json'])
        self.assertEqual(code, 0)
        report = json.loads((out / "report.json").read_text())
        self.assertTrue(report)
        manifest = json.loads((out / "manifest.json").read_text())
        self.assertIsNone(manifest['error'])
        self.assertIn(str(out / "report.json"), manifest['outputs'])

    def test_hardy_conjugate(self):
        """`hardy conjugate` turns cos θ into sin θ."""
        series = write_series(CircleSeries.from_modes([(-1, 0.5), (1, 0.5)], 8), self.dir / "cos.series")
        out = self.dir / "out"
        code = quiet(main, ['hardy', 'conjugate', '--series', str(series), '--out', str(out)])
        self.assertEqual(code, 0)
        conj = read_series(out / "conjugate.series")
        np.testing.assert_allclose(conj.samples(), np.sin(circle_nodes(8)), atol=1e-14)
        self.assertTrue((out / "report.xlsx").is_file())

    def test_suite_command(self):
        """`suite` writes report.csv and the run manifest."""
        cfg = {'defaults': SUITE['defaults'], 'cases': SUITE['cases'][:2]}
        path = self.dir / "suite.yaml"
        path.write_text(yaml.safe_dump(json.loads(json.dumps(cfg))))
        out = self.dir / "out"
        code = quiet(main, ['suite', '--config', str(path), '--out', str(out), '--threads', '1'])
        self.assertEqual(code, 0)
        with open(out / "report.csv", newline="") as fh:
            self.assertEqual(len(list(csv.reader(fh))), 3)

    def test_solve_command(self):
        """`solve` on a Robin config writes nodal and boundary tables."""
        cfg = dict(SUITE['defaults'])
        path = self.dir / "robin.yaml"
        path.write_text(yaml.safe_dump(json.loads(json.dumps(cfg))))
        out = self.dir / "out"
        code = quiet(main, ['solve', '--spec', str(path), '--out', str(out)])
        self.assertEqual(code, 0)
        self.assertTrue((out / "nodal.csv").is_file())
        self.assertTrue((out / "boundary.csv").is_file())


if __name__ == '__main__':
    unittest.main()
