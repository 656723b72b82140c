"""
Suite Runner - runs every case of a suite config through its experiment and
collects one report row per case
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np

from .experiments.anisotropic_experiment import AnisotropicExperiment
from .experiments.base_experiment import GAP_FLOOR
from .experiments.continuation_experiment import ContinuationExperiment
from .experiments.factorization_experiment import FactorizationExperiment
from .experiments.gap_experiment import GapExperiment
from .experiments.recovery_experiment import RecoveryExperiment
from .experiments.rolle_experiment import RolleExperiment
from .problem_schema import config_hash, load_suite, thread_cap
from .report_generator import generate_excel, write_csv, write_json

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ['case_id', 'gap', 'recovery_err', 'masked_fraction', 'verdict']


@dataclass
class SuiteReport:
    rows: List[Dict[str, Any]] = field(default_factory=list)
    summary: Dict[str, Any] = field(default_factory=dict)
    outputs: List[Path] = field(default_factory=list)

    @property
    def failed(self) -> List[Dict[str, Any]]:
        return [r for r in self.rows if r.get('error')]


def summarize(rows: List[Dict[str, Any]]) -> Dict[str, Any]:
    """Verdict counts plus the gap floor check over gap-type cases"""
    verdicts: Dict[str, int] = {}
    for r in rows:
        key = 'ERROR' if r.get('error') else str(r.get('verdict'))
        verdicts[key] = verdicts.get(key, 0) + 1

    gap_rows = [r for r in rows if r.get('gap') is not None and not r.get('error')]
    same = [r['gap'] for r in gap_rows if r.get('same_lambda')]
    differ = [r['gap'] for r in gap_rows if not r.get('same_lambda')]
    floor = max(same) if same else None
    smallest = min(differ) if differ else None
    separated = None
    if smallest is not None:
        separated = bool(smallest > 10.0 * max(floor or 0.0, GAP_FLOOR))

    errs = [r['recovery_err'] for r in rows if r.get('recovery_err') is not None]
    return {
        'cases': len(rows),
        'verdicts': verdicts,
        'errors': verdicts.get('ERROR', 0),
        'gap_floor': floor,
        'min_gap_differing': smallest,
        'gaps_separated': separated,
        'max_recovery_err': max(errs) if errs else None,
        'note': 'gap thresholds are empirical per-mesh floors',
    }


class SuiteRunner:
    """Runs suite cases; a failing case becomes an error row"""

    EXPERIMENTS = {
        'gap': GapExperiment,
        'recovery': RecoveryExperiment,
        'continuation': ContinuationExperiment,
        'factorization': FactorizationExperiment,
        'anisotropic': AnisotropicExperiment,
        'rolle': RolleExperiment,
    }

    def __init__(self, cases: List[Dict[str, Any]], base: Path = Path("."), seed: int = 0,
                 threads: Optional[int] = None, config: Optional[Dict[str, Any]] = None):
        self.cases = cases
        self.base = Path(base)
        self.seed = seed
        self.threads = threads or thread_cap()
        self.config = config if config is not None else {'cases': cases}

    @classmethod
    def from_config(cls, config: Union[str, Path, Dict[str, Any]], seed: int = 0,
                    threads: Optional[int] = None) -> "SuiteRunner":
        defaults, cases, base = load_suite(config)
        raw = config if isinstance(config, dict) else {'defaults': defaults, 'cases': cases}
        return cls(cases, base, seed, threads, raw)

    def run_case(self, index: int, case: Dict[str, Any]) -> Dict[str, Any]:
        kind = case['kind']
        try:
            experiment = self.EXPERIMENTS[kind](case, seed=self.seed + index, base=self.base)
            return experiment.run()
        except Exception as e:
            logger.debug(f"case {case.get('case_id')} failed", exc_info=True)
            return {
                'case_id': case.get('case_id'),
                'kind': kind,
                'error': f"{type(e).__name__}: {e}",
            }

    def run(self, out_dir: Optional[Union[str, Path]] = None) -> SuiteReport:
        print(f"\n🧪 Running {len(self.cases)} cases ({self.threads} threads)")
        if not self.cases:
            rows = []
        elif self.threads == 1:
            rows = [self.run_case(i, c) for i, c in enumerate(self.cases)]
        else:
            with ThreadPoolExecutor(max_workers=min(self.threads, len(self.cases))) as pool:
                rows = list(pool.map(self.run_case, range(len(self.cases)), self.cases))

        for r in rows:
            if r.get('error'):
                print(f"   ✗ {r['case_id']} ({r['kind']}): {r['error']}")
            else:
                print(f"   ✓ {r['case_id']} ({r['kind']}): {r.get('verdict')}")

        report = SuiteReport(rows, summarize(rows))
        report.summary['config_hash'] = config_hash(self.config)
        report.summary['seed'] = self.seed
        if out_dir is not None:
            report.outputs = self.write(report, Path(out_dir))
        return report

    def write(self, report: SuiteReport, out_dir: Path) -> List[Path]:
        table = [[r.get(c) for c in REPORT_COLUMNS] for r in report.rows]
        outputs = [
            write_csv(out_dir / "report.csv", REPORT_COLUMNS, table),
            write_json(out_dir / "summary.json", {'summary': report.summary, 'cases': report.rows}),
        ]
        sections: Dict[str, List[Dict[str, Any]]] = {}
        for r in report.rows:
            sections.setdefault(r['kind'], []).append(_flatten(r))
        sections['summary'] = [_flatten(report.summary)]
        outputs.append(generate_excel(out_dir / "report.xlsx", "Robin uniqueness suite", sections))
        return outputs


def _flatten(record: Dict[str, Any]) -> Dict[str, Any]:
    out = {}
    for k, v in record.items():
        if isinstance(v, dict):
            out.update({f"{k}.{kk}": vv for kk, vv in v.items()})
        elif isinstance(v, (float, np.floating)) and not np.isfinite(v):
            out[k] = str(v)
        else:
            out[k] = v
    return out
