"""
Report Generator - CSV tables, JSON summaries, the run manifest and the
"Checks" workbook
"""

import json
import sys
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np
import openpyxl
from openpyxl.styles import Alignment, Font, PatternFill

from . import __version__
from .problem_schema import file_digest

FLOAT_FMT = "{:.17g}"


def _fmt(v: Any) -> str:
    if isinstance(v, (float, np.floating)):
        return FLOAT_FMT.format(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return ""
    return str(v)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    """Comma-separated table, floats at 17 significant digits"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(header)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")
    return path


def write_columns(path, columns: Dict[str, np.ndarray]) -> Path:
    names = list(columns)
    cols = [np.asarray(columns[n]) for n in names]
    return write_csv(path, names, zip(*cols))


def write_nodal_csv(path, u) -> Path:
    """x,y,u"""
    x, y = u.mesh.nodes.T
    return write_columns(path, {"x": x, "y": y, "u": u.values})


def write_boundary_csv(path, u, sigma) -> Path:
    """s,u,dnu,dtau_u along the boundary loop"""
    from .fem import normal_derivative, tangential_derivative

    tr = u.trace()
    return write_columns(path, {
        "s": u.mesh.boundary_s,
        "u": tr.values,
        "dnu": normal_derivative(u, sigma).values,
        "dtau_u": tangential_derivative(tr).values,
    })


def write_factorization_csv(path, result) -> Path:
    """x,y,Re psi,Im psi,Re phi,Im phi"""
    x, y = result.psi.mesh.nodes.T
    return write_columns(path, {
        "x": x, "y": y,
        "Re psi": result.psi.real, "Im psi": result.psi.imag,
        "Re phi": result.phi.real, "Im phi": result.phi.imag,
    })


def write_json(path, data: Dict[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, Path):
        return str(v)
    return str(v)


@dataclass
class RunManifest:
    """One per CLI run: command line, config hash, input digests, timings, outputs"""

    command: List[str] = field(default_factory=lambda: list(sys.argv))
    config_hash: Optional[str] = None
    inputs: Dict[str, str] = field(default_factory=dict)
    version: str = __version__
    seed: int = 0
    timings: Dict[str, float] = field(default_factory=dict)
    outputs: List[str] = field(default_factory=list)
    error: Optional[str] = None
    exit_code: int = 0

    def record_error(self, exc: BaseException, exit_code: int) -> None:
        self.error = f"{type(exc).__name__}: {exc}"
        self.exit_code = int(exit_code)

    def add_input(self, path) -> None:
        path = Path(path)
        if path.is_file():
            self.inputs[str(path)] = file_digest(path)

    def add_output(self, path) -> Path:
        self.outputs.append(str(path))
        return Path(path)

    @contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.timings[name] = time.perf_counter() - t0

    def as_dict(self) -> Dict[str, Any]:
        return {
            "command": self.command,
            "config_hash": self.config_hash,
            "inputs": self.inputs,
            "version": self.version,
            "seed": self.seed,
            "timings": self.timings,
            "outputs": self.outputs,
            "error": self.error,
            "exit_code": self.exit_code,
        }

    def write(self, out_dir) -> Path:
        return write_json(Path(out_dir) / "manifest.json", self.as_dict())


# ----- Checks workbook -----

def generate_excel(output_path, title: str, sections: Dict[str, List[Dict[str, Any]]]) -> Path:
    """Workbook with a "Checks" sheet: one block per section, one row per record"""
    wb = openpyxl.Workbook()
    ws = wb.active
    ws.title = "Checks"

    ws.column_dimensions['A'].width = 18
    ws.column_dimensions['B'].width = 25
    for col in ['C', 'D', 'E', 'F', 'G', 'H', 'I', 'J']:
        ws.column_dimensions[col].width = 22

    header_fill = PatternFill(start_color="4472C4", end_color="4472C4", fill_type="solid")
    header_font = Font(color="FFFFFF", bold=True)
    section_font = Font(bold=True)
    fail_font = Font(color="C00000", bold=True)

    ws['A1'] = title
    ws['A1'].font = section_font
    current_row = 3

    for section, records in sections.items():
        ws[f'A{current_row}'] = section.upper()
        ws[f'A{current_row}'].font = section_font
        current_row += 1
        if not records:
            ws[f'B{current_row}'] = "(no records)"
            current_row += 2
            continue

        keys: List[str] = []
        for rec in records:
            keys += [k for k in rec if k not in keys]
        for j, key in enumerate(keys):
            cell = ws.cell(row=current_row, column=j + 2, value=key)
            cell.fill = header_fill
            cell.font = header_font
            cell.alignment = Alignment(horizontal='center', vertical='center', wrap_text=True)
        ws.row_dimensions[current_row].height = 30
        current_row += 1

        for rec in records:
            for j, key in enumerate(keys):
                v = rec.get(key, "")
                if isinstance(v, (np.generic,)):
                    v = v.item()
                if isinstance(v, (list, tuple, dict, np.ndarray)):
                    v = json.dumps(v, default=_json_default)
                cell = ws.cell(row=current_row, column=j + 2, value=v)
                if key in ('error', 'verdict') and v and v not in ('CONSISTENT', 'OK'):
                    cell.font = fail_font
            current_row += 1
        current_row += 1

    output_path = Path(output_path)
    output_path.parent.mkdir(parents=True, exist_ok=True)
    wb.save(output_path)
    return output_path
