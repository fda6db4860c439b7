"""CSV and Excel writers for solver reports, edit lists and benchmark tables."""

from __future__ import annotations

import csv
import math
from collections.abc import Iterable, Mapping, Sequence
from pathlib import Path

from robust_bundle_adjust.errors import IoError, ParseError

# Columns: (dict_key, french_header). CSV files use the keys, spreadsheets the headers.
Columns = Sequence[tuple[str, str]]

ITERATION_COLUMNS = [
    ("iteration", "Itération"),
    ("F", "Objectif F"),
    ("lambda", "Lambda"),
    ("accepted", "Accepté"),
    ("grad_inf_norm", "Norme inf. du gradient"),
    ("millis", "Durée (ms)"),
    ("gain_ratio", "Ratio de gain"),
]

REMOVED_COLUMNS = [
    ("observation", "Observation"),
    ("camera", "Caméra"),
    ("point", "Point"),
    ("residual_norm", "Norme du résidu"),
    ("threshold", "Seuil"),
    ("round", "Passe"),
]

RESULT_COLUMNS = [
    ("scheme", "Bruit"),
    ("algorithm", "Algorithme"),
    ("n_runs", "Tirages"),
    ("n_failed", "Échecs"),
    ("world_mean", "Monde µ"),
    ("world_median", "Monde médiane"),
    ("world_std", "Monde σ"),
    ("camera_mean", "Caméra µ"),
    ("camera_median", "Caméra médiane"),
    ("camera_std", "Caméra σ"),
]

TIMING_COLUMNS = [
    ("algorithm", "Algorithme"),
    ("iterations", "Itérations"),
    ("mean_iteration_ms", "Durée moyenne par itération (ms)"),
]

CURVE_COLUMNS = [
    ("u", "Résidu"),
    ("gaussian_nll", "Gauss -log f"),
    ("gaussian_psi", "Gauss psi"),
    ("laplace_nll", "Laplace -log f"),
    ("laplace_psi", "Laplace psi"),
    ("student_nll", "Student -log f"),
    ("student_psi", "Student psi"),
]


def _cell(value):
    if isinstance(value, bool):
        return int(value)
    if isinstance(value, float):
        return repr(value)
    return "" if value is None else value


def write_csv(path: str | Path, columns: Columns, rows: Iterable[Mapping]) -> None:
    path = Path(path)
    try:
        with path.open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, quoting=csv.QUOTE_MINIMAL, lineterminator="\n")
            writer.writerow([key for key, _ in columns])
            for row in rows:
                writer.writerow([_cell(row.get(key)) for key, _ in columns])
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc.strerror or exc}") from exc


def read_csv(path: str | Path, columns: Columns) -> list[dict]:
    """Read a file written by ``write_csv``; numeric cells come back as floats."""
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as handle:
            reader = csv.DictReader(handle)
            missing = [key for key, _ in columns if key not in (reader.fieldnames or [])]
            if missing:
                raise ParseError(f"{path}: missing columns {', '.join(missing)}")
            rows = []
            for record in reader:
                row = {}
                for key, _ in columns:
                    raw = record[key]
                    try:
                        row[key] = float(raw)
                    except ValueError:
                        row[key] = raw
                rows.append(row)
            return rows
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc.strerror or exc}") from exc


def write_xlsx(path: str | Path, sheets: Mapping[str, tuple[Columns, Sequence[Mapping]]]) -> None:
    """One worksheet per entry of ``sheets``, styled like the CSV headers in French."""
    from openpyxl import Workbook
    from openpyxl.styles import Alignment, Font, PatternFill
    from openpyxl.utils import get_column_letter

    wb = Workbook()
    wb.remove(wb.active)
    header_font = Font(bold=True, color="FFFFFF")
    header_fill = PatternFill(start_color="2D3250", end_color="2D3250", fill_type="solid")

    for title, (columns, rows) in sheets.items():
        ws = wb.create_sheet(title=title[:31])
        ws.append([header for _, header in columns])
        for cell in ws[1]:
            cell.font = header_font
            cell.fill = header_fill
            cell.alignment = Alignment(horizontal="center")

        for row in rows:
            values = []
            for key, _ in columns:
                value = row.get(key)
                if isinstance(value, float) and not math.isfinite(value):
                    value = str(value)
                values.append("" if value is None else value)
            ws.append(values)

        # Auto-adjust column widths
        for col_idx, (key, header) in enumerate(columns, 1):
            max_length = len(header)
            for row in rows[:100]:
                max_length = max(max_length, len(str(row.get(key, "") or "")))
            ws.column_dimensions[get_column_letter(col_idx)].width = min(max_length + 2, 35)

    try:
        wb.save(Path(path))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc.strerror or exc}") from exc
