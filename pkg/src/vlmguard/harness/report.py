"""Manifests, per-sample report CSVs and metric-distribution tables."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from ..errors import ParseError
from ..pipeline import DefenseOutcome
from ..sentinel import VerdictClass
from .evaluation import EvalRecord, EvalReport

REPORT_COLUMNS = ["id", "truth", "predicted", "m_anom", "h_norm", "c_local", "c_enh", "attack_score", "v_sem", "suffix"]
DIST_COLUMNS = ["id", "truth", "m_anom", "h_energy", "h_norm", "c_local", "c_enh"]
SUMMARY_MARKER = "# summary"


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    path: Path
    truth: VerdictClass


def read_manifest(path) -> list[ManifestEntry]:
    """``id<TAB>path<TAB>truth`` per line; relative paths resolve against the manifest."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ParseError(f"cannot read manifest {path}: {exc}") from exc
    entries = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ParseError(f"manifest line {lineno}: expected 3 tab-separated fields")
        sid, p, truth = parts
        try:
            cls = VerdictClass.parse(truth)
        except ValueError as exc:
            raise ParseError(f"manifest line {lineno}: {exc}") from None
        img = Path(p)
        entries.append(ManifestEntry(sid, img if img.is_absolute() else path.parent / img, cls))
    if not entries:
        raise ParseError(f"manifest {path} lists no samples")
    return entries


def _num(v) -> str:
    return "" if v is None else repr(float(v))


def report_rows(ids: Sequence[str], truths: Sequence[VerdictClass], outcomes: Sequence[DefenseOutcome]) -> list[list[str]]:
    rows = []
    for sid, truth, out in zip(ids, truths, outcomes):
        m = out.verdict.metrics
        rows.append([sid, truth.value, out.verdict.cls.value, _num(m.m_anom), _num(m.h_norm), _num(m.c_local),
                     _num(m.c_enh), _num(out.verdict.attack_score), _num(out.v_sem), " ".join(out.suffix)])
    return rows


def format_report(rows: list[list[str]], summary: EvalReport | None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    w.writerows(rows)
    if summary is not None:
        buf.write("\n" + SUMMARY_MARKER + "\n")
        buf.write("\n".join(summary.summary_lines()) + "\n")
    return buf.getvalue()


def format_distributions(ids, truths, outcomes: Sequence[DefenseOutcome]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(DIST_COLUMNS)
    for sid, truth, out in zip(ids, truths, outcomes):
        m = out.verdict.metrics
        w.writerow([sid, truth.value, _num(m.m_anom), _num(m.h_energy), _num(m.h_norm), _num(m.c_local), _num(m.c_enh)])
    return buf.getvalue()


def read_report_records(path) -> list[EvalRecord]:
    """Per-sample rows of a report CSV (the summary block is ignored)."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ParseError(f"cannot read report {path}: {exc}") from exc
    body = text.split("\n" + SUMMARY_MARKER, 1)[0]
    reader = csv.DictReader(io.StringIO(body))
    missing = {"id", "truth", "predicted", "attack_score"} - set(reader.fieldnames or ())
    if missing:
        raise ParseError(f"report is missing columns: {', '.join(sorted(missing))}")
    records = []
    for i, row in enumerate(reader, 2):
        if not any(row.values()):
            continue
        try:
            records.append(EvalRecord(row["id"], VerdictClass.parse(row["truth"]),
                                      VerdictClass.parse(row["predicted"]), float(row["attack_score"])))
        except (ValueError, TypeError) as exc:
            raise ParseError(f"report line {i}: {exc}") from None
    if not records:
        raise ParseError("report has no sample rows")
    return records
