"""Sectioned text report with a machine-readable CSV twin.

Every value shown in the text is written to the CSV with the same string
representation, so the two artifacts never disagree.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

__all__ = ["Section", "fmt", "emit_report", "write_csv"]

STATUSES = ("pass", "fail", "skipped", "aborted", "info")


def fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass
class Section:
    name: str
    status: str = "skipped"
    rows: list[tuple[str, object]] = field(default_factory=list)
    note: str = ""

    def __post_init__(self):
        if self.status not in STATUSES:
            raise ValueError(f"status must be one of {STATUSES}")

    def add(self, key: str, value) -> "Section":
        self.rows.append((key, value))
        return self


def write_csv(path, header, rows) -> str:
    """RFC 4180 CSV (CRLF line ends, UTF-8); returns the text written."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(header)
    writer.writerows(rows)
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8", newline="")
    return text


def emit_report(sections: list[Section], out_dir=None, stem: str = "report") -> str:
    """Render ``sections`` as text; with ``out_dir`` also write ``<stem>.txt`` and ``<stem>.csv``."""
    lines = []
    csv_rows = []
    for sec in sections:
        lines.append(f"[{sec.name}] {sec.status.upper()}")
        csv_rows.append([sec.name, "status", sec.status])
        if sec.note:
            lines.append(f"  note: {sec.note}")
            csv_rows.append([sec.name, "note", sec.note])
        for key, value in sec.rows:
            text = fmt(value)
            lines.append(f"  {key} = {text}")
            csv_rows.append([sec.name, key, text])
        lines.append("")
    overall = "fail" if any(s.status in ("fail", "aborted") for s in sections) else "pass"
    lines.append(f"overall: {overall}")
    csv_rows.append(["overall", "status", overall])
    text = "\n".join(lines) + "\n"
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{stem}.txt").write_text(text, encoding="utf-8")
        write_csv(out / f"{stem}.csv", ["section", "key", "value"], csv_rows)
    return text
