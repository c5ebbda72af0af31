"""CSV and key=value serialisation of traces and metrics.

Numbers are written with 12 significant digits, ``.`` as decimal separator
and LF line endings, so equal traces give byte-identical files.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .sim import Metrics, Trace

FMT = "{:.12g}"


def header(n: int) -> list[str]:
    return (["t"] + [f"q{i + 1}" for i in range(n)] + [f"qd{i + 1}" for i in range(n)]
            + ["x", "z_force", "b_fc_z", "sigma", "active", "violation"])


@dataclass(frozen=True)
class TraceTable:
    """The CSV view of a trace: exactly the columns that are written."""

    t: np.ndarray
    q: np.ndarray
    qd: np.ndarray
    x: np.ndarray
    force: np.ndarray
    b_fc: np.ndarray
    sigma: np.ndarray
    active: np.ndarray
    violation: np.ndarray

    @classmethod
    def from_trace(cls, tr: Trace) -> "TraceTable":
        return cls(tr.t, tr.q, tr.qd, tr.x, tr.force, tr.b_fc, tr.sigma, tr.active, tr.violation)

    def equals(self, other: "TraceTable") -> bool:
        return all(np.array_equal(getattr(self, f), getattr(other, f))
                   for f in self.__dataclass_fields__)


def _fmt(v: float) -> str:
    s = FMT.format(float(v))
    return "0" if s == "-0" else s


def dumps(tr: Trace | TraceTable) -> str:
    tab = TraceTable.from_trace(tr) if isinstance(tr, Trace) else tr
    n = tab.q.shape[1]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header(n))
    for k in range(tab.t.shape[0]):
        row = [_fmt(tab.t[k])]
        row += [_fmt(v) for v in tab.q[k]]
        row += [_fmt(v) for v in tab.qd[k]]
        row += [_fmt(tab.x[k]), _fmt(tab.force[k]), _fmt(tab.b_fc[k]), _fmt(tab.sigma[k]),
                str(int(tab.active[k])), str(int(tab.violation[k]))]
        w.writerow(row)
    return buf.getvalue()


def loads(text: str) -> TraceTable:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise ValueError("empty trace file")
    head = rows[0]
    n = sum(1 for h in head if h.startswith("q") and not h.startswith("qd"))
    if head != header(n):
        raise ValueError(f"unexpected trace header: {','.join(head)}")
    data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float).reshape(-1, len(head))
    return TraceTable(
        t=data[:, 0], q=data[:, 1:1 + n], qd=data[:, 1 + n:1 + 2 * n],
        x=data[:, 1 + 2 * n], force=data[:, 2 + 2 * n], b_fc=data[:, 3 + 2 * n],
        sigma=data[:, 4 + 2 * n], active=data[:, 5 + 2 * n].astype(bool),
        violation=data[:, 6 + 2 * n].astype(bool),
    )


def quantize(tr: Trace) -> TraceTable:
    """The table a reader gets back: every value rounded to 12 significant digits."""
    return loads(dumps(tr))


def write_trace(tr: Trace, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="ascii") as fh:
        fh.write(dumps(tr))
    return path


def read_trace(path) -> TraceTable:
    return loads(Path(path).read_text(encoding="ascii"))


def dumps_metrics(m: Metrics, extra: dict | None = None) -> str:
    items = dict(extra or {})
    items.update(m.as_dict())
    lines = []
    for k, v in items.items():
        if isinstance(v, bool):
            v = int(v)
        lines.append(f"{k}={_fmt(v) if isinstance(v, float) else v}")
    return "\n".join(lines) + "\n"


def loads_metrics(text: str) -> dict:
    out = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        k, v = line.split("=", 1)
        try:
            out[k] = int(v)
        except ValueError:
            try:
                out[k] = float(v)
            except ValueError:
                out[k] = v
    return out
