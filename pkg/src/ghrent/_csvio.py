"""Deterministic CSV text: header first, floats in shortest round-trip form."""

from __future__ import annotations

import csv
import io
from typing import Iterable, Sequence


def cell(v) -> str:
    if isinstance(v, float):  # np.float64 included; its own repr is not plain
        return repr(float(v))
    if hasattr(v, "item"):  # numpy scalar
        return cell(v.item())
    return str(v)


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([cell(v) for v in row])
    return buf.getvalue()
