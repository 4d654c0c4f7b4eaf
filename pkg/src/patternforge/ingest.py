"""CSV ingestion into a close/volume/RSI series."""
from __future__ import annotations

import csv
import datetime as dt
import math
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DomainError
from .series import MultivariateSeries, compute_rsi

REQUIRED_COLUMNS = ("date", "open", "high", "low", "close", "volume")
DEFAULT_CHANNELS = ("close", "volume", "rsi")


def rsi_with_warmup(close: Sequence[float], period: int = 14) -> np.ndarray:
    """Wilder RSI; the first ``period`` rows use plain averages of the moves seen so far.

    Row 0 has no move and is set to 50. Those warm-up rows are kept so every
    ingested row has a value; model windows skip them (see ``drop_warmup``).
    """
    c = np.asarray(close, dtype=float)
    out = np.empty(len(c))
    if len(c) == 0:
        return out
    out[0] = 50.0
    delta = np.diff(c)
    for i in range(1, min(period, len(c) - 1) + 1):
        g = np.clip(delta[:i], 0, None).mean()
        l = np.clip(-delta[:i], 0, None).mean()
        out[i] = 50.0 if g == l == 0 else (100.0 if l == 0 else 100.0 - 100.0 / (1.0 + g / l))
    if len(c) > period:
        out[period:] = compute_rsi(c, period)[period:]
    return out


def ingest_csv(path: str | Path, channels: Sequence[str] = DEFAULT_CHANNELS, rsi_period: int = 14) -> MultivariateSeries:
    """Parse ``date,open,high,low,close,volume`` rows into the requested channels.

    Any malformed row is reported with its line number; dates must be strictly
    increasing.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DomainError(f"{path}: empty file")
        header = [h.strip().lower() for h in header]
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise DomainError(f"{path}: header lacks columns {missing}")
        pos = {c: header.index(c) for c in REQUIRED_COLUMNS}
        dates, rows = [], []
        for row in reader:
            line = reader.line_num
            if not row or all(not f.strip() for f in row):
                continue
            if len(row) != len(header):
                raise DomainError(f"{path}:{line}: expected {len(header)} fields, got {len(row)}")
            try:
                d = dt.date.fromisoformat(row[pos["date"]].strip())
            except ValueError:
                raise DomainError(f"{path}:{line}: bad date {row[pos['date']]!r}") from None
            vals = []
            for col in REQUIRED_COLUMNS[1:]:
                text = row[pos[col]].strip()
                try:
                    v = float(text)
                except ValueError:
                    raise DomainError(f"{path}:{line}: non-numeric {col} {text!r}") from None
                if not math.isfinite(v):
                    raise DomainError(f"{path}:{line}: non-finite {col}")
                vals.append(v)
            if dates and d <= dates[-1]:
                kind = "duplicate" if d == dates[-1] else "out-of-order"
                raise DomainError(f"{path}:{line}: {kind} date {d.isoformat()}")
            dates.append(d)
            rows.append(vals)
    if not rows:
        raise DomainError(f"{path}: no data rows")
    table = dict(zip(REQUIRED_COLUMNS[1:], np.array(rows).T))
    table["rsi"] = rsi_with_warmup(table["close"], rsi_period)
    unknown = [c for c in channels if c not in table]
    if unknown:
        raise DomainError(f"unknown channels {unknown}")
    values = np.column_stack([table[c] for c in channels])
    return MultivariateSeries(dates, values, list(channels))
