"""Average Daily Increase Rate (IR) of new cases per geo-unit."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InconsistentWindow, MissingSeries, SeriesTooShort
from .ingest import CaseSeries


@dataclass(frozen=True)
class TargetVector:
    units: tuple[str, ...]
    ir: np.ndarray
    n_days: int

    def __post_init__(self):
        ir = np.array(self.ir, dtype=float, copy=True)
        units = tuple(str(u) for u in self.units)
        if ir.shape != (len(units),):
            raise ValueError(f"{len(units)} units but ir has shape {ir.shape}")
        if not np.all(np.isfinite(ir)):
            raise ValueError("IR values must be finite")
        ir.setflags(write=False)
        object.__setattr__(self, "units", units)
        object.__setattr__(self, "ir", ir)

    def __len__(self):
        return len(self.units)


def compute_ir(series) -> float:
    """IR = sum_{d=1}^{N_D-1} (NewCases(d+1) - NewCases(d)) / N_D.

    The divisor is the number of recorded days N_D, not the number of
    differences. The sum is accumulated exactly (``math.fsum`` over the
    individual terms), so the result is the correctly rounded value of
    ``(NewCases(N_D) - NewCases(1)) / N_D``.

    ``series`` may be a :class:`CaseSeries` or a plain sequence of daily new
    case counts.
    """
    cases = series.new_cases if isinstance(series, CaseSeries) else np.asarray(series, dtype=float)
    n_days = len(cases)
    if n_days < 2:
        raise SeriesTooShort(f"need at least 2 days, got {n_days}")
    terms = []
    for d in range(n_days - 1):
        terms.append(float(cases[d + 1]))
        terms.append(-float(cases[d]))
    return math.fsum(terms) / n_days


def compute_target(series_map, units) -> TargetVector:
    units = [str(u) for u in units]
    if not units:
        raise MissingSeries("no units requested")
    missing = [u for u in units if u not in series_map]
    if missing:
        raise MissingSeries(f"no case series for units {missing[:5]}"
                            + (" ..." if len(missing) > 5 else ""))
    windows = {series_map[u].n_days for u in units}
    if len(windows) > 1:
        raise InconsistentWindow(f"series lengths differ: {sorted(windows)}")
    starts = {series_map[u].dates[0] for u in units}
    if len(starts) > 1:
        raise InconsistentWindow("series start on different dates")
    ir = [compute_ir(series_map[u]) for u in units]
    return TargetVector(units=units, ir=ir, n_days=windows.pop())


def write_target_csv(target: TargetVector, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["unit", "ir"])
        for unit, value in zip(target.units, target.ir):
            writer.writerow([unit, repr(float(value))])
