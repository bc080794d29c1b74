"""Structured warning records.

Warnings are emitted on the ``geofactors`` logger as single lines of the form
``WARN <code> unit=<id> detail=<text>`` and optionally appended to a caller
supplied list so that batch drivers can collect them for the run manifest.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

logger = logging.getLogger("geofactors")


@dataclass(frozen=True)
class WarningRecord:
    code: str
    detail: str
    unit: str | None = None

    def __str__(self) -> str:
        unit = self.unit if self.unit is not None else "-"
        return f"WARN {self.code} unit={unit} detail={self.detail}"


def warn(code: str, detail: str, unit: str | None = None,
         sink: list | None = None) -> WarningRecord:
    record = WarningRecord(code=code, detail=detail, unit=unit)
    logger.warning(str(record))
    if sink is not None:
        sink.append(record)
    return record
