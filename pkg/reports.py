"""Check reports and the CSV/JSON emitters every command writes through."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Sequence

import numpy as np

logger = logging.getLogger(__name__)

PASS, FAIL, INCONCLUSIVE = "pass", "fail", "inconclusive"
MARKS = {PASS: "✓", FAIL: "✗", INCONCLUSIVE: "?"}


@dataclass
class CheckReport:
    name: str
    status: str
    details: dict = field(default_factory=dict)
    witnesses: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.status == PASS

    @property
    def failed(self) -> bool:
        return self.status == FAIL

    def line(self) -> str:
        extra = f" ({len(self.witnesses)} witnesses)" if self.witnesses else ""
        return f"{MARKS[self.status]} {self.name}: {self.status}{extra}"

    def to_dict(self) -> dict:
        return {"name": self.name, "status": self.status, "details": self.details,
                "witnesses": self.witnesses}


def status_of(ok: bool) -> str:
    return PASS if ok else FAIL


def combine(name: str, parts: Sequence[CheckReport]) -> CheckReport:
    """Fail if any part fails; inconclusive only if every part is."""
    if any(r.failed for r in parts):
        status = FAIL
    elif parts and all(r.status == INCONCLUSIVE for r in parts):
        status = INCONCLUSIVE
    else:
        status = PASS
    return CheckReport(name, status, {"parts": [r.to_dict() for r in parts]},
                       [w for r in parts for w in r.witnesses])


def _plain(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def to_json(doc) -> str:
    return json.dumps(doc, indent=2, default=_plain, allow_nan=True)


def write_json(path, doc) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(to_json(doc) + "\n", encoding="utf-8")
    logger.debug("wrote %s", path)
    return path


def write_csv(path, header: List[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_plain(v) if isinstance(v, (np.generic, np.ndarray)) else v for v in row])
    logger.debug("wrote %s", path)
    return path


def solution_rows(grid, v, g, actions):
    """Rows for the x, v, G, action table of a solve."""
    return zip(np.asarray(grid).tolist(), np.asarray(v).tolist(), np.asarray(g).tolist(),
               np.asarray(actions).tolist())


SOLUTION_HEADER = ["x", "v", "G", "action"]
SWEEP_HEADER = ["alpha", "s_alpha", "S_alpha", "r_alpha", "S_star_alpha", "m_alpha", "m_bar_alpha",
                "scaled_gain", "scaled_gain_bar", "h_alpha_at_s"]
OSCILLATION_HEADER = ["alpha", "f_alpha", "u0", "truncation_bound"]
