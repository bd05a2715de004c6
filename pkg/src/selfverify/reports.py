"""Detection reports as newline-delimited JSON records with a fixed field order."""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field

FIELD_ORDER = ("id", "predicted", "d_semantic", "d_activation", "thresholds", "verdict",
               "reason", "label", "truth", "attack", "fooled")
VERDICTS = ("natural", "adversarial", "suspicious")


@dataclass
class DetectionReport:
    id: str
    predicted: str
    verdict: str
    thresholds: dict = field(default_factory=dict)
    d_semantic: float | None = None
    d_activation: float | None = None
    reason: str | None = None
    label: str | None = None        # true label, when known
    truth: str | None = None        # "natural" | "adversarial", when known
    attack: str | None = None       # attack kind for adversarial items
    fooled: bool | None = None      # whether the attack changed the prediction as intended

    def __post_init__(self):
        if self.verdict not in VERDICTS:
            raise ValueError(f"unknown verdict {self.verdict!r}")

    def to_record(self):
        rec = {}
        for name in FIELD_ORDER:
            value = getattr(self, name)
            if value is None or (name == "thresholds" and not value):
                continue
            rec[name] = value
        return rec

    @property
    def flagged(self):
        return self.verdict != "natural"


def dumps_report(report: DetectionReport):
    return json.dumps(report.to_record(), separators=(",", ":"), ensure_ascii=False)


def save_report(report: DetectionReport, stream):
    """Write one record line; returns the number of bytes written (UTF-8)."""
    line = dumps_report(report) + "\n"
    data = line.encode("utf-8")
    if isinstance(stream, io.TextIOBase):
        stream.write(line)
    else:
        stream.write(data)
    return len(data)


def parse_report(line):
    rec = json.loads(line)
    return DetectionReport(**rec)


def read_reports(path):
    with open(path, encoding="utf-8") as fh:
        return [parse_report(line) for line in fh if line.strip()]


def write_reports(reports, path):
    with open(path, "wb") as fh:
        return sum(save_report(r, fh) for r in reports)
