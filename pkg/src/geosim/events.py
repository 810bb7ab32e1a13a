"""Timestamped simulation events and the CSV event-log format."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterable, TextIO

KINDS = (
    "run_start",
    "tx_arrival",
    "round_start",
    "phase_start",
    "msg_delivery",
    "vote",
    "qc",
    "commit",
    "phase_timeout",
    "report_emit",
)
LOG_COLUMNS = ("time", "seq", "kind", "validator", "round", "phase", "detail")


@dataclass(frozen=True)
class SimEvent:
    time: float
    seq: int
    kind: str
    validator: int = -1
    round: int = -1
    phase: int = -1
    detail: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}")

    def fields(self) -> dict[str, str]:
        out = {}
        for part in self.detail.split(";"):
            if part:
                k, _, v = part.partition("=")
                out[k] = v
        return out


def encode_detail(**items) -> str:
    return ";".join(f"{k}={v!r}" if isinstance(v, float) else f"{k}={v}" for k, v in items.items())


def write_event_log(events: Iterable[SimEvent], out: TextIO) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(LOG_COLUMNS)
    for e in events:
        w.writerow((repr(float(e.time)), e.seq, e.kind, e.validator, e.round, e.phase, e.detail))


def read_event_log(src: TextIO | str) -> list[SimEvent]:
    if isinstance(src, str):
        src = io.StringIO(src)
    r = csv.reader(src)
    header = next(r, None)
    if header is None or tuple(header) != LOG_COLUMNS:
        raise ValueError("event log header does not match the expected columns")
    return [
        SimEvent(float(t), int(seq), kind, int(v), int(rnd), int(ph), detail)
        for t, seq, kind, v, rnd, ph, detail in r
    ]


def event_log_text(events: Iterable[SimEvent]) -> str:
    buf = io.StringIO()
    write_event_log(events, buf)
    return buf.getvalue()
