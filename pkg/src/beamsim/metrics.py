"""Evaluation metrics derived from a finished run's event log.

The ledger is built from per-recipient ``send`` records and matching
``delivery`` records, so a broadcast to five nodes counts as five sends.
Windows with nothing to measure yield ``None`` (emitted as empty CSV
fields), never a fabricated zero.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

from .eventlog import Record, parse_record

METRICS_HEADER = "t_s,protocol,throughput_kbps,pdr_pct,avg_delay_ms,coverage_pct"


class MetricsError(ValueError):
    """The requested quantity does not exist in this ledger."""


@dataclass(frozen=True)
class SendEntry:
    msg_id: str
    kind: str
    t_send: float
    size: int
    recipient: str


@dataclass(frozen=True)
class RecvEntry:
    msg_id: str
    recipient: str
    t_recv: float
    size: int


@dataclass(frozen=True)
class MetricsSample:
    t: float  # window end, seconds
    throughput_kbps: float
    pdr_pct: float | None
    avg_delay_ms: float | None
    coverage_pct: float | None


@dataclass
class MetricsLedger:
    sends: list[SendEntry] = field(default_factory=list)
    receives: list[RecvEntry] = field(default_factory=list)
    #: msg_id -> creation time of each emergency, in detection order
    emergencies: dict[str, float] = field(default_factory=dict)
    population: list[str] = field(default_factory=list)

    def matched_pairs(self) -> list[tuple[SendEntry, RecvEntry]]:
        """Chronologically pair each delivery with the earliest unmatched send.

        Retransmissions give one (msg_id, recipient) flow several sends;
        duplicate deliveries (a lost ack followed by a resend) give it
        several receives. Greedy first-fit keeps the accounting one-to-one.
        """
        sends_by_flow: dict[tuple[str, str], list[SendEntry]] = {}
        for s in self.sends:
            sends_by_flow.setdefault((s.msg_id, s.recipient), []).append(s)
        pairs = []
        cursor: dict[tuple[str, str], int] = {}
        for r in self.receives:
            flow = (r.msg_id, r.recipient)
            idx = cursor.get(flow, 0)
            candidates = sends_by_flow.get(flow, [])
            # sends are in time order; the first unmatched one is the match
            if idx < len(candidates) and candidates[idx].t_send <= r.t_recv:
                pairs.append((candidates[idx], r))
                cursor[flow] = idx + 1
        return pairs


def ledger_from_lines(lines, population=None) -> MetricsLedger:
    """Build the ledger from raw event-log lines (strings or Records)."""
    ledger = MetricsLedger(population=list(population or []))
    for item in lines:
        rec: Record = item if isinstance(item, Record) else parse_record(item)
        if rec.kind == "send":
            ledger.sends.append(
                SendEntry(
                    msg_id=rec.detail["msg"],
                    kind=rec.detail["kind"],
                    t_send=rec.t,
                    size=int(rec.detail["size"]),
                    recipient=rec.detail["to"],
                )
            )
        elif rec.kind == "delivery":
            ledger.receives.append(
                RecvEntry(
                    msg_id=rec.detail["msg"],
                    recipient=rec.node,
                    t_recv=rec.t,
                    size=int(rec.detail["size"]),
                )
            )
        elif rec.kind == "detect":
            ledger.emergencies.setdefault(rec.detail["msg"], rec.t)
    return ledger


def throughput(ledger: MetricsLedger, start: float, stop: float) -> float:
    """Delivered payload over the window, in kilobits per second."""
    if stop <= start:
        raise MetricsError(f"window [{start}, {stop}) is empty or inverted")
    total_bytes = sum(r.size for r in ledger.receives if start <= r.t_recv < stop)
    return total_bytes * 8.0 / (stop - start) / 1000.0


def pdr(ledger: MetricsLedger, window: tuple[float, float] | None = None) -> float | None:
    """Percent of sends (by send time) that were eventually delivered.

    None when the window contains no sends: a ratio over nothing is not a
    measurement.
    """
    start, stop = window if window else (float("-inf"), float("inf"))
    cohort = [s for s in ledger.sends if start <= s.t_send < stop]
    if not cohort:
        return None
    matched_sends = {id(s) for s, _ in ledger.matched_pairs()}
    received = sum(1 for s in cohort if id(s) in matched_sends)
    return 100.0 * received / len(cohort)


def avg_e2e_delay(
    ledger: MetricsLedger, window: tuple[float, float] | None = None
) -> float | None:
    """Mean sender-to-receiver latency of deliveries in the window, in ms."""
    start, stop = window if window else (float("-inf"), float("inf"))
    delays = [
        (r.t_recv - s.t_send) * 1000.0
        for s, r in ledger.matched_pairs()
        if start <= r.t_recv < stop
    ]
    if not delays:
        return None
    return sum(delays) / len(delays)


def emergency_coverage(
    ledger: MetricsLedger, e_msg_id: str, population, t: float
) -> float:
    """Percent of the vehicle population that has the message by time t."""
    if e_msg_id not in ledger.emergencies and not any(
        s.msg_id == e_msg_id for s in ledger.sends
    ):
        raise MetricsError(f"unknown emergency message {e_msg_id!r}")
    population = list(population)
    if not population:
        raise MetricsError("empty population")
    pop = set(population)
    reached = {
        r.recipient
        for r in ledger.receives
        if r.msg_id == e_msg_id and r.t_recv <= t and r.recipient in pop
    }
    return 100.0 * len(reached) / len(population)


def _active_emergency(ledger: MetricsLedger, t: float) -> str | None:
    active = None
    for msg_id, created in ledger.emergencies.items():
        if created <= t and (active is None or created > ledger.emergencies[active]):
            active = msg_id
    return active


def series(
    ledger: MetricsLedger,
    window_width: float,
    horizon: float,
    population,
) -> list[MetricsSample]:
    """One sample per window tiling [0, horizon)."""
    if window_width <= 0:
        raise MetricsError("window width must be positive")
    samples = []
    start = 0.0
    index = 0
    population = list(population)
    while start < horizon:
        stop = min((index + 1) * window_width, horizon)
        active = _active_emergency(ledger, stop)
        coverage = (
            emergency_coverage(ledger, active, population, stop)
            if active and population
            else None
        )
        samples.append(
            MetricsSample(
                t=stop,
                throughput_kbps=throughput(ledger, start, stop),
                pdr_pct=pdr(ledger, (start, stop)),
                avg_delay_ms=avg_e2e_delay(ledger, (start, stop)),
                coverage_pct=coverage,
            )
        )
        index += 1
        start = index * window_width
    return samples


def _cell(value) -> str:
    return "" if value is None else f"{value:.6f}"


def emit_series(
    ledger: MetricsLedger,
    window_width: float,
    out,
    protocol: str,
    horizon: float,
    population,
) -> list[MetricsSample]:
    """Write the windowed series as CSV; bit-stable across reruns."""
    samples = series(ledger, window_width, horizon, population)
    buffer = io.StringIO()
    buffer.write(METRICS_HEADER + "\n")
    for s in samples:
        buffer.write(
            f"{s.t:.3f},{protocol},{_cell(s.throughput_kbps)},{_cell(s.pdr_pct)},"
            f"{_cell(s.avg_delay_ms)},{_cell(s.coverage_pct)}\n"
        )
    text = buffer.getvalue()
    if hasattr(out, "write"):
        out.write(text)
    else:
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    return samples
