"""Vehicle mobility: trace ingestion and the synthetic lane generator.

A mobility model answers one question: where is vehicle X at time t, and
how fast/which way is it going. Two backings exist:

* ``trace`` -- a CSV of timestamped samples; positions are linearly
  interpolated between bracketing samples, speed and heading are taken
  from the earlier sample.
* ``synthetic`` -- vehicles placed evenly along one or more lanes, each
  with a constant speed drawn once from a seeded stream, travelling in
  +x and wrapping at the right edge of the area.

Trace CSV format (UTF-8, LF endings, no thousands separators)::

    time_s,vehicle_id,x_m,y_m,speed_mps,heading_deg
    0.0,v01,200,200,25,0
"""

from __future__ import annotations

import io
import re
from dataclasses import dataclass, field
from typing import IO, Iterable, Union

from .geometry import Position, displacement_speed

TRACE_HEADER = "time_s,vehicle_id,x_m,y_m,speed_mps,heading_deg"

_ID_PATTERN = re.compile(r"^[A-Za-z0-9_\-]+$")


class TraceFormatError(ValueError):
    """Malformed trace input; carries the offending line number."""

    def __init__(self, message: str, line_no: int | None = None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


class TraceOrderingError(ValueError):
    """Per-vehicle sample times were not strictly increasing."""


class UnknownVehicleError(KeyError):
    """The requested vehicle does not exist in the model."""


class ExtrapolationError(ValueError):
    """Requested time lies outside a trace vehicle's sample span."""


class InvalidWindowError(ValueError):
    """The sampling window extends before the start of history."""


@dataclass(frozen=True)
class TraceSample:
    time: float
    vehicle_id: str
    position: Position
    speed: float
    heading: float


@dataclass(frozen=True)
class VehicleSnap:
    """One vehicle's kinematic state at a single instant."""

    vehicle_id: str
    position: Position
    speed: float
    heading: float


@dataclass
class MobilityModel:
    """Immutable once built; concurrent reads are fine."""

    mode: str  # "trace" | "synthetic"
    # trace mode: per-vehicle samples sorted by time
    samples: dict[str, list[TraceSample]] = field(default_factory=dict)
    # synthetic mode: closed-form parameters
    area_width: float = 0.0
    start_x: dict[str, float] = field(default_factory=dict)
    lane_y: dict[str, float] = field(default_factory=dict)
    const_speed: dict[str, float] = field(default_factory=dict)

    def vehicle_ids(self) -> list[str]:
        if self.mode == "trace":
            return sorted(self.samples)
        return sorted(self.start_x)

    def time_span(self, vehicle_id: str) -> tuple[float, float]:
        """Valid [first, last] query window; synthetic vehicles span [0, inf)."""
        if self.mode == "synthetic":
            return (0.0, float("inf"))
        rows = self._rows(vehicle_id)
        return (rows[0].time, rows[-1].time)

    def _rows(self, vehicle_id: str) -> list[TraceSample]:
        try:
            return self.samples[vehicle_id]
        except KeyError:
            raise UnknownVehicleError(vehicle_id) from None


def _read_text(source: Union[bytes, IO[bytes], IO[str], str]) -> str:
    if isinstance(source, str):  # a filesystem path
        with open(source, "rb") as fh:
            return fh.read().decode("utf-8")
    if isinstance(source, bytes):
        return source.decode("utf-8")
    data = source.read()
    return data.decode("utf-8") if isinstance(data, bytes) else data


def load_trace(source: Union[bytes, IO[bytes], IO[str], str]) -> MobilityModel:
    """Parse a trace CSV into a trace-backed model.

    Accepts raw bytes, a binary or text stream, or a filesystem path.
    """
    text = _read_text(source)
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0].strip() != TRACE_HEADER:
        raise TraceFormatError(f"first line must be exactly '{TRACE_HEADER}'", 1)

    samples: dict[str, list[TraceSample]] = {}
    for idx, raw in enumerate(lines[1:], start=2):
        if raw.strip() == "":
            raise TraceFormatError("blank line", idx)
        parts = raw.split(",")
        if len(parts) != 6:
            raise TraceFormatError(f"expected 6 fields, got {len(parts)}", idx)
        t_s, vid, x_s, y_s, spd_s, hdg_s = (p.strip() for p in parts)
        if not _ID_PATTERN.match(vid):
            raise TraceFormatError(f"invalid vehicle_id {vid!r}", idx)
        try:
            t = float(t_s)
            x = float(x_s)
            y = float(y_s)
            spd = float(spd_s)
            hdg = float(hdg_s)
        except ValueError as exc:
            raise TraceFormatError(str(exc), idx) from None
        if t < 0:
            raise TraceFormatError(f"negative time {t}", idx)
        if spd < 0:
            raise TraceFormatError(f"negative speed {spd}", idx)
        if not (0.0 <= hdg < 360.0):
            raise TraceFormatError(f"heading {hdg} outside [0, 360)", idx)
        rows = samples.setdefault(vid, [])
        if rows and t <= rows[-1].time:
            raise TraceOrderingError(
                f"line {idx}: vehicle {vid} time {t} not after {rows[-1].time}"
            )
        rows.append(TraceSample(t, vid, Position(x, y), spd, hdg))

    if not samples:
        raise TraceFormatError("no samples", 2)
    return MobilityModel(mode="trace", samples=samples)


def dump_trace(model: MobilityModel) -> bytes:
    """Serialize a trace-backed model back to CSV bytes.

    Round-trips exactly: load_trace(dump_trace(m)) has the same samples.
    """
    if model.mode != "trace":
        raise ValueError("only trace-backed models can be serialized")
    out = io.StringIO()
    out.write(TRACE_HEADER + "\n")
    for vid in model.vehicle_ids():
        for s in model.samples[vid]:
            out.write(
                f"{s.time!r},{s.vehicle_id},{s.position.x!r},{s.position.y!r},"
                f"{s.speed!r},{s.heading!r}\n"
            )
    return out.getvalue().encode("utf-8")


def build_synthetic(
    vehicle_count: int,
    area_width: float,
    lane_offsets: list[float],
    speed_min_mps: float,
    speed_max_mps: float,
    rng,
    id_prefix: str = "v",
) -> MobilityModel:
    """Seeded constant-speed lane model.

    Vehicles are assigned to lanes round-robin and spaced evenly along
    each lane. Per-vehicle speeds are drawn uniformly (in vehicle index
    order) from [speed_min_mps, speed_max_mps], so two models built from
    the same seed agree bit-for-bit.
    """
    if vehicle_count < 1:
        raise ValueError("need at least one vehicle")
    if not lane_offsets:
        raise ValueError("need at least one lane offset")
    width = len(str(vehicle_count))
    ids = [f"{id_prefix}{i + 1:0{width}d}" for i in range(vehicle_count)]
    lanes = {vid: lane_offsets[i % len(lane_offsets)] for i, vid in enumerate(ids)}
    per_lane: dict[float, list[str]] = {}
    for vid in ids:
        per_lane.setdefault(lanes[vid], []).append(vid)
    start_x = {}
    for members in per_lane.values():
        for j, vid in enumerate(members):
            start_x[vid] = j * area_width / len(members)
    speeds = {vid: rng.uniform(speed_min_mps, speed_max_mps) for vid in ids}
    return MobilityModel(
        mode="synthetic",
        area_width=area_width,
        start_x=start_x,
        lane_y=lanes,
        const_speed=speeds,
    )


def state_at(model: MobilityModel, vehicle_id: str, t: float) -> VehicleSnap:
    """Kinematic state of one vehicle at time t.

    Trace mode interpolates position linearly between bracketing samples;
    speed and heading come from the earlier sample. Synthetic mode is
    closed-form. Times outside a trace vehicle's span raise
    ExtrapolationError.
    """
    if model.mode == "synthetic":
        if vehicle_id not in model.start_x:
            raise UnknownVehicleError(vehicle_id)
        if t < 0:
            raise ExtrapolationError(f"t={t} before synthetic start")
        x = (model.start_x[vehicle_id] + model.const_speed[vehicle_id] * t) % model.area_width
        return VehicleSnap(
            vehicle_id,
            Position(x, model.lane_y[vehicle_id]),
            model.const_speed[vehicle_id],
            0.0,
        )

    rows = model._rows(vehicle_id)
    if t < rows[0].time or t > rows[-1].time:
        raise ExtrapolationError(
            f"t={t} outside [{rows[0].time}, {rows[-1].time}] for {vehicle_id}"
        )
    # rightmost sample with time <= t
    lo, hi = 0, len(rows) - 1
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if rows[mid].time <= t:
            lo = mid
        else:
            hi = mid - 1
    s0 = rows[lo]
    if s0.time == t or lo == len(rows) - 1:
        return VehicleSnap(vehicle_id, s0.position, s0.speed, s0.heading)
    s1 = rows[lo + 1]
    frac = (t - s0.time) / (s1.time - s0.time)
    pos = Position(
        s0.position.x + frac * (s1.position.x - s0.position.x),
        s0.position.y + frac * (s1.position.y - s0.position.y),
    )
    return VehicleSnap(vehicle_id, pos, s0.speed, s0.heading)


def sampling_window_speed(
    model: MobilityModel, vehicle_id: str, t: float, window: float = 30.0
) -> float:
    """Displacement speed over the trailing window ending at t."""
    if t < window:
        raise InvalidWindowError(f"t={t} leaves no room for a {window}s window")
    earlier = state_at(model, vehicle_id, t - window)
    later = state_at(model, vehicle_id, t)
    return displacement_speed(earlier.position, later.position, t - window, t)


def snapshot_all(model: MobilityModel, t: float) -> dict[str, VehicleSnap]:
    """States of every vehicle at time t, keyed by id."""
    return {vid: state_at(model, vid, t) for vid in model.vehicle_ids()}
