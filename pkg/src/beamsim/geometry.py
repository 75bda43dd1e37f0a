"""Planar geometry and kinematics primitives used throughout the simulator.

All quantities are SI: meters, seconds, meters per second. Angles are
degrees. Positions are plain Cartesian coordinates on a flat plane.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence


class InvalidIntervalError(ValueError):
    """A time interval was zero or negative."""


class EmptyPopulationError(ValueError):
    """A mean was requested over an empty sample set."""


class UndefinedHeadingError(ValueError):
    """A direction was requested from a zero-magnitude vector."""


@dataclass(frozen=True)
class Position:
    x: float
    y: float


@dataclass(frozen=True)
class Velocity:
    """Displacement vector over some sampling interval."""

    dx: float
    dy: float

    def magnitude(self) -> float:
        return math.sqrt(self.dx * self.dx + self.dy * self.dy)


#: Two velocity vectors closer than this many degrees count as parallel.
DEFAULT_PARALLEL_LIMIT_DEG = 18.0

# cos/arccos round-trips can overshoot an exact boundary angle by a few
# 1e-14 deg; this slack keeps boundary comparisons stable without letting
# any physically distinct heading through.
_ANGLE_NOISE_DEG = 1e-9


def euclidean_distance(a: Position, b: Position) -> float:
    """Straight-line distance between two points, in meters."""
    return math.sqrt((b.x - a.x) ** 2 + (b.y - a.y) ** 2)


def displacement_speed(p1: Position, p2: Position, t1: float, t2: float) -> float:
    """Speed implied by moving from p1 at t1 to p2 at t2.

    Raises InvalidIntervalError unless t2 > t1.
    """
    if t2 <= t1:
        raise InvalidIntervalError(f"need t2 > t1, got t1={t1} t2={t2}")
    return euclidean_distance(p1, p2) / (t2 - t1)


def average_speed(speeds: Sequence[float]) -> float:
    """Arithmetic mean of a non-empty list of speeds."""
    if not speeds:
        raise EmptyPopulationError("average speed of zero vehicles is undefined")
    return sum(speeds) / len(speeds)


def heading_angle_between(u: Velocity, v: Velocity) -> float:
    """Angle between two velocity vectors, in degrees within [0, 180].

    The cosine argument is clamped to [-1, 1] to absorb floating-point
    overshoot near parallel vectors. Zero-magnitude input raises
    UndefinedHeadingError.
    """
    mu = u.magnitude()
    mv = v.magnitude()
    if mu == 0.0 or mv == 0.0:
        raise UndefinedHeadingError("zero-magnitude velocity has no heading")
    cos_arg = (u.dx * v.dx + u.dy * v.dy) / (mu * mv)
    cos_arg = max(-1.0, min(1.0, cos_arg))
    return math.degrees(math.acos(cos_arg))


def same_direction(u: Velocity, v: Velocity, delta: float = DEFAULT_PARALLEL_LIMIT_DEG) -> bool:
    """True when the angle between u and v does not exceed delta degrees."""
    return heading_angle_between(u, v) <= delta + _ANGLE_NOISE_DEG


def heading_to_velocity(heading_deg: float, speed: float = 1.0) -> Velocity:
    """Unit-speed-scaled velocity for a heading (0 deg = +x, CCW positive)."""
    rad = math.radians(heading_deg)
    return Velocity(speed * math.cos(rad), speed * math.sin(rad))


def angular_difference(h1_deg: float, h2_deg: float) -> float:
    """Smallest absolute difference between two headings, in [0, 180]."""
    d = abs(h1_deg - h2_deg) % 360.0
    return 360.0 - d if d > 180.0 else d


def kmh_to_mps(kmh: float) -> float:
    """Convert km/h to m/s."""
    return kmh * (1000.0 / 3600.0)


def mps_to_kmh(mps: float) -> float:
    """Convert m/s to km/h."""
    return mps * 3.6
