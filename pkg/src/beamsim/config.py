"""Scenario configuration: parsing, validation, canonical serialization.

Config files are flat UTF-8 ``key = value`` lines with ``#`` comments and
dotted keys for nesting. Every key is optional; unspecified keys take the
default urban scenario (25 vehicles, two roadside units 1000 m apart,
300 m radio range, 80-120 km/h traffic against a 100 km/h threshold,
500 s horizon). Speeds are configured in km/h and converted to m/s at
load time; everything else is SI already.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

from .geometry import Position, kmh_to_mps
from .protocol import BEAM, MYBEAM, TimerSet


class ConfigError(ValueError):
    """Named validation failure while reading a scenario file."""


@dataclass(frozen=True)
class InjectionSpec:
    """One scripted kinematic perturbation: vehicle:at:kind:magnitude.

    ``vehicle`` may be a concrete id or ``auto-mg``, which resolves at
    injection time to the lowest-id vehicle currently registered with an
    RSU (so the perturbation is always observable by an authority).
    """

    vehicle: str
    at: float
    kind: str  # "speed-spike" | "yaw-spike"
    magnitude: float


@dataclass
class ScenarioConfig:
    protocol: str = MYBEAM
    seed: int = 0
    horizon: float = 500.0
    area_width: float = 2850.46
    area_height: float = 2000.04
    rsu_positions: list[Position] = field(
        default_factory=lambda: [Position(200.0, 200.0), Position(1200.0, 200.0)]
    )
    range_c: float = 300.0
    vehicle_count: int = 25
    speed_min_kmh: float = 80.0
    speed_max_kmh: float = 120.0
    threshold_speed_kmh: float = 100.0
    delta_deg: float = 18.0
    max_attempts: int = 3
    join_probability: float = 1.0
    emergency_on_decrease: bool = False
    timers: TimerSet = field(default_factory=TimerSet)
    base_latency: float = 0.002
    jitter: float = 0.001
    loss_probability: float = 0.0
    mobility_mode: str = "synthetic"
    trace_path: str = ""
    lane_offsets: list[float] = field(default_factory=lambda: [200.0])
    emergencies: list[InjectionSpec] = field(default_factory=list)

    @property
    def speed_min_mps(self) -> float:
        return kmh_to_mps(self.speed_min_kmh)

    @property
    def speed_max_mps(self) -> float:
        return kmh_to_mps(self.speed_max_kmh)

    @property
    def s_th_mps(self) -> float:
        return kmh_to_mps(self.threshold_speed_kmh)

    def validate(self):
        if self.protocol not in (BEAM, MYBEAM):
            raise ConfigError(f"protocol must be '{BEAM}' or '{MYBEAM}', got {self.protocol!r}")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if self.horizon < 0:
            raise ConfigError("horizon must be non-negative")
        if self.vehicle_count < 1:
            raise ConfigError("vehicle_count must be at least 1")
        if self.range_c <= 0:
            raise ConfigError("range_C must be positive")
        if self.area_width <= 0 or self.area_height <= 0:
            raise ConfigError("area dimensions must be positive")
        if self.speed_min_kmh > self.speed_max_kmh:
            raise ConfigError("speed_range.min_kmh must not exceed speed_range.max_kmh")
        if self.speed_min_kmh < 0:
            raise ConfigError("speeds must be non-negative")
        if not self.rsu_positions:
            raise ConfigError("at least one RSU position is required")
        for pos in self.rsu_positions:
            if not (0 <= pos.x <= self.area_width and 0 <= pos.y <= self.area_height):
                raise ConfigError(f"RSU at ({pos.x}, {pos.y}) lies outside the area")
        if not (0.0 <= self.join_probability <= 1.0):
            raise ConfigError("join_probability must be within [0, 1]")
        if not (0.0 <= self.loss_probability <= 1.0):
            raise ConfigError("channel.loss_probability must be within [0, 1]")
        if self.base_latency < 0 or self.jitter < 0:
            raise ConfigError("channel latency parameters must be non-negative")
        if self.max_attempts < 0:
            raise ConfigError("max_attempts must be non-negative")
        if self.delta_deg < 0 or self.delta_deg > 180:
            raise ConfigError("delta_deg must be within [0, 180]")
        if self.mobility_mode not in ("synthetic", "trace"):
            raise ConfigError("mobility.mode must be 'synthetic' or 'trace'")
        if self.mobility_mode == "trace" and not self.trace_path:
            raise ConfigError("mobility.trace_path required in trace mode")
        if not self.lane_offsets:
            raise ConfigError("mobility.lane_offsets must list at least one lane")
        for y in self.lane_offsets:
            if not (0 <= y <= self.area_height):
                raise ConfigError(f"lane offset {y} lies outside the area")
        try:
            self.timers.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        for spec in self.emergencies:
            if spec.kind not in ("speed-spike", "yaw-spike"):
                raise ConfigError(f"unknown emergency kind {spec.kind!r}")
            if spec.at < 0:
                raise ConfigError("emergency injection time must be non-negative")

    def digest(self) -> str:
        """Content hash of the effective scenario; key order never matters."""
        return hashlib.sha256(serialize_config(self).encode("utf-8")).hexdigest()[:16]


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_config(cfg: ScenarioConfig) -> str:
    """Canonical flat form: sorted keys, value reprs that round-trip."""
    items = {
        "protocol": cfg.protocol,
        "seed": cfg.seed,
        "horizon": cfg.horizon,
        "area.width": cfg.area_width,
        "area.height": cfg.area_height,
        "rsu_positions": "; ".join(f"{p.x!r},{p.y!r}" for p in cfg.rsu_positions),
        "range_C": cfg.range_c,
        "vehicle_count": cfg.vehicle_count,
        "speed_range.min_kmh": cfg.speed_min_kmh,
        "speed_range.max_kmh": cfg.speed_max_kmh,
        "threshold_speed_kmh": cfg.threshold_speed_kmh,
        "delta_deg": cfg.delta_deg,
        "max_attempts": cfg.max_attempts,
        "join_probability": cfg.join_probability,
        "emergency_on_decrease": cfg.emergency_on_decrease,
        "timers.periodic": cfg.timers.periodic,
        "timers.status": cfg.timers.status,
        "timers.life": cfg.timers.life,
        "timers.ack": cfg.timers.ack,
        "channel.base_latency": cfg.base_latency,
        "channel.jitter": cfg.jitter,
        "channel.loss_probability": cfg.loss_probability,
        "mobility.mode": cfg.mobility_mode,
        "mobility.trace_path": cfg.trace_path,
        "mobility.lane_offsets": ", ".join(repr(y) for y in cfg.lane_offsets),
        "emergencies": "; ".join(
            f"{s.vehicle}:{s.at!r}:{s.kind}:{s.magnitude!r}" for s in cfg.emergencies
        ),
    }
    return "\n".join(f"{k} = {_fmt(v)}" for k, v in sorted(items.items())) + "\n"


def _parse_positions(raw: str, key: str) -> list[Position]:
    positions = []
    for part in raw.split(";"):
        part = part.strip()
        if not part:
            continue
        coords = part.split(",")
        if len(coords) != 2:
            raise ConfigError(f"{key}: expected 'x,y' pairs separated by ';', got {part!r}")
        try:
            positions.append(Position(float(coords[0]), float(coords[1])))
        except ValueError:
            raise ConfigError(f"{key}: non-numeric coordinate in {part!r}") from None
    return positions


def _parse_emergencies(raw: str) -> list[InjectionSpec]:
    specs = []
    for part in raw.split(";"):
        part = part.strip()
        if not part:
            continue
        fields = part.split(":")
        if len(fields) != 4:
            raise ConfigError(
                f"emergencies: expected vehicle:at:kind:magnitude, got {part!r}"
            )
        vehicle, at_s, kind, mag_s = (f.strip() for f in fields)
        try:
            specs.append(InjectionSpec(vehicle, float(at_s), kind, float(mag_s)))
        except ValueError:
            raise ConfigError(f"emergencies: non-numeric field in {part!r}") from None
    return specs


def _parse_bool(raw: str, key: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {raw!r}")


def _parse_float(raw: str, key: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {raw!r}") from None


def _parse_int(raw: str, key: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {raw!r}") from None


def parse_config(source: str) -> ScenarioConfig:
    """Parse config text (not a path); unknown keys are hard errors."""
    cfg = ScenarioConfig()
    seen = set()
    for line_no, raw in enumerate(source.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {line_no}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key in seen:
            raise ConfigError(f"line {line_no}: duplicate key {key!r}")
        seen.add(key)
        _apply_key(cfg, key, value)
    cfg.validate()
    return cfg


def load_config(path: str) -> ScenarioConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def _apply_key(cfg: ScenarioConfig, key: str, value: str):
    if key == "protocol":
        cfg.protocol = value
    elif key == "seed":
        cfg.seed = _parse_int(value, key)
    elif key == "horizon":
        cfg.horizon = _parse_float(value, key)
    elif key == "area.width":
        cfg.area_width = _parse_float(value, key)
    elif key == "area.height":
        cfg.area_height = _parse_float(value, key)
    elif key == "rsu_positions":
        cfg.rsu_positions = _parse_positions(value, key)
    elif key == "range_C":
        cfg.range_c = _parse_float(value, key)
    elif key == "vehicle_count":
        cfg.vehicle_count = _parse_int(value, key)
    elif key == "speed_range.min_kmh":
        cfg.speed_min_kmh = _parse_float(value, key)
    elif key == "speed_range.max_kmh":
        cfg.speed_max_kmh = _parse_float(value, key)
    elif key == "threshold_speed_kmh":
        cfg.threshold_speed_kmh = _parse_float(value, key)
    elif key == "delta_deg":
        cfg.delta_deg = _parse_float(value, key)
    elif key == "max_attempts":
        cfg.max_attempts = _parse_int(value, key)
    elif key == "join_probability":
        cfg.join_probability = _parse_float(value, key)
    elif key == "emergency_on_decrease":
        cfg.emergency_on_decrease = _parse_bool(value, key)
    elif key == "timers.periodic":
        cfg.timers.periodic = _parse_float(value, key)
    elif key == "timers.status":
        cfg.timers.status = _parse_float(value, key)
    elif key == "timers.life":
        cfg.timers.life = _parse_float(value, key)
    elif key == "timers.ack":
        cfg.timers.ack = _parse_float(value, key)
    elif key == "channel.base_latency":
        cfg.base_latency = _parse_float(value, key)
    elif key == "channel.jitter":
        cfg.jitter = _parse_float(value, key)
    elif key == "channel.loss_probability":
        cfg.loss_probability = _parse_float(value, key)
    elif key == "mobility.mode":
        cfg.mobility_mode = value
    elif key == "mobility.trace_path":
        cfg.trace_path = value
    elif key == "mobility.lane_offsets":
        cfg.lane_offsets = [
            _parse_float(part.strip(), key) for part in value.split(",") if part.strip()
        ]
    elif key == "emergencies":
        cfg.emergencies = _parse_emergencies(value)
    else:
        raise ConfigError(f"unknown key {key!r}")
