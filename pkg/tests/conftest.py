"""Shared scenario builders for integration-level tests."""

from beamsim.config import ScenarioConfig
from beamsim.mobility import TRACE_HEADER
from beamsim.simcore import Simulation


def stationary_trace(positions: dict, horizon: float = 600.0) -> bytes:
    """Trace of parked vehicles; direction-neutral, geometry fully pinned."""
    lines = [TRACE_HEADER]
    for vid in sorted(positions):
        x, y = positions[vid]
        lines.append(f"0.0,{vid},{x},{y},0,0")
        lines.append(f"{horizon},{vid},{x},{y},0,0")
    return ("\n".join(lines) + "\n").encode()


def trace_config(tmp_path, positions, *, name="trace.csv", **overrides) -> ScenarioConfig:
    horizon = overrides.get("horizon", 30.0)
    path = tmp_path / name
    path.write_bytes(stationary_trace(positions, horizon=max(horizon, 600.0)))
    cfg = ScenarioConfig()
    cfg.mobility_mode = "trace"
    cfg.trace_path = str(path)
    cfg.horizon = horizon
    for key, value in overrides.items():
        setattr(cfg, key, value)
    return cfg


def run_sim(cfg: ScenarioConfig):
    sim = Simulation(cfg)
    log = sim.run()
    return sim, log


def records_of(log, kind):
    out = []
    for line in log.lines():
        parts = line.split("|", 3)
        if parts[1] == kind:
            detail = {}
            if parts[3]:
                for token in parts[3].split(" "):
                    k, _, v = token.partition("=")
                    detail[k] = v
            out.append((float(parts[0]), parts[2], detail))
    return out


__all__ = [
    "stationary_trace",
    "trace_config",
    "run_sim",
    "records_of",
]
