"""Deterministic discrete-event simulation of emergency multicast in
urban vehicular networks: a baseline RSU-only protocol and a
cluster-relaying variant, evaluated over throughput, delivery ratio,
end-to-end delay and emergency coverage.
"""

from .config import InjectionSpec, ScenarioConfig, load_config, parse_config, serialize_config
from .geometry import Position, Velocity
from .metrics import MetricsLedger, ledger_from_lines
from .mobility import MobilityModel, build_synthetic, load_trace
from .protocol import BEAM, MYBEAM
from .simcore import Simulation

__all__ = [
    "BEAM",
    "MYBEAM",
    "InjectionSpec",
    "MetricsLedger",
    "MobilityModel",
    "Position",
    "ScenarioConfig",
    "Simulation",
    "Velocity",
    "build_synthetic",
    "ledger_from_lines",
    "load_config",
    "load_trace",
    "parse_config",
    "serialize_config",
]
