"""Run orchestration and the command-line interface.

Verbs::

    beamsim simulate --config scenario.cfg [--protocol beam|mybeam] [--seed N] [--out DIR]
    beamsim compare  --config scenario.cfg --seeds 1,2,3 [--out DIR]
    beamsim validate-trace trace.csv

``simulate`` writes ``events_<protocol>_seed<N>.log``,
``metrics_<protocol>_seed<N>.csv`` and ``report_<protocol>_seed<N>.json``
under the output directory. ``compare`` runs both protocols over every
seed with identical mobility and injections and writes ``comparison.csv``
plus per-run artifacts under ``runs/``. Exit status is nonzero exactly
when validation or I/O fails.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from . import metrics, mobility
from .config import ConfigError, ScenarioConfig, load_config
from .eventlog import EventLog
from .protocol import BEAM, MYBEAM
from .simcore import Simulation

METRICS_WINDOW = 1.0


@dataclasses.dataclass
class RunReport:
    config_digest: str
    protocol: str
    seed: int
    mean_throughput_kbps: float
    final_pdr_pct: float | None
    mean_delay_ms: float | None
    final_coverage_pct: float | None
    event_log_path: str
    metrics_path: str

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n"


def run_scenario(cfg: ScenarioConfig, out_dir: str) -> RunReport:
    """Execute one run and write its event log, metrics CSV and report."""
    os.makedirs(out_dir, exist_ok=True)
    sim = Simulation(cfg)
    log = sim.run()
    suffix = f"{cfg.protocol}_seed{cfg.seed}"
    log_path = os.path.join(out_dir, f"events_{suffix}.log")
    metrics_path = os.path.join(out_dir, f"metrics_{suffix}.csv")
    log.write(log_path)

    population = sorted(sim.vehicles)
    ledger = metrics.ledger_from_lines(log.lines(), population=population)
    metrics.emit_series(
        ledger, METRICS_WINDOW, metrics_path, cfg.protocol, cfg.horizon, population
    )

    last_emergency = None
    for msg_id in ledger.emergencies:
        last_emergency = msg_id
    coverage = (
        metrics.emergency_coverage(ledger, last_emergency, population, cfg.horizon)
        if last_emergency
        else None
    )
    report = RunReport(
        config_digest=cfg.digest(),
        protocol=cfg.protocol,
        seed=cfg.seed,
        mean_throughput_kbps=(
            metrics.throughput(ledger, 0.0, cfg.horizon) if cfg.horizon > 0 else 0.0
        ),
        final_pdr_pct=metrics.pdr(ledger),
        mean_delay_ms=metrics.avg_e2e_delay(ledger),
        final_coverage_pct=coverage,
        event_log_path=log_path,
        metrics_path=metrics_path,
    )
    report_path = os.path.join(out_dir, f"report_{suffix}.json")
    with open(report_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(report.to_json())
    return report


def compare(cfg: ScenarioConfig, seeds: list[int], out_dir: str) -> str:
    """Run both protocols on every seed and emit a side-by-side CSV.

    Each (protocol, seed) run starts from the same configuration except
    for the protocol field, so mobility and injections are identical
    within a seed. The footer records per-seed final coverage deltas and
    asserts that cluster relaying never lowers coverage.
    """
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    finals: dict[tuple[str, int], float] = {}
    for seed in seeds:
        for protocol in (BEAM, MYBEAM):
            run_cfg = dataclasses.replace(
                cfg,
                protocol=protocol,
                seed=seed,
                timers=dataclasses.replace(cfg.timers),
                rsu_positions=list(cfg.rsu_positions),
                lane_offsets=list(cfg.lane_offsets),
                emergencies=list(cfg.emergencies),
            )
            run_dir = os.path.join(out_dir, "runs", f"{protocol}_seed{seed}")
            report = run_scenario(run_cfg, run_dir)
            finals[(protocol, seed)] = (
                report.final_coverage_pct if report.final_coverage_pct is not None else 0.0
            )
            with open(report.metrics_path, "r", encoding="utf-8") as fh:
                for line in fh.read().splitlines()[1:]:
                    t_s, proto, rest = line.split(",", 2)
                    rows.append((float(t_s), seed, proto, rest))

    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    path = os.path.join(out_dir, "comparison.csv")
    all_non_negative = True
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("t_s,seed,protocol,throughput_kbps,pdr_pct,avg_delay_ms,coverage_pct\n")
        for t_s, seed, proto, rest in rows:
            fh.write(f"{t_s:.3f},{seed},{proto},{rest}\n")
        for seed in seeds:
            beam_cov = finals[(BEAM, seed)]
            mybeam_cov = finals[(MYBEAM, seed)]
            delta = mybeam_cov - beam_cov
            all_non_negative = all_non_negative and delta >= 0
            fh.write(
                f"# coverage_delta seed={seed} beam={beam_cov:.6f} "
                f"mybeam={mybeam_cov:.6f} delta={delta:.6f}\n"
            )
        verdict = "PASS" if all_non_negative else "FAIL"
        fh.write(f"# assert mybeam_coverage>=beam_coverage per seed: {verdict}\n")
    return path


def _cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    if args.protocol:
        cfg.protocol = args.protocol
    if args.seed is not None:
        cfg.seed = args.seed
    cfg.validate()
    report = run_scenario(cfg, args.out)
    print(f"run digest    : {report.config_digest}")
    print(f"protocol/seed : {report.protocol} / {report.seed}")
    print(f"throughput    : {report.mean_throughput_kbps:.3f} kbps")
    pdr = "n/a" if report.final_pdr_pct is None else f"{report.final_pdr_pct:.2f} %"
    delay = "n/a" if report.mean_delay_ms is None else f"{report.mean_delay_ms:.3f} ms"
    cov = "n/a" if report.final_coverage_pct is None else f"{report.final_coverage_pct:.1f} %"
    print(f"pdr           : {pdr}")
    print(f"mean delay    : {delay}")
    print(f"coverage      : {cov}")
    print(f"event log     : {report.event_log_path}")
    print(f"metrics csv   : {report.metrics_path}")
    return 0


def _cmd_compare(args) -> int:
    cfg = load_config(args.config)
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    if not seeds:
        raise ConfigError("--seeds must list at least one seed")
    path = compare(cfg, seeds, args.out)
    print(f"comparison csv: {path}")
    return 0


def _cmd_validate_trace(args) -> int:
    model = mobility.load_trace(args.path)
    vehicles = model.vehicle_ids()
    spans = [model.time_span(v) for v in vehicles]
    t_lo = min(s[0] for s in spans)
    t_hi = max(s[1] for s in spans)
    n_samples = sum(len(model.samples[v]) for v in vehicles)
    print(f"trace ok: {len(vehicles)} vehicles, {n_samples} samples, time [{t_lo:g}, {t_hi:g}]")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="beamsim",
        description="Deterministic VANET emergency-dissemination simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="run one scenario")
    p_sim.add_argument("--config", required=True, help="scenario config file")
    p_sim.add_argument("--protocol", choices=[BEAM, MYBEAM], help="override the config protocol")
    p_sim.add_argument("--seed", type=int, help="override the config seed")
    p_sim.add_argument("--out", default="out", help="output directory")
    p_sim.set_defaults(func=_cmd_simulate)

    p_cmp = sub.add_parser("compare", help="run both protocols across seeds")
    p_cmp.add_argument("--config", required=True)
    p_cmp.add_argument("--seeds", required=True, help="comma-separated seed list")
    p_cmp.add_argument("--out", default="out", help="output directory")
    p_cmp.set_defaults(func=_cmd_compare)

    p_val = sub.add_parser("validate-trace", help="check a mobility trace file")
    p_val.add_argument("path")
    p_val.set_defaults(func=_cmd_validate_trace)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
