"""Deterministic discrete-event engine and the unit-disk radio channel.

The engine owns the clock, the event queue, the seeded random substreams,
the mobility snapshot, and all cluster bookkeeping that spans more than
one agent. Events are processed in (fire_at, insertion order); given the
same configuration and seed, two runs produce byte-identical logs.
"""

from __future__ import annotations

import heapq
import itertools
import random
from dataclasses import dataclass, field
from typing import Optional

from . import clustering, mobility, protocol
from .clustering import ClusterRecord, MaintenanceEvent
from .eventlog import EventLog
from .geometry import Position, euclidean_distance
from .mobility import MobilityModel, VehicleSnap
from .protocol import (
    BEAM,
    BROADCAST,
    EMERGENCY,
    MYBEAM,
    Message,
    RsuAgent,
    VehicleAgent,
)

EVENT_TIMER = "timer-maturity"
EVENT_DELIVERY = "message-delivery"
EVENT_REFRESH = "mobility-refresh"
EVENT_INJECTION = "emergency-injection"

#: Mobility snapshots and cluster maintenance run ten times per second,
#: finer than every protocol timer, so membership changes surface quickly.
#: Tick times are computed as tick/10 to keep them exactly representable.
REFRESH_PER_SECOND = 10


class SchedulingError(ValueError):
    """An event was scheduled in the past."""


@dataclass(frozen=True)
class ChannelModel:
    range: float
    base_latency: float = 0.002
    jitter: float = 0.001
    loss_probability: float = 0.0

    def validate(self):
        if self.range <= 0:
            raise ValueError("channel range must be positive")
        if self.base_latency < 0 or self.jitter < 0:
            raise ValueError("latency parameters must be non-negative")
        if not (0.0 <= self.loss_probability <= 1.0):
            raise ValueError("loss probability must be within [0, 1]")


class CountingRandom:
    """random.Random facade that counts how many draws were consumed."""

    def __init__(self, seed_material: str):
        self._rng = random.Random(seed_material)
        self.draws = 0

    def random(self) -> float:
        self.draws += 1
        return self._rng.random()

    def uniform(self, a: float, b: float) -> float:
        self.draws += 1
        return self._rng.uniform(a, b)


class RngStreams:
    """Independent named substreams derived from one run seed.

    Each stream is seeded from ``"<seed>/<name>"`` so enabling or
    disabling one consumer never shifts another stream's sequence.
    """

    def __init__(self, seed: int):
        self.seed = seed
        self._streams: dict[str, CountingRandom] = {}

    def stream(self, name: str) -> CountingRandom:
        if name not in self._streams:
            self._streams[name] = CountingRandom(f"{self.seed}/{name}")
        return self._streams[name]

    def draw_counts(self) -> dict[str, int]:
        return {name: s.draws for name, s in sorted(self._streams.items())}


class Simulation:
    """One protocol run over one scenario; single-threaded and replayable."""

    def __init__(self, config):
        config.validate()
        self.config = config
        self.protocol = config.protocol
        self.channel = ChannelModel(
            range=config.range_c,
            base_latency=config.base_latency,
            jitter=config.jitter,
            loss_probability=config.loss_probability,
        )
        self.channel.validate()
        self.rngs = RngStreams(config.seed)
        self.model = self._build_mobility()
        self.now = 0.0
        self.log_book = EventLog()
        self._queue: list[tuple[float, int, str, tuple]] = []
        self._seq = itertools.count()
        self._msg_counter = itertools.count(1)
        self._cluster_counter = itertools.count(1)
        self._overlays: dict[str, list[float]] = {}  # vid -> [speed mult, heading offset]

        self.rsu_positions: dict[str, Position] = {
            f"rsu{i + 1}": pos for i, pos in enumerate(config.rsu_positions)
        }
        self.rsus: dict[str, RsuAgent] = {
            rid: RsuAgent(rid, pos) for rid, pos in sorted(self.rsu_positions.items())
        }
        self.vehicles: dict[str, VehicleAgent] = {
            vid: VehicleAgent(vid) for vid in self.model.vehicle_ids()
        }
        self.snapshot: dict[str, VehicleSnap] = mobility.snapshot_all(self.model, 0.0)

    # -- construction ---------------------------------------------------------

    def _build_mobility(self) -> MobilityModel:
        cfg = self.config
        if cfg.mobility_mode == "synthetic":
            return mobility.build_synthetic(
                vehicle_count=cfg.vehicle_count,
                area_width=cfg.area_width,
                lane_offsets=list(cfg.lane_offsets),
                speed_min_mps=cfg.speed_min_mps,
                speed_max_mps=cfg.speed_max_mps,
                rng=self.rngs.stream("mobility"),
            )
        model = mobility.load_trace(cfg.trace_path)
        for vid in model.vehicle_ids():
            first, last = model.time_span(vid)
            if first > 0.0 or last < cfg.horizon:
                raise ValueError(
                    f"trace vehicle {vid} covers [{first}, {last}], "
                    f"not the full horizon [0, {cfg.horizon}]"
                )
        return model

    # -- engine services used by agents ----------------------------------------

    def log(self, event_kind: str, node: str, **detail):
        self.log_book.add(self.now, event_kind, node, **detail)

    def rng(self, name: str) -> CountingRandom:
        return self.rngs.stream(name)

    def new_msg_id(self) -> str:
        return f"m{next(self._msg_counter)}"

    def new_cluster_id(self) -> str:
        return f"c{next(self._cluster_counter)}"

    def node_position(self, node_id: str) -> Position | None:
        if node_id in self.rsu_positions:
            return self.rsu_positions[node_id]
        snap = self.snapshot.get(node_id)
        return snap.position if snap else None

    def perturbed_kinematics(self, vid: str, speed: float, heading: float):
        overlay = self._overlays.get(vid)
        if overlay is None:
            return speed, heading
        return speed * overlay[0], (heading + overlay[1]) % 360.0

    def schedule(self, fire_at: float, kind: str, payload: tuple):
        if fire_at < self.now:
            raise SchedulingError(f"cannot schedule at {fire_at} before now={self.now}")
        heapq.heappush(self._queue, (fire_at, next(self._seq), kind, payload))

    def schedule_ack_timeout(self, owner: str, msg_id: str, recipient: str):
        self.schedule(
            self.now + self.config.timers.ack, EVENT_TIMER, ("ack", owner, msg_id, recipient)
        )

    # -- radio channel -----------------------------------------------------------

    def transmit(self, sender: str, msg: Message):
        """Unit-disk delivery with seeded loss and jitter draws.

        Per-recipient ``send`` records are the accounting unit: a
        broadcast counts once per node in range. Every delivery attempt
        consumes a loss draw and a jitter draw so channel behavior is a
        pure function of the seed.
        """
        sender_pos = self.node_position(sender)
        if msg.target == BROADCAST:
            names = [n for n in self._all_node_ids() if n != sender]
            in_range = [
                n
                for n in names
                if euclidean_distance(sender_pos, self.node_position(n)) <= self.channel.range
            ]
            self.log(
                "broadcast", sender, msg=msg.msg_id, kind=msg.kind, recipients=len(in_range)
            )
            for recipient in in_range:
                self._attempt_delivery(sender, msg, recipient)
            return

        self.log("send", sender, msg=msg.msg_id, kind=msg.kind, to=msg.target, size=msg.size)
        target_pos = self.node_position(msg.target)
        if target_pos is None:
            self.log("discard", sender, msg=msg.msg_id, to=msg.target, reason="unknown-target")
            return
        if euclidean_distance(sender_pos, target_pos) > self.channel.range:
            self.log("discard", sender, msg=msg.msg_id, to=msg.target, reason="out-of-range")
            return
        self._deliver_or_lose(sender, msg, msg.target)

    def _attempt_delivery(self, sender: str, msg: Message, recipient: str):
        self.log("send", sender, msg=msg.msg_id, kind=msg.kind, to=recipient, size=msg.size)
        self._deliver_or_lose(sender, msg, recipient)

    def _deliver_or_lose(self, sender: str, msg: Message, recipient: str):
        lost = self.rng("channel-loss").random() < self.channel.loss_probability
        jitter = self.rng("jitter").uniform(-self.channel.jitter, self.channel.jitter)
        if lost:
            self.log("loss", sender, msg=msg.msg_id, to=recipient, size=msg.size)
            return
        latency = max(0.0, self.channel.base_latency + jitter)
        self.schedule(self.now + latency, EVENT_DELIVERY, (msg, recipient, sender))

    def _all_node_ids(self) -> list[str]:
        return sorted(self.rsus) + sorted(self.vehicles)

    # -- cluster bookkeeping -------------------------------------------------------

    def form_mg_clusters(self, rsu: RsuAgent):
        members = {
            vid: self.snapshot[vid]
            for vid in sorted(rsu.registrations)
            if vid in self.snapshot
        }
        records = clustering.form_clusters(
            members,
            parent=rsu.node_id,
            range_c=self.config.range_c,
            s_th=self.config.s_th_mps,
            delta=self.config.delta_deg,
            life_timer=self.config.timers.life,
            now=self.now,
            next_cluster_id=self.new_cluster_id,
            previous=rsu.clusters,
        )
        rsu.clusters = self._install_clusters(rsu.clusters, records, scope="mg")

    def nmg_formation_pass(self):
        """Attach out-of-range vehicles to their nearest recruiting head.

        Runs once per periodic instant, after every RSU has re-formed its
        clusters, so attachment decisions see one consistent head set.
        """
        self.log("timer", "sim", kind="nmg-formation")
        # heads that lost their role keep no downstream clusters
        for vid in sorted(self.vehicles):
            agent = self.vehicles[vid]
            if agent.nmg_clusters and not (
                agent.role == "CH" and agent.cluster_scope == "mg"
            ):
                self._dissolve_records(agent, agent.nmg_clusters, reason="parent-demoted")
                agent.nmg_clusters = []

        heads = [
            vid
            for vid in sorted(self.vehicles)
            if self.vehicles[vid].role == "CH" and self.vehicles[vid].cluster_scope == "mg"
        ]
        registered = set()
        for rsu in self.rsus.values():
            registered.update(rsu.registrations)

        assigned: dict[str, dict[str, VehicleSnap]] = {h: {} for h in heads}
        for vid in sorted(self.vehicles):
            if vid in registered or vid in heads:
                continue
            candidates = []
            for head in heads:
                if vid not in self.vehicles[head].nmg_registrations:
                    continue
                d = euclidean_distance(
                    self.snapshot[vid].position, self.snapshot[head].position
                )
                if d <= self.channel.range:
                    candidates.append((d, head))
            if candidates:
                _, winner = min(candidates)
                assigned[winner][vid] = self.snapshot[vid]

        for head in heads:
            agent = self.vehicles[head]
            records = clustering.form_clusters(
                assigned[head],
                parent=head,
                range_c=self.config.range_c,
                s_th=self.config.s_th_mps,
                delta=self.config.delta_deg,
                life_timer=self.config.timers.life,
                now=self.now,
                next_cluster_id=self.new_cluster_id,
                previous=agent.nmg_clusters,
            )
            agent.nmg_clusters = self._install_clusters(
                agent.nmg_clusters, records, scope="nmg"
            )
            agent.broadcast_join(self)

    def fast_join_cluster(self, records: list[ClusterRecord], vid: str, scope: str):
        """Mid-cycle admission of a newcomer into the nearest existing cluster."""
        agent = self.vehicles[vid]
        if agent.cluster is not None:
            return
        snap = self.snapshot.get(vid)
        if snap is None:
            return
        best = None
        for idx, record in enumerate(records):
            head_snap = self.snapshot.get(record.head)
            if head_snap is None:
                continue
            d = euclidean_distance(snap.position, head_snap.position)
            if d <= record.radius and (best is None or d < best[0]):
                best = (d, idx)
        if best is None:
            return
        idx = best[1]
        updated = clustering.maintain(
            records[idx],
            MaintenanceEvent("node-entered", vid),
            self.now,
            self.config.timers.life,
        )
        records[idx] = updated
        self._repoint(updated)
        self._set_role(vid, "CM", updated, scope)
        self.log(
            "member_added",
            updated.parent,
            cluster=updated.cluster_id,
            vehicle=vid,
            life_deadline=f"{updated.members[vid]:.6f}",
        )

    def _install_clusters(
        self, old: list[ClusterRecord], new: list[ClusterRecord], scope: str
    ) -> list[ClusterRecord]:
        new_members = {vid for rec in new for vid in rec.members}
        for rec in old:
            for vid in sorted(rec.members):
                agent = self.vehicles.get(vid)
                if (
                    agent
                    and agent.cluster is not None
                    and agent.cluster.cluster_id == rec.cluster_id
                    and vid not in new_members
                ):
                    self._set_role(vid, None, None, None)
        for rec in new:
            self.log(
                "cluster_formed",
                rec.parent,
                cluster=rec.cluster_id,
                head=rec.head,
                secondary=rec.secondary_head or "-",
                radius=f"{rec.radius:g}",
                members=",".join(sorted(rec.members)),
                life_deadline=f"{self.now + self.config.timers.life:.6f}",
                scope=scope,
            )
            for vid in sorted(rec.members):
                role = "CH" if vid == rec.head else "SCH" if vid == rec.secondary_head else "CM"
                self._set_role(vid, role, rec, scope)
        return new

    def _set_role(
        self,
        vid: str,
        role: str | None,
        record: ClusterRecord | None,
        scope: str | None,
    ):
        agent = self.vehicles[vid]
        changed = (
            agent.role != role
            or agent.cluster_scope != scope
            or (agent.cluster.cluster_id if agent.cluster else None)
            != (record.cluster_id if record else None)
        )
        agent.role = role
        agent.cluster = record
        agent.cluster_scope = scope
        if changed:
            self.log(
                "role_change",
                vid,
                role=role or "-",
                cluster=record.cluster_id if record else "-",
                scope=scope or "-",
            )

    def _repoint(self, record: ClusterRecord):
        """Refresh member agents' pointers after a record was replaced."""
        for vid in record.members:
            agent = self.vehicles.get(vid)
            if agent and agent.cluster is not None and agent.cluster.cluster_id == record.cluster_id:
                agent.cluster = record

    def _election_weights(self, record: ClusterRecord, exclude: str | None = None):
        member_snaps = {
            vid: self.snapshot[vid]
            for vid in record.members
            if vid != exclude and vid in self.snapshot
        }
        if not member_snaps:
            return {}
        s_avg = sum(s.speed for s in member_snaps.values()) / len(member_snaps)
        adjacency = clustering.neighbor_graph(
            member_snaps, record.radius, self.config.delta_deg
        )
        return {
            vid: clustering.compute_weight_factor(vid, member_snaps, s_avg, adjacency)
            for vid in member_snaps
        }

    def _swap_record(
        self, owner_list: list[ClusterRecord], old: ClusterRecord, new: ClusterRecord | None
    ):
        idx = next(
            i for i, rec in enumerate(owner_list) if rec.cluster_id == old.cluster_id
        )
        if new is None:
            owner_list.pop(idx)
        else:
            owner_list[idx] = new
            self._repoint(new)

    def _owning_list(self, record: ClusterRecord) -> list[ClusterRecord]:
        if record.parent in self.rsus:
            return self.rsus[record.parent].clusters
        return self.vehicles[record.parent].nmg_clusters

    def drop_cluster_member(self, record: ClusterRecord, vid: str, reason: str):
        """Route one departure through the proper cluster transition."""
        owner_list = self._owning_list(record)
        current = next(
            (r for r in owner_list if r.cluster_id == record.cluster_id), None
        )
        if current is None or vid not in current.members:
            return
        scope = "mg" if record.parent in self.rsus else "nmg"
        if vid == current.head:
            self._head_failure(owner_list, current, reason, scope)
        else:
            self._member_exit(owner_list, current, vid, reason, scope)

    def _member_exit(
        self,
        owner_list: list[ClusterRecord],
        record: ClusterRecord,
        vid: str,
        reason: str,
        scope: str,
    ):
        weights = self._election_weights(record, exclude=vid)
        updated = clustering.maintain(
            record,
            MaintenanceEvent("member-exited", vid),
            self.now,
            self.config.timers.life,
            election_weights=weights,
        )
        self.log(
            "member_removed", record.parent, cluster=record.cluster_id, vehicle=vid, reason=reason
        )
        self._set_role(vid, None, None, None)
        self._swap_record(owner_list, record, updated)
        if updated is None:
            self.log("cluster_dissolved", record.parent, cluster=record.cluster_id, reason=reason)
            return
        if updated.secondary_head != record.secondary_head:
            self._refresh_head_roles(updated, scope)

    def _head_failure(
        self,
        owner_list: list[ClusterRecord],
        record: ClusterRecord,
        reason: str,
        scope: str,
    ):
        weights = self._election_weights(record, exclude=record.head)
        updated = clustering.maintain(
            record,
            MaintenanceEvent("head-failed", record.head),
            self.now,
            self.config.timers.life,
            election_weights=weights,
        )
        self.log(
            "head_failed", record.parent, cluster=record.cluster_id, head=record.head, reason=reason
        )
        self._set_role(record.head, None, None, None)
        self._swap_record(owner_list, record, updated)
        if updated is None:
            self.log("cluster_dissolved", record.parent, cluster=record.cluster_id, reason="no-secondary")
            for vid in sorted(record.members):
                if vid != record.head:
                    self._set_role(vid, None, None, None)
            return
        self.log(
            "head_promoted",
            record.parent,
            cluster=updated.cluster_id,
            head=updated.head,
            secondary=updated.secondary_head or "-",
        )
        self._refresh_head_roles(updated, scope)

    def _refresh_head_roles(self, record: ClusterRecord, scope: str):
        for vid in sorted(record.members):
            role = "CH" if vid == record.head else "SCH" if vid == record.secondary_head else "CM"
            self._set_role(vid, role, record, scope)

    # -- maintenance scan ---------------------------------------------------------

    def _maintenance(self):
        self._sweep_registrations()
        if self.protocol != MYBEAM:
            return
        for rid in sorted(self.rsus):
            rsu = self.rsus[rid]
            self._scan_clusters(
                rsu.clusters,
                scope="mg",
                parent_pos=rsu.position,
                member_valid=lambda vid, rsu=rsu: vid in rsu.registrations,
            )
        registered = set()
        for rsu in self.rsus.values():
            registered.update(rsu.registrations)
        for vid in sorted(self.vehicles):
            agent = self.vehicles[vid]
            if not agent.nmg_clusters:
                continue
            if not (agent.role == "CH" and agent.cluster_scope == "mg"):
                self._dissolve_records(agent, agent.nmg_clusters, reason="parent-demoted")
                agent.nmg_clusters = []
                continue
            parent_snap = self.snapshot[vid]
            self._scan_clusters(
                agent.nmg_clusters,
                scope="nmg",
                parent_pos=parent_snap.position,
                member_valid=lambda m, agent=agent, reg=registered: (
                    m in agent.nmg_registrations and m not in reg
                ),
            )

    def _sweep_registrations(self):
        for rid in sorted(self.rsus):
            rsu = self.rsus[rid]
            for vid in sorted(rsu.registrations):
                if rsu.registrations[vid] < self.now:
                    del rsu.registrations[vid]
                    self.log("expire", rid, vehicle=vid, reason="life")
        for vid in sorted(self.vehicles):
            agent = self.vehicles[vid]
            for member in sorted(agent.nmg_registrations):
                if agent.nmg_registrations[member] < self.now:
                    del agent.nmg_registrations[member]
                    self.log("expire_nmg", vid, vehicle=member, reason="life")

    def _scan_clusters(self, owner_list, scope, parent_pos, member_valid):
        for record in list(owner_list):
            if not any(r.cluster_id == record.cluster_id for r in owner_list):
                continue  # replaced or removed by an earlier transition
            current = next(
                r for r in owner_list if r.cluster_id == record.cluster_id
            )
            head_snap = self.snapshot.get(current.head)
            head_ok = (
                head_snap is not None
                and member_valid(current.head)
                and current.members.get(current.head, -1.0) >= self.now
                and euclidean_distance(head_snap.position, parent_pos) <= self.channel.range
            )
            if not head_ok:
                self._head_failure(owner_list, current, reason="head-left", scope=scope)
                current = next(
                    (r for r in owner_list if r.cluster_id == record.cluster_id), None
                )
                if current is None:
                    continue
            head_snap = self.snapshot[current.head]
            for vid in sorted(current.members):
                if vid == current.head:
                    continue
                snap = self.snapshot.get(vid)
                ok = (
                    snap is not None
                    and member_valid(vid)
                    and current.members[vid] >= self.now
                    and euclidean_distance(snap.position, head_snap.position)
                    <= current.radius
                )
                if not ok:
                    self._member_exit(owner_list, current, vid, reason="exited", scope=scope)
                    current = next(
                        (r for r in owner_list if r.cluster_id == record.cluster_id), None
                    )
                    if current is None:
                        break

    def _dissolve_records(self, owner, records: list[ClusterRecord], reason: str):
        for record in records:
            self.log("cluster_dissolved", record.parent, cluster=record.cluster_id, reason=reason)
            for vid in sorted(record.members):
                agent = self.vehicles.get(vid)
                if agent and agent.cluster is not None and agent.cluster.cluster_id == record.cluster_id:
                    self._set_role(vid, None, None, None)

    # -- emergency topology logging -------------------------------------------------

    def log_topology(self, msg_id: str):
        """Relay tree plus node positions at emission time, for coverage oracles."""
        edges = []
        if self.protocol == BEAM:
            for rid in sorted(self.rsus):
                for vid in sorted(self.rsus[rid].registrations):
                    edges.append(f"{rid}:{vid}")
        else:
            for rid in sorted(self.rsus):
                for rec in self.rsus[rid].clusters:
                    edges.append(f"{rid}:{rec.head}")
                    for vid in sorted(rec.members):
                        if vid != rec.head:
                            edges.append(f"{rec.head}:{vid}")
            for vid in sorted(self.vehicles):
                for rec in self.vehicles[vid].nmg_clusters:
                    edges.append(f"{vid}:{rec.head}")
                    for member in sorted(rec.members):
                        if member != rec.head:
                            edges.append(f"{rec.head}:{member}")
        positions = []
        for node in self._all_node_ids():
            pos = self.node_position(node)
            positions.append(f"{node}:{pos.x:.3f}:{pos.y:.3f}")
        self.log(
            "topology",
            "sim",
            msg=msg_id,
            edges=";".join(edges) if edges else "-",
            pos=";".join(positions),
        )

    # -- injections -------------------------------------------------------------------

    def _apply_injection(self, spec):
        vid = spec.vehicle
        if vid == "auto-mg":
            vid = self._resolve_auto_mg()
        if vid not in self.vehicles:
            raise ValueError(f"injection names unknown vehicle {vid!r}")
        overlay = self._overlays.setdefault(vid, [1.0, 0.0])
        if spec.kind == "speed-spike":
            overlay[0] *= 1.0 + spec.magnitude
        else:
            overlay[1] += spec.magnitude
        self.log(
            "inject",
            vid,
            kind=spec.kind,
            magnitude=f"{spec.magnitude:g}",
            requested=spec.vehicle,
        )

    def _resolve_auto_mg(self) -> str:
        """Lowest-id registered vehicle that its RSU can still hear.

        The in-range filter matters: a member on its way out of coverage
        would spike unobserved.
        """
        in_range = []
        registered = []
        for rid in sorted(self.rsus):
            rsu = self.rsus[rid]
            for vid in sorted(rsu.registrations):
                registered.append(vid)
                snap = self.snapshot.get(vid)
                if snap and (
                    euclidean_distance(snap.position, rsu.position) < self.config.range_c
                ):
                    in_range.append(vid)
        if in_range:
            return min(in_range)
        if registered:
            return min(registered)
        return min(self.vehicles)

    # -- main loop ---------------------------------------------------------------------

    def run(self, horizon: Optional[float] = None) -> EventLog:
        cfg = self.config
        horizon = cfg.horizon if horizon is None else horizon
        self.log(
            "init",
            "sim",
            protocol=self.protocol,
            seed=cfg.seed,
            vehicles=len(self.vehicles),
            rsus=len(self.rsus),
            horizon=f"{horizon:g}",
            digest=cfg.digest(),
        )

        # Refresh ticks are pre-scheduled so they always precede protocol
        # events at shared instants: formation, membership checks and any
        # dissemination wave within the same tick then share one snapshot.
        tick = 0
        while tick / REFRESH_PER_SECOND < horizon or tick == 0:
            self.schedule(tick / REFRESH_PER_SECOND, EVENT_REFRESH, (tick,))
            tick += 1
        for rid in sorted(self.rsus):
            self.schedule(cfg.timers.periodic, EVENT_TIMER, ("periodic", rid))
        if self.protocol == MYBEAM:
            self.schedule(cfg.timers.periodic, EVENT_TIMER, ("nmg-pass",))
        for vid in sorted(self.vehicles):
            self.schedule(cfg.timers.status, EVENT_TIMER, ("status", vid))
        for spec in cfg.emergencies:
            if spec.at >= horizon:
                raise ValueError(f"injection at {spec.at} not before horizon {horizon}")
            self.schedule(spec.at, EVENT_INJECTION, (spec,))

        while self._queue and self._queue[0][0] < horizon:
            fire_at, _, kind, payload = heapq.heappop(self._queue)
            self.now = fire_at
            self._dispatch(kind, payload)

        self.now = horizon
        self._drain_undelivered()
        counts = self.rngs.draw_counts()
        self.log("rng", "sim", **{name: n for name, n in counts.items()})
        self.log("end", "sim", events=len(self.log_book))
        return self.log_book

    def _dispatch(self, kind: str, payload: tuple):
        if kind == EVENT_DELIVERY:
            msg, recipient, sender = payload
            self.log(
                "delivery",
                recipient,
                msg=msg.msg_id,
                kind=msg.kind,
                size=msg.size,
                sender=sender,
            )
            agent = self.rsus.get(recipient) or self.vehicles.get(recipient)
            agent.handle_message(self, msg)
        elif kind == EVENT_TIMER:
            self._dispatch_timer(payload)
        elif kind == EVENT_REFRESH:
            self._on_refresh(payload[0])
        elif kind == EVENT_INJECTION:
            self._apply_injection(payload[0])

    def _dispatch_timer(self, payload: tuple):
        name = payload[0]
        if name == "periodic":
            rid = payload[1]
            self.rsus[rid].periodic_tick(self)
            self.schedule(self.now + self.config.timers.periodic, EVENT_TIMER, ("periodic", rid))
        elif name == "nmg-pass":
            self.nmg_formation_pass()
            self.schedule(self.now + self.config.timers.periodic, EVENT_TIMER, ("nmg-pass",))
        elif name == "status":
            vid = payload[1]
            self.vehicles[vid].status_tick(self)
            self.schedule(self.now + self.config.timers.status, EVENT_TIMER, ("status", vid))
        elif name == "ack":
            _, owner, msg_id, recipient = payload
            self.log("timer", owner, kind="ack", msg=msg_id, to=recipient)
            agent = self.rsus.get(owner) or self.vehicles.get(owner)
            agent.handle_ack_timeout(self, msg_id, recipient)

    def _on_refresh(self, tick: int):
        self.log("mobility_refresh", "sim", tick=tick)
        self.snapshot = mobility.snapshot_all(self.model, tick / REFRESH_PER_SECOND)
        self._maintenance()

    def _drain_undelivered(self):
        while self._queue:
            fire_at, _, kind, payload = heapq.heappop(self._queue)
            if kind == EVENT_DELIVERY:
                msg, recipient, sender = payload
                self.log(
                    "undelivered",
                    sender,
                    msg=msg.msg_id,
                    to=recipient,
                    size=msg.size,
                    due=f"{fire_at:.6f}",
                )
