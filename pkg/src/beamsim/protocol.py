"""Protocol agents: roadside units and vehicles, in both operating modes.

``beam`` is the baseline: RSUs maintain a multicast group via periodic
join-control broadcasts, watch member status reports for abnormal
kinematics, and unicast emergency messages to group members with
ack/retransmit bookkeeping. Vehicles outside RSU range stay silent.

``mybeam`` adds cluster relaying: RSUs cluster their group members and
deliver emergencies via cluster heads; heads recruit out-of-range
vehicles into secondary clusters and relay both upward (toward the RSU)
and downward (to members), so ordinary vehicles hear about emergencies
too.

Agents are event-driven state machines invoked only by the simulation
scheduler; they never run concurrently and share no mutable state. The
``env`` passed in is the running simulation, which provides the clock,
the radio channel, snapshots, logging, and timer scheduling.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .clustering import (
    ClusterRecord,
    GroupLabel,
    MaintenanceEvent,
    classify_rsu_membership,
    maintain,
)
from .geometry import Position, angular_difference, euclidean_distance

BEAM = "beam"
MYBEAM = "mybeam"

JOIN_CONTROL = "JoinControl"
JOIN_REPLY = "JoinReply"
STATUS_REPORT = "StatusReport"
EMERGENCY = "EmergencyMsg"
ACK = "Ack"

BROADCAST = "broadcast"

#: Wire sizes in bytes; stand-ins for the real encodings.
MESSAGE_SIZES = {
    JOIN_CONTROL: 32,
    JOIN_REPLY: 32,
    STATUS_REPORT: 64,
    EMERGENCY: 128,
    ACK: 16,
}

#: Speed jumps above current > (4/3) * reported trigger an emergency.
SPEED_SPIKE_FACTOR = 4.0 / 3.0
#: Yaw-rate jumps above reported + 30 deg/s trigger an emergency.
YAW_SPIKE_MARGIN = 30.0


@dataclass(frozen=True)
class Message:
    kind: str
    msg_id: str
    origin: str
    target: str  # node id or BROADCAST
    created_at: float
    size: int
    # StatusReport payload
    speed: float | None = None
    yaw_rate: float | None = None
    position: Position | None = None
    # EmergencyMsg payload
    source_report: str | None = None
    hop_path: tuple[str, ...] = ()
    # Ack payload
    acked_msg_id: str | None = None


@dataclass
class TimerSet:
    periodic: float = 1.0
    status: float = 1.0
    life: float = 30.0
    ack: float = 1.0

    def validate(self):
        for name in ("periodic", "status", "life", "ack"):
            if getattr(self, name) <= 0:
                raise ValueError(f"timer {name} must be strictly positive")


def detect_emergency(
    current: tuple[float, float],
    reported: tuple[float, float] | None,
    on_decrease: bool = False,
) -> bool:
    """Abnormal-kinematics predicate over (speed, yaw_rate) pairs.

    Fires when the current speed strictly exceeds 4/3 of the reported
    speed, or the current yaw rate strictly exceeds the reported one by
    more than 30 deg/s. Without a prior report there is nothing to
    compare, so the answer is False. ``on_decrease`` additionally fires
    on the mirrored speed drop (off by default; the base rule watches
    increases only).
    """
    if reported is None:
        return False
    c_speed, c_yaw = current
    r_speed, r_yaw = reported
    if c_speed > r_speed * SPEED_SPIKE_FACTOR:
        return True
    if c_yaw > r_yaw + YAW_SPIKE_MARGIN:
        return True
    if on_decrease and c_speed < r_speed * (2.0 - SPEED_SPIKE_FACTOR):
        return True
    return False


class _AckMixin:
    """Shared ack/retransmit bookkeeping for RSUs and cluster heads."""

    def _send_with_ack(self, env, msg: Message):
        self.pending_acks[(msg.msg_id, msg.target)] = (0, msg)
        env.transmit(self.node_id, msg)
        env.schedule_ack_timeout(self.node_id, msg.msg_id, msg.target)

    def handle_ack(self, env, msg: Message):
        self.pending_acks.pop((msg.acked_msg_id, msg.origin), None)

    def handle_ack_timeout(self, env, msg_id: str, recipient: str):
        """Retransmit until the attempt cap, then drop the silent recipient."""
        entry = self.pending_acks.get((msg_id, recipient))
        if entry is None:
            return
        attempts, msg = entry
        attempts += 1
        if attempts <= env.config.max_attempts:
            self.pending_acks[(msg_id, recipient)] = (attempts, msg)
            env.log("resend", self.node_id, msg=msg_id, to=recipient, attempt=attempts)
            env.transmit(self.node_id, msg)
            env.schedule_ack_timeout(self.node_id, msg_id, recipient)
        else:
            self.pending_acks.pop((msg_id, recipient), None)
            env.log("member_drop", self.node_id, vehicle=recipient, msg=msg_id)
            self._drop_unresponsive(env, recipient)

    def _ack(self, env, msg: Message):
        sender = msg.hop_path[-1] if msg.hop_path else msg.origin
        ack = Message(
            kind=ACK,
            msg_id=env.new_msg_id(),
            origin=self.node_id,
            target=sender,
            created_at=env.now,
            size=MESSAGE_SIZES[ACK],
            acked_msg_id=msg.msg_id,
        )
        env.transmit(self.node_id, ack)


class RsuAgent(_AckMixin):
    """Fixed infrastructure node: multicast source and emergency authority."""

    def __init__(self, rsu_id: str, position: Position):
        self.node_id = rsu_id
        self.position = position
        self.registrations: dict[str, float] = {}  # vehicle id -> life deadline
        self.clusters: list[ClusterRecord] = []
        self.pending_acks: dict[tuple[str, str], tuple[int, Message]] = {}
        self.last_report: dict[str, tuple[float, float]] = {}
        self.seen_emergencies: set[str] = set()

    # -- periodic join / formation cycle ------------------------------------

    def periodic_tick(self, env):
        """Refresh membership, broadcast a join invitation, re-form clusters."""
        self._refresh_membership(env)
        env.log("timer", self.node_id, kind="periodic")
        join = Message(
            kind=JOIN_CONTROL,
            msg_id=env.new_msg_id(),
            origin=self.node_id,
            target=BROADCAST,
            created_at=env.now,
            size=MESSAGE_SIZES[JOIN_CONTROL],
        )
        env.transmit(self.node_id, join)
        if env.protocol == MYBEAM:
            env.form_mg_clusters(self)

    def _refresh_membership(self, env):
        """Keep only members that are alive and still nearest-in-range here."""
        for vid in sorted(self.registrations):
            deadline = self.registrations[vid]
            if deadline < env.now:
                del self.registrations[vid]
                env.log("expire", self.node_id, vehicle=vid, reason="life")
                continue
            snap = env.snapshot.get(vid)
            label, nearest = (
                classify_rsu_membership(snap.position, env.rsu_positions, env.config.range_c)
                if snap
                else (GroupLabel.NMG, None)
            )
            if label is not GroupLabel.MG or nearest != self.node_id:
                del self.registrations[vid]
                env.log("expel", self.node_id, vehicle=vid, reason="out-of-range")

    def handle_join_reply(self, env, msg: Message):
        """Register or refresh a member; duplicate adds are idempotent."""
        vid = msg.origin
        refreshed = vid in self.registrations
        self.registrations[vid] = env.now + env.config.timers.life
        env.log(
            "register",
            self.node_id,
            vehicle=vid,
            life_deadline=f"{self.registrations[vid]:.6f}",
            refreshed=str(refreshed).lower(),
        )
        if env.protocol == MYBEAM and not refreshed:
            env.fast_join_cluster(self.clusters, vid, scope="mg")

    # -- status monitoring and emergency dissemination -----------------------

    def handle_status(self, env, msg: Message):
        vid = msg.origin
        prior = self.last_report.get(vid)
        current = (msg.speed, msg.yaw_rate)
        self.last_report[vid] = current
        if detect_emergency(current, prior, env.config.emergency_on_decrease):
            self._raise_emergency(env, vid, msg.msg_id)

    def _raise_emergency(self, env, reporter: str, report_id: str):
        emergency = Message(
            kind=EMERGENCY,
            msg_id=env.new_msg_id(),
            origin=self.node_id,
            target="",  # per-recipient copies carry the real target
            created_at=env.now,
            size=MESSAGE_SIZES[EMERGENCY],
            source_report=report_id,
            hop_path=(self.node_id,),
        )
        self.seen_emergencies.add(emergency.msg_id)
        env.log("detect", self.node_id, vehicle=reporter, msg=emergency.msg_id)
        env.log_topology(emergency.msg_id)
        self.disseminate(env, emergency)

    def disseminate(self, env, emergency: Message):
        """First-hop fan-out: straight to members (beam) or to heads (mybeam)."""
        if env.protocol == BEAM:
            targets = sorted(self.registrations)
        else:
            targets = sorted({c.head for c in self.clusters})
        for vid in targets:
            if vid in emergency.hop_path:
                continue
            self._send_with_ack(env, replace(emergency, target=vid))

    def handle_emergency(self, env, msg: Message):
        """An upward emergency from a cluster head: ack, then fan out."""
        self._ack(env, msg)
        if msg.msg_id in self.seen_emergencies:
            return
        self.seen_emergencies.add(msg.msg_id)
        relayed = replace(msg, hop_path=msg.hop_path + (self.node_id,))
        for vid in sorted({c.head for c in self.clusters}):
            if vid in relayed.hop_path:
                continue
            self._send_with_ack(env, replace(relayed, target=vid))

    def _drop_unresponsive(self, env, vid: str):
        self.registrations.pop(vid, None)

    def handle_message(self, env, msg: Message):
        if msg.kind == JOIN_REPLY:
            self.handle_join_reply(env, msg)
        elif msg.kind == STATUS_REPORT:
            self.handle_status(env, msg)
        elif msg.kind == EMERGENCY:
            self.handle_emergency(env, msg)
        elif msg.kind == ACK:
            self.handle_ack(env, msg)
        # JoinControl from a cluster head is not for us


class VehicleAgent(_AckMixin):
    """On-board unit: joins groups, reports status, acks and relays emergencies."""

    def __init__(self, vid: str):
        self.node_id = vid
        self.role: str | None = None  # "CH" | "SCH" | "CM" | None
        self.cluster: ClusterRecord | None = None
        self.cluster_scope: str | None = None  # "mg" | "nmg"
        self.nmg_registrations: dict[str, float] = {}  # while serving as MG head
        self.nmg_clusters: list[ClusterRecord] = []
        self.pending_acks: dict[tuple[str, str], tuple[int, Message]] = {}
        self.last_report: dict[str, tuple[float, float]] = {}
        self.seen_emergencies: set[str] = set()
        self.last_sampled_heading: float | None = None
        self.last_reported: tuple[float, float] | None = None

    # -- group membership -----------------------------------------------------

    def group_label(self, env) -> tuple[GroupLabel, str | None]:
        snap = env.snapshot[self.node_id]
        return classify_rsu_membership(snap.position, env.rsu_positions, env.config.range_c)

    def _willing(self, env) -> bool:
        p = env.config.join_probability
        if p >= 1.0:
            return True
        return env.rng("join-willingness").random() < p

    def handle_join_control(self, env, msg: Message):
        """Answer invitations: RSUs when we are in their group, heads when not."""
        label, nearest = self.group_label(env)
        from_rsu = msg.origin in env.rsu_positions
        if from_rsu:
            if label is not GroupLabel.MG or nearest != msg.origin:
                return
        else:
            if label is not GroupLabel.NMG:
                return
        if not self._willing(env):
            return
        reply = Message(
            kind=JOIN_REPLY,
            msg_id=env.new_msg_id(),
            origin=self.node_id,
            target=msg.origin,
            created_at=env.now,
            size=MESSAGE_SIZES[JOIN_REPLY],
        )
        env.transmit(self.node_id, reply)

    def handle_join_reply(self, env, msg: Message):
        """A reply to our head-side invitation: register the NMG vehicle."""
        vid = msg.origin
        if self.role != "CH" or self.cluster_scope != "mg":
            return
        refreshed = vid in self.nmg_registrations
        self.nmg_registrations[vid] = env.now + env.config.timers.life
        env.log(
            "register_nmg",
            self.node_id,
            vehicle=vid,
            life_deadline=f"{self.nmg_registrations[vid]:.6f}",
            refreshed=str(refreshed).lower(),
        )
        if not refreshed:
            env.fast_join_cluster(self.nmg_clusters, vid, scope="nmg")

    def broadcast_join(self, env):
        """Head-side recruitment of out-of-range vehicles (mybeam only)."""
        join = Message(
            kind=JOIN_CONTROL,
            msg_id=env.new_msg_id(),
            origin=self.node_id,
            target=BROADCAST,
            created_at=env.now,
            size=MESSAGE_SIZES[JOIN_CONTROL],
        )
        env.transmit(self.node_id, join)

    # -- status reporting -------------------------------------------------------

    def sample_kinematics(self, env) -> tuple[float, float, Position]:
        """Own (speed, yaw_rate, position), including any injected perturbation."""
        snap = env.snapshot[self.node_id]
        speed, heading = env.perturbed_kinematics(self.node_id, snap.speed, snap.heading)
        if self.last_sampled_heading is None:
            yaw_rate = 0.0
        else:
            yaw_rate = (
                angular_difference(heading, self.last_sampled_heading)
                / env.config.timers.status
            )
        self.last_sampled_heading = heading
        return speed, yaw_rate, snap.position

    def status_parent(self, env) -> str | None:
        """Where status reports go: our RSU when in-range, else our head."""
        label, nearest = self.group_label(env)
        if label is GroupLabel.MG:
            return nearest
        if self.cluster is not None and self.cluster_scope == "nmg":
            if self.role == "CH":
                return self.cluster.parent
            return self.cluster.head
        return None

    def status_tick(self, env):
        env.log("timer", self.node_id, kind="status")
        speed, yaw_rate, position = self.sample_kinematics(env)
        parent = self.status_parent(env)
        if parent is None:
            env.log("unsendable", self.node_id, kind=STATUS_REPORT)
            return
        report = Message(
            kind=STATUS_REPORT,
            msg_id=env.new_msg_id(),
            origin=self.node_id,
            target=parent,
            created_at=env.now,
            size=MESSAGE_SIZES[STATUS_REPORT],
            speed=speed,
            yaw_rate=yaw_rate,
            position=position,
        )
        env.transmit(self.node_id, report)
        self.last_reported = (speed, yaw_rate)

    # -- emergencies --------------------------------------------------------------

    def handle_status(self, env, msg: Message):
        """Cluster heads monitor their children exactly like an RSU does."""
        vid = msg.origin
        prior = self.last_report.get(vid)
        current = (msg.speed, msg.yaw_rate)
        self.last_report[vid] = current
        if self.role != "CH":
            return
        if detect_emergency(current, prior, env.config.emergency_on_decrease):
            self._raise_emergency(env, vid, msg.msg_id)

    def _raise_emergency(self, env, reporter: str, report_id: str):
        emergency = Message(
            kind=EMERGENCY,
            msg_id=env.new_msg_id(),
            origin=self.node_id,
            target="",
            created_at=env.now,
            size=MESSAGE_SIZES[EMERGENCY],
            source_report=report_id,
            hop_path=(self.node_id,),
        )
        self.seen_emergencies.add(emergency.msg_id)
        env.log("detect", self.node_id, vehicle=reporter, msg=emergency.msg_id)
        env.log_topology(emergency.msg_id)
        self.disseminate(env, emergency)

    def _relay_targets(self, env) -> list[str]:
        """Tree-adjacent nodes: our parent plus every child we serve."""
        targets: set[str] = set()
        if self.cluster is not None and self.role == "CH":
            targets.update(vid for vid in self.cluster.members if vid != self.node_id)
            targets.add(self.cluster.parent)
            if self.cluster_scope == "mg":
                targets.update(c.head for c in self.nmg_clusters)
        return sorted(targets)

    def disseminate(self, env, emergency: Message):
        for node in self._relay_targets(env):
            if node in emergency.hop_path:
                continue
            self._send_with_ack(env, replace(emergency, target=node))

    def handle_emergency(self, env, msg: Message):
        """Ack every copy; relay the first copy onward when we head a cluster."""
        self._ack(env, msg)
        if msg.msg_id in self.seen_emergencies:
            return
        self.seen_emergencies.add(msg.msg_id)
        if env.protocol != MYBEAM or self.role != "CH":
            return
        relayed = replace(msg, hop_path=msg.hop_path + (self.node_id,))
        for node in self._relay_targets(env):
            if node in relayed.hop_path:
                continue
            self._send_with_ack(env, replace(relayed, target=node))

    def _drop_unresponsive(self, env, vid: str):
        """Ack cap reached: remove the recipient from whatever list holds it."""
        self.nmg_registrations.pop(vid, None)
        if self.cluster is not None and vid in self.cluster.members:
            env.drop_cluster_member(self.cluster, vid, reason="ack-cap")
        for record in list(self.nmg_clusters):
            if vid == record.head and vid in record.members:
                env.drop_cluster_member(record, vid, reason="ack-cap")

    def handle_message(self, env, msg: Message):
        if msg.kind == JOIN_CONTROL:
            self.handle_join_control(env, msg)
        elif msg.kind == JOIN_REPLY:
            self.handle_join_reply(env, msg)
        elif msg.kind == STATUS_REPORT:
            self.handle_status(env, msg)
        elif msg.kind == EMERGENCY:
            self.handle_emergency(env, msg)
        elif msg.kind == ACK:
            self.handle_ack(env, msg)
