"""Group classification, cluster formation, head election and maintenance.

Vehicles inside some RSU's communication range form the multicast group
(MG); everyone else is non-multicast (NMG). Within a group scope,
clusters are the connected components of a geometric neighbor graph that
links vehicles travelling the same way. Each cluster elects a primary
head and, when it has more than one member, a secondary head that takes
over without re-clustering if the primary fails.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

from .geometry import (
    Position,
    euclidean_distance,
    heading_to_velocity,
    same_direction,
)
from .mobility import VehicleSnap


class GroupLabel(enum.Enum):
    MG = "MG"
    NMG = "NMG"


@dataclass(frozen=True)
class WeightFactor:
    """Head-election score: connectivity rewarded, speed deviation penalized."""

    value: float
    neighbor_count: int
    speed_gap: float


@dataclass
class ClusterRecord:
    cluster_id: str
    head: str
    secondary_head: str | None
    members: dict[str, float]  # vehicle id -> life deadline (seconds)
    radius: float
    parent: str  # RSU id or MG cluster-head vehicle id


@dataclass(frozen=True)
class MaintenanceEvent:
    kind: str  # "node-entered" | "member-exited" | "head-failed"
    vehicle_id: str | None = None


def classify_rsu_membership(
    position: Position, rsu_positions: dict[str, Position], range_c: float
) -> tuple[GroupLabel, str | None]:
    """MG with the nearest in-range RSU, else NMG.

    The boundary distance == range_c is NMG (strict inequality).
    """
    best_id = None
    best_d = None
    for rsu_id in sorted(rsu_positions):
        d = euclidean_distance(position, rsu_positions[rsu_id])
        if d < range_c and (best_d is None or d < best_d):
            best_id = rsu_id
            best_d = d
    if best_id is None:
        return (GroupLabel.NMG, None)
    return (GroupLabel.MG, best_id)


def _moves_together(a: VehicleSnap, b: VehicleSnap, delta: float) -> bool:
    # A stopped vehicle has no heading; it must stay reachable, so it
    # passes the direction filter against anyone.
    if a.speed == 0.0 or b.speed == 0.0:
        return True
    return same_direction(
        heading_to_velocity(a.heading, a.speed),
        heading_to_velocity(b.heading, b.speed),
        delta,
    )


def neighbor_graph(
    snapshot: dict[str, VehicleSnap], radius: float, delta: float
) -> dict[str, set[str]]:
    """Symmetric adjacency: within radius and moving the same direction."""
    ids = sorted(snapshot)
    adj: dict[str, set[str]] = {vid: set() for vid in ids}
    for i, a in enumerate(ids):
        for b in ids[i + 1 :]:
            sa, sb = snapshot[a], snapshot[b]
            if euclidean_distance(sa.position, sb.position) > radius:
                continue
            if _moves_together(sa, sb, delta):
                adj[a].add(b)
                adj[b].add(a)
    return adj


def cluster_radius_for_speed(s_avg: float, s_th: float, range_c: float) -> float:
    """Full range for fast groups, half range otherwise (strictly above threshold)."""
    if range_c <= 0:
        raise ValueError("range_c must be positive")
    return range_c if s_avg > s_th else range_c / 2.0


def compute_weight_factor(
    vehicle_id: str,
    snapshot: dict[str, VehicleSnap],
    s_avg: float,
    adjacency: dict[str, set[str]],
) -> WeightFactor:
    """neighbor_count / (1 + |speed - s_avg|); zero when isolated."""
    n_c = len(adjacency.get(vehicle_id, ()))
    gap = abs(snapshot[vehicle_id].speed - s_avg)
    return WeightFactor(value=n_c / (1.0 + gap), neighbor_count=n_c, speed_gap=gap)


def select_cluster_heads(weights: dict[str, WeightFactor]) -> tuple[str, str | None]:
    """Primary and secondary heads by descending weight, ties to lowest id."""
    if not weights:
        raise ValueError("cannot elect heads from an empty member set")
    ranked = sorted(weights, key=lambda vid: (-weights[vid].value, vid))
    head = ranked[0]
    secondary = ranked[1] if len(ranked) > 1 else None
    return (head, secondary)


def _components(adjacency: dict[str, set[str]]) -> list[list[str]]:
    seen: set[str] = set()
    comps: list[list[str]] = []
    for start in sorted(adjacency):
        if start in seen:
            continue
        comp = []
        stack = [start]
        seen.add(start)
        while stack:
            node = stack.pop()
            comp.append(node)
            for nxt in sorted(adjacency[node]):
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        comps.append(sorted(comp))
    return comps


def form_clusters(
    snapshot: dict[str, VehicleSnap],
    parent: str,
    range_c: float,
    s_th: float,
    delta: float,
    life_timer: float,
    now: float,
    next_cluster_id,
    previous: list[ClusterRecord] | None = None,
) -> list[ClusterRecord]:
    """Partition a group scope into head-centered clusters.

    The cluster radius in force is decided once per call from the group's
    average speed. Connected components of the neighbor graph are carved
    into clusters whose members all lie within the radius of their head,
    so the head can reach every member in a single hop; a component whose
    chain outruns the radius yields several clusters. Previously elected
    heads keep their role while they survive, which avoids churn between
    formation cycles; everything else is re-derived from scratch.

    ``next_cluster_id`` is a callable yielding fresh cluster ids.
    """
    if not snapshot:
        return []
    s_avg = sum(s.speed for s in snapshot.values()) / len(snapshot)
    radius = cluster_radius_for_speed(s_avg, s_th, range_c)
    adjacency = neighbor_graph(snapshot, radius, delta)
    prev_heads = {c.head: c for c in previous or []}
    prev_secondaries = {c.secondary_head for c in previous or [] if c.secondary_head}

    records = []
    for comp in _components(adjacency):
        weights = {vid: compute_weight_factor(vid, snapshot, s_avg, adjacency) for vid in comp}
        remaining = set(comp)
        while remaining:
            head = _next_head(remaining, weights, prev_heads, prev_secondaries)
            head_pos = snapshot[head].position
            members = {
                vid
                for vid in remaining
                if vid == head
                or euclidean_distance(snapshot[vid].position, head_pos) <= radius
            }
            secondary = _pick_secondary(head, members, weights, prev_heads)
            records.append(
                ClusterRecord(
                    cluster_id=next_cluster_id(),
                    head=head,
                    secondary_head=secondary,
                    members={vid: now + life_timer for vid in members},
                    radius=radius,
                    parent=parent,
                )
            )
            remaining -= members
    return records


def _next_head(
    remaining: set[str],
    weights: dict[str, WeightFactor],
    prev_heads: dict[str, ClusterRecord],
    prev_secondaries: set[str],
) -> str:
    surviving_heads = sorted(vid for vid in remaining if vid in prev_heads)
    if surviving_heads:
        return surviving_heads[0]
    surviving_secondaries = sorted(vid for vid in remaining if vid in prev_secondaries)
    if surviving_secondaries:
        return surviving_secondaries[0]
    return select_cluster_heads({vid: weights[vid] for vid in remaining})[0]


def _pick_secondary(
    head: str,
    members: set[str],
    weights: dict[str, WeightFactor],
    prev_heads: dict[str, ClusterRecord],
) -> str | None:
    old = prev_heads.get(head)
    if old and old.secondary_head in members and old.secondary_head != head:
        return old.secondary_head
    rest = {vid: weights[vid] for vid in members if vid != head}
    return select_cluster_heads(rest)[0] if rest else None


def maintain(
    cluster: ClusterRecord,
    event: MaintenanceEvent,
    now: float,
    life_timer: float,
    election_weights: dict[str, WeightFactor] | None = None,
) -> ClusterRecord | None:
    """Apply one maintenance transition; returns None when the cluster dissolves.

    * node-entered: add the vehicle with a fresh life deadline.
    * member-exited: drop the vehicle; if it was the secondary head, a
      replacement is elected from the remaining non-head members.
    * head-failed: drop the head and promote the secondary; a new
      secondary is elected from the survivors. Membership is otherwise
      untouched (no re-clustering). Without a secondary the cluster
      dissolves and its members await the next formation cycle.

    ``election_weights`` must cover the surviving members whenever a
    (re-)election can occur.
    """
    if event.kind == "node-entered":
        members = dict(cluster.members)
        members[event.vehicle_id] = now + life_timer
        return replace(cluster, members=members)

    if event.kind == "member-exited":
        if event.vehicle_id == cluster.head:
            raise ValueError("head departure must be reported as head-failed")
        members = dict(cluster.members)
        members.pop(event.vehicle_id, None)
        if not members:
            return None
        secondary = cluster.secondary_head
        if event.vehicle_id == secondary:
            secondary = _elect_secondary(cluster.head, members, election_weights)
        return replace(cluster, members=members, secondary_head=secondary)

    if event.kind == "head-failed":
        members = dict(cluster.members)
        members.pop(cluster.head, None)
        if cluster.secondary_head is None or cluster.secondary_head not in members:
            return None
        new_head = cluster.secondary_head
        new_secondary = _elect_secondary(new_head, members, election_weights)
        return replace(cluster, head=new_head, secondary_head=new_secondary, members=members)

    raise ValueError(f"unknown maintenance event {event.kind!r}")


def _elect_secondary(
    head: str, members: dict[str, float], weights: dict[str, WeightFactor] | None
) -> str | None:
    rest = [vid for vid in members if vid != head]
    if not rest:
        return None
    if weights is None:
        raise ValueError("election weights required to pick a new secondary")
    return select_cluster_heads({vid: weights[vid] for vid in rest})[0]
