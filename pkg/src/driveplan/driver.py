"""Closed-loop parametric driver models.

Two behaviors cover urban driving here: lane / lane-connector following
(LF) and lane changes to either side (LC-L / LC-R). Longitudinal control
is IDM, lateral control is pure pursuit on a reference lane polyline, and
MOBIL provides the classic gap-acceptance decision rule. The same models
serve as exo-agent hypotheses and as ego macro-actions.
"""
from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field
from enum import Enum

from .road import Lane, LaneId, RoadNetwork, lane_change_distance, project
from .util import clamp, mix, wrap_angle

VEHICLE_LENGTH = 4.5
VEHICLE_WIDTH = 2.0


class DriverError(Exception):
    pass


class IllegalIntention(DriverError):
    """Lane change toward a lane that does not exist."""


class DeadEnd(DriverError):
    """LF reached a lane with no successor."""


class IntentionKind(Enum):
    LF = 0
    LC_L = 1
    LC_R = 2


@dataclass(frozen=True, slots=True)
class Intention:
    kind: IntentionKind
    target_lane: LaneId | None = None  # set for LC kinds at commitment


LF = Intention(IntentionKind.LF)


@dataclass(frozen=True, slots=True)
class StyleParam:
    """Continuous style: IDM desired speed (LF) and pursuit lookahead (LC)."""

    v0: float = 10.0
    lookahead: float = 6.0


#: style bounds (v0 in m/s, lookahead in m)
V0_BOUNDS = (2.0, 20.0)
LOOKAHEAD_BOUNDS = (3.0, 15.0)


@dataclass(frozen=True, slots=True)
class IdmParams:
    a: float = 1.5  # max accel, m/s^2
    b: float = 2.0  # comfortable decel, m/s^2
    s0: float = 2.0  # min gap, m
    T: float = 1.5  # time headway, s
    delta: float = 4.0
    # derived: 2*sqrt(a*b), the denominator of the dynamic gap term
    two_sqrt_ab: float = field(init=False, repr=False, compare=False, default=0.0)

    def __post_init__(self):
        object.__setattr__(self, "two_sqrt_ab", 2.0 * math.sqrt(self.a * self.b))


DEFAULT_IDM = IdmParams()
B_EMERGENCY = 6.0  # hard-brake bound, m/s^2
YAW_MAX = 1.5  # rad/s
LF_LOOKAHEAD = 6.0  # fixed lookahead for LF, m
GAP_EPS = 0.1  # degenerate-gap clamp, m
END_STOP_RANGE = 100.0  # m; a dead-end road edge starts acting as an obstacle

# LC completion thresholds
LC_DONE_D = 0.3  # m from target centerline
LC_DONE_HEADING = 0.1  # rad from target tangent


@dataclass(slots=True)
class PhysicalState:
    """Kinematic state of one agent, with its lane-frame anchor."""

    x: float
    y: float
    heading: float
    speed: float
    accel: float = 0.0
    yaw_rate: float = 0.0
    lane: LaneId = 0
    s: float = 0.0
    d: float = 0.0

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)


def make_state(
    network: RoadNetwork,
    position: tuple[float, float],
    heading: float,
    speed: float,
    hint: LaneId | None = None,
) -> PhysicalState:
    """Build a PhysicalState with a consistent lane anchor."""
    lane, s, d = project(network, position, hint)
    return PhysicalState(position[0], position[1], heading, speed, lane=lane, s=s, d=d)


def idm_accel(
    v: float,
    v0: float,
    gap: float,
    lead_speed: float = 0.0,
    params: IdmParams = DEFAULT_IDM,
    b_emergency: float = B_EMERGENCY,
) -> float:
    """IDM acceleration; gap=inf means free road. Clamped to [-b_emergency, a]."""
    if params.delta == 4.0:
        r = v / v0
        r *= r
        free = 1.0 - r * r
    else:
        free = 1.0 - (v / v0) ** params.delta
    if math.isinf(gap):
        acc = params.a * free
    else:
        gap = max(gap, GAP_EPS)
        dv = v - lead_speed
        # dynamic part clamped at 0 so a fast leader cannot shrink s* below s0;
        # keeps the law monotone in (v, gap, lead_speed)
        dyn = v * params.T + v * dv / params.two_sqrt_ab
        s_star = params.s0 + max(0.0, dyn)
        acc = params.a * (free - (s_star / gap) ** 2)
    return clamp(acc, -b_emergency, params.a)


class RefPath:
    """A chain of lanes concatenated into one arc-length reference path."""

    __slots__ = ("lane_ids", "offsets", "lanes", "length", "_segs")

    def __init__(self, lanes: list[Lane]):
        self.lane_ids = tuple(ln.id for ln in lanes)
        self.lanes = lanes
        self.offsets: dict[LaneId, float] = {}
        off = 0.0
        for ln in lanes:
            self.offsets[ln.id] = off
            off += ln.length
        self.length = off
        self._segs = [(self.offsets[ln.id], ln) for ln in lanes]

    def point_at(self, s: float) -> tuple[tuple[float, float], float]:
        s = clamp(s, 0.0, self.length)
        for off, ln in self._segs:
            if s <= off + ln.length:
                return ln.point_at(clamp(s - off, 0.0, ln.length))
        off, ln = self._segs[-1]
        return ln.point_at(clamp(s - off, 0.0, ln.length))

    def point_xy(self, s: float) -> tuple[float, float]:
        """Centerline point at arc length s, without the tangent heading.

        Same arithmetic as point_at; kept separate because the steering
        loop only needs the point and this path is very hot.
        """
        s = clamp(s, 0.0, self.length)
        for off, ln in self._segs:
            if s <= off + ln.length:
                break
        else:
            off, ln = self._segs[-1]
        sl = clamp(s - off, 0.0, ln.length)
        cum = ln.cum
        if len(cum) == 2:
            i = 0
        else:
            i = bisect_right(cum, sl) - 1
            if i >= len(ln.seg_heading):
                i = len(ln.seg_heading) - 1
        t = sl - cum[i]
        x0, y0 = ln.centerline[i]
        ux, uy = ln.seg_unit[i]
        return x0 + t * ux, y0 + t * uy

    def project(self, x: float, y: float) -> tuple[float, float]:
        """(s, d) of the closest point over the whole chain."""
        best = None
        for ln in self.lanes:
            s, d = ln.project_local(x, y)
            if best is None or abs(d) < abs(best[1]):
                best = (self.offsets[ln.id] + s, d)
        assert best is not None
        return best

    def arc_of(self, state: PhysicalState) -> float | None:
        """Arc position of an agent anchored on one of the chain's lanes."""
        off = self.offsets.get(state.lane)
        if off is None:
            return None
        return off + state.s


def select_connector(
    state: PhysicalState,
    network: RoadNetwork,
    goal: LaneId | None = None,
    rng_seed: int = 0,
) -> LaneId:
    """Pick the successor lane to follow past the end of the current lane.

    Goal-directed (min lane hops to goal, ties to lowest id) when a goal is
    given; otherwise a fixed uniform draw from (rng_seed, lane id).
    """
    succ = network.lanes[state.lane].successors
    return _choose_successor(state.lane, succ, network, goal, rng_seed)


def _choose_successor(lane_id, succ, network, goal, rng_seed) -> LaneId:
    if not succ:
        raise DeadEnd(f"lane {lane_id} has no successor")
    if len(succ) == 1:
        return succ[0]
    if goal is not None:
        return min(succ, key=lambda lid: (lane_change_distance(network, lid, goal), lid))
    return succ[mix(rng_seed, lane_id) % len(succ)]


REF_MIN_LENGTH = 80.0  # m of path kept ahead of the end of the anchor lane


def reference_path(
    network: RoadNetwork,
    start_lane: LaneId,
    goal: LaneId | None,
    rng_seed: int,
    min_length: float = REF_MIN_LENGTH,
) -> RefPath:
    """Reference path from start_lane, extended along chosen successors.

    The chain covers the whole start lane plus at least min_length beyond
    its end (where successors exist), so an agent anywhere on the start
    lane always has min_length of path ahead to steer toward.
    """
    ref_key = (start_lane, goal, rng_seed, min_length)
    cached = network._ref_cache.get(ref_key)
    if cached is not None:
        return cached
    chain = [start_lane]
    length = network.lanes[start_lane].length
    need = length + min_length
    while length < need:
        succ = network.lanes[chain[-1]].successors
        if not succ:
            break
        nxt = _choose_successor(chain[-1], succ, network, goal, rng_seed)
        if nxt in chain:
            break  # loop guard
        chain.append(nxt)
        length += network.lanes[nxt].length
    key = tuple(chain)
    path = network._path_cache.get(key)
    if path is None:
        path = RefPath([network.lanes[lid] for lid in chain])
        network._path_cache[key] = path
    network._ref_cache[ref_key] = path
    return path


def pure_pursuit_yaw(
    state: PhysicalState,
    path: RefPath,
    lookahead: float,
    yaw_max: float = YAW_MAX,
    s_here: float | None = None,
) -> float:
    """Yaw-rate command steering toward the point `lookahead` ahead on path.

    Callers that already know the arc position (from the lane anchor) pass
    s_here to skip the projection.
    """
    if s_here is None:
        s_here, _ = path.project(state.x, state.y)
    tx, ty = path.point_xy(s_here + lookahead)
    alpha = wrap_angle(math.atan2(ty - state.y, tx - state.x) - state.heading)
    kappa = 2.0 * math.sin(alpha) / lookahead
    return clamp(kappa * state.speed, -yaw_max, yaw_max)


def _leader_on_path(
    path: RefPath, arc_self: float, neighbors, vehicle_length: float = VEHICLE_LENGTH
) -> tuple[float, float]:
    """(gap, lead_speed) to the nearest agent ahead on the path, or (inf, 0)."""
    best_gap = math.inf
    best_speed = 0.0
    offsets = path.offsets
    for other in neighbors:
        off = offsets.get(other.lane)
        if off is None:
            continue
        arc = off + other.s
        if arc <= arc_self:
            continue
        gap = arc - arc_self - vehicle_length
        if gap < best_gap:
            best_gap = gap
            best_speed = other.speed
    return best_gap, best_speed


def _dead_end_gap(path: RefPath, arc_self: float) -> float:
    """Gap to a virtual stopped car at a successor-less path end, or inf.

    Keeps every agent on the network: without it, rollouts near a road
    edge drive past the last centerline point and lose their lane anchor.
    """
    if path.lanes[-1].successors:
        return math.inf
    gap = path.length - arc_self - VEHICLE_LENGTH
    return gap if gap < END_STOP_RANGE else math.inf


def mobil_decide(
    subject: PhysicalState,
    subject_v0: float,
    neighbors: list[PhysicalState],
    direction: IntentionKind,
    network: RoadNetwork,
    politeness: float = 0.5,
    accel_threshold: float = 0.2,
    b_safe: float = 3.0,
    params: IdmParams = DEFAULT_IDM,
) -> bool:
    """MOBIL gap-acceptance check for a lane change in `direction`.

    Safety: the would-be new follower must not need to brake harder than
    b_safe. Incentive: own IDM gain plus politeness-weighted gains of both
    followers must strictly exceed the threshold. Unknown desired speeds of
    other drivers are proxied by their current speeds.
    """
    lane = network.lanes[subject.lane]
    target_id = lane.left_neighbor if direction == IntentionKind.LC_L else lane.right_neighbor
    if target_id is None:
        return False
    target = network.lanes[target_id]

    def split(lane_obj):
        """Leader / follower of the subject's abeam position on lane_obj."""
        s_subj, _ = lane_obj.project_local(subject.x, subject.y)
        leader = follower = None
        lead_gap = fol_gap = math.inf
        for other in neighbors:
            if other.lane != lane_obj.id:
                continue
            if other.s > s_subj:
                gap = other.s - s_subj - VEHICLE_LENGTH
                if gap < lead_gap:
                    leader, lead_gap = other, gap
            else:
                gap = s_subj - other.s - VEHICLE_LENGTH
                if gap < fol_gap:
                    follower, fol_gap = other, gap
        return leader, lead_gap, follower, fol_gap

    def acc(agent, v0, gap, lead_speed):
        return idm_accel(agent.speed, v0, gap, lead_speed, params=params)

    def proxy_v0(agent):
        return max(agent.speed, 1.0)

    cur_leader, cur_gap, cur_fol, cur_fol_gap = split(lane)
    new_leader, new_gap, new_fol, new_fol_gap = split(target)
    cur_lead_speed = cur_leader.speed if cur_leader else 0.0
    new_lead_speed = new_leader.speed if new_leader else 0.0

    # safety: braking imposed on the would-be new follower
    if new_fol is not None:
        if acc(new_fol, proxy_v0(new_fol), new_fol_gap, subject.speed) < -b_safe:
            return False

    gain_own = acc(subject, subject_v0, new_gap, new_lead_speed) - acc(
        subject, subject_v0, cur_gap, cur_lead_speed
    )

    gain_others = 0.0
    if new_fol is not None:
        # before: the new follower tails the subject's new leader
        before_gap = new_fol_gap + VEHICLE_LENGTH + new_gap
        before = acc(new_fol, proxy_v0(new_fol), before_gap, new_lead_speed)
        after = acc(new_fol, proxy_v0(new_fol), new_fol_gap, subject.speed)
        gain_others += after - before
    if cur_fol is not None:
        # after: the old follower inherits the subject's current leader
        after_gap = cur_fol_gap + VEHICLE_LENGTH + cur_gap
        before = acc(cur_fol, proxy_v0(cur_fol), cur_fol_gap, subject.speed)
        after = acc(cur_fol, proxy_v0(cur_fol), after_gap, cur_lead_speed)
        gain_others += after - before

    return gain_own + politeness * gain_others > accel_threshold


def integrate_unicycle(
    state: PhysicalState, accel: float, yaw_rate: float, dt: float
) -> PhysicalState:
    """One unicycle tick; speed clamped at zero (no reversing)."""
    nx = state.x + state.speed * dt * math.cos(state.heading)
    ny = state.y + state.speed * dt * math.sin(state.heading)
    nh = wrap_angle(state.heading + yaw_rate * dt)
    nv = max(0.0, state.speed + accel * dt)
    return PhysicalState(nx, ny, nh, nv, accel, yaw_rate, state.lane, state.s, state.d)


def legal_intentions(network: RoadNetwork, lane_id: LaneId) -> list[Intention]:
    """Intentions realizable from a lane: LF always, LCs where neighbors exist."""
    lane = network.lanes[lane_id]
    out = [LF]
    if lane.left_neighbor is not None:
        out.append(Intention(IntentionKind.LC_L, lane.left_neighbor))
    if lane.right_neighbor is not None:
        out.append(Intention(IntentionKind.LC_R, lane.right_neighbor))
    return out


def step_driver(
    state: PhysicalState,
    intention: Intention,
    style: StyleParam,
    neighbors: list[PhysicalState],
    network: RoadNetwork,
    dt: float,
    goal_lane: LaneId | None = None,
    connector_seed: int = 0,
    idm_params: IdmParams = DEFAULT_IDM,
) -> tuple[PhysicalState, Intention]:
    """Advance one agent by dt under its driver model.

    LF follows the current lane (and chosen connectors) with pure pursuit
    and IDM toward style.v0. LC pursues the target-lane centerline with
    lookahead style.lookahead while IDM follows the most constraining
    leader across current and target paths. Returns the new state and the
    (possibly collapsed) intention; a finished lane change becomes LF.

    Pure function: identical inputs give bit-identical outputs.
    """
    if not 0.0 < dt <= 0.5:
        raise DriverError(f"dt={dt} outside (0, 0.5]")

    # the body below inlines reference_path's cache probe, arc_of,
    # _dead_end_gap, pure_pursuit_yaw and integrate_unicycle: this function
    # is the innermost loop of every simulation and rollout
    own_path = network._ref_cache.get(
        (state.lane, goal_lane, connector_seed, REF_MIN_LENGTH)
    )
    if own_path is None:
        own_path = reference_path(network, state.lane, goal_lane, connector_seed)
    off = own_path.offsets.get(state.lane)
    if off is not None:
        arc_self = off + state.s
    else:  # anchor drifted off the chain; re-project
        arc_self, _ = own_path.project(state.x, state.y)

    if intention.kind != IntentionKind.LF:
        tid = intention.target_lane
        if tid is None or tid not in network.lanes:
            raise IllegalIntention(f"{intention.kind.name} without a valid target lane")
        anchor = network.lanes[state.lane]
        if state.lane != tid and anchor.left_neighbor != tid and anchor.right_neighbor != tid:
            # target no longer reachable laterally (e.g., it ended at a
            # split while the change was underway); steering toward its
            # clamped endpoint would spiral, so give up the change
            intention = LF

    steer_arc = arc_self
    if intention.kind == IntentionKind.LF:
        steer_path = own_path
        lookahead = LF_LOOKAHEAD
        gap, lead_speed = _leader_on_path(own_path, arc_self, neighbors)
    else:
        steer_path = reference_path(network, intention.target_lane, goal_lane, connector_seed)
        lookahead = style.lookahead
        gap, lead_speed = _leader_on_path(own_path, arc_self, neighbors)
        t_arc, _ = steer_path.project(state.x, state.y)
        steer_arc = t_arc
        t_gap, t_speed = _leader_on_path(steer_path, t_arc, neighbors)
        # most constraining of current-lane and target-lane leaders
        if idm_accel(state.speed, style.v0, t_gap, t_speed, idm_params) < idm_accel(
            state.speed, style.v0, gap, lead_speed, idm_params
        ):
            gap, lead_speed = t_gap, t_speed

    if not own_path.lanes[-1].successors:
        end_gap = own_path.length - arc_self - VEHICLE_LENGTH
        if end_gap < END_STOP_RANGE and end_gap < gap:
            gap, lead_speed = end_gap, 0.0

    accel = idm_accel(state.speed, style.v0, gap, lead_speed, idm_params)

    tx, ty = steer_path.point_xy(steer_arc + lookahead)
    alpha = wrap_angle(math.atan2(ty - state.y, tx - state.x) - state.heading)
    kappa = 2.0 * math.sin(alpha) / lookahead
    yaw = clamp(kappa * state.speed, -YAW_MAX, YAW_MAX)

    speed = state.speed
    heading = state.heading
    new = PhysicalState(
        state.x + speed * dt * math.cos(heading),
        state.y + speed * dt * math.sin(heading),
        wrap_angle(heading + yaw * dt),
        max(0.0, speed + accel * dt),
        accel,
        yaw,
        state.lane,
        state.s,
        state.d,
    )

    # re-anchor; the common case (still inside the same lane, not clamped at
    # its end) is resolved inline, everything else falls back to the full
    # tiered projection
    ln = network.lanes[state.lane]
    s, d = ln.project_local(new.x, new.y)
    if (d if d >= 0.0 else -d) <= ln.width * 0.5 and not (
        s >= ln.length - 1e-9 and ln.successors
    ):
        new.lane, new.s, new.d = state.lane, s, d
    else:
        lane, s, d = project(network, (new.x, new.y), hint=state.lane)
        new.lane, new.s, new.d = lane, s, d

    if intention.kind != IntentionKind.LF:
        target = network.lanes[intention.target_lane]
        st, dtgt = target.project_local(new.x, new.y)
        _, tangent = target.point_at(st)
        if abs(dtgt) < LC_DONE_D and abs(wrap_angle(new.heading - tangent)) < LC_DONE_HEADING:
            intention = LF
            new.lane, new.s, new.d = target.id, st, dtgt
    return new, intention
