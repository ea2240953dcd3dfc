"""Importance-sampling trajectory refinement.

The planner fixes the macro-action; this stage resamples scenarios from a
coverage-ensuring proposal over intentions, rolls out candidate ego
trajectories (longitudinal speed variants of the planned action), replays
each candidate against every scenario's reactive exo-agents, and selects
the argmax of the importance-weighted value estimate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .driver import B_EMERGENCY, YAW_MAX, Intention, LF, PhysicalState, StyleParam, step_driver
from .inference import JointBelief
from .observation import AgentId
from .pomdp import (
    DT,
    ExoAgent,
    MacroAction,
    RewardWeights,
    Scenario,
    _bind_ego_intention,
    goal_distance,
    rectangles_overlap,
    scenario_key as _scenario_key,
    simulate,
    step_reward,
)
from .road import RoadNetwork
from .util import mix

SPEED_SCALES = (0.7, 0.85, 1.0)
DEDUP_DIST = 0.2  # m, max pointwise gap below which two trajectories merge
MAX_SOURCES = 6  # distinct scenarios used to seed candidate trajectories


@dataclass(frozen=True)
class Proposal:
    """Per-agent sampling distribution over intentions, absolutely
    continuous with respect to the filtered posterior."""

    per_agent: dict[AgentId, dict[Intention, float]]


@dataclass
class Candidate:
    states: list[PhysicalState]  # ego pose/speed per tick, dt = 0.2 s
    source_scenario: int
    speed_scale: float
    lc_initiated: bool = False

    @property
    def times(self) -> list[float]:
        return [(i + 1) * DT for i in range(len(self.states))]


@dataclass
class CrossEvaluation:
    values: list[list[float]]  # candidate x scenario V_i(tau)
    weights: list[float]  # importance weights w_i
    estimates: list[float]  # (1/n) sum_i w_i V_i per candidate
    selected: int


def build_proposal(belief: JointBelief, lambda_mix: float = 0.5) -> Proposal:
    """q(m) = (1 - lambda) p(m) + lambda * uniform over the agent's legal set."""
    per_agent = {}
    for aid, ab in belief.per_agent.items():
        legal = sorted(ab.intention_prob, key=lambda m: m.kind.value)
        u = 1.0 / len(legal)
        q = {m: (1.0 - lambda_mix) * ab.intention_prob[m] + lambda_mix * u for m in legal}
        assert all(q[m] > 0.0 for m in legal if ab.intention_prob[m] > 0.0)
        per_agent[aid] = q
    return Proposal(per_agent)


def resample(
    proposal: Proposal,
    belief: JointBelief,
    n_is: int,
    seed: int,
    ego: PhysicalState,
    ego_intention: Intention = LF,
) -> list[tuple[Scenario, float]]:
    """Draw n_is scenarios with m ~ q per agent and w_i = prod p(m)/q(m)."""
    out = []
    for i in range(n_is):
        rng = np.random.Generator(np.random.PCG64(mix(seed, 0x15A3F1E, i)))
        exos = []
        w = 1.0
        for aid in sorted(belief.per_agent):
            ab = belief.per_agent[aid]
            q = proposal.per_agent[aid]
            intents = sorted(q, key=lambda m: m.kind.value)
            probs = np.array([q[m] for m in intents])
            m = intents[rng.choice(len(intents), p=probs / probs.sum())]
            w *= ab.intention_prob[m] / q[m]
            ps = ab.particles[m]
            pw = np.array([p.weight for p in ps])
            p = ps[rng.choice(len(ps), p=pw / pw.sum())]
            exos.append(ExoAgent(aid, p.state, p.intention, p.style, p.connector_seed))
        sc = Scenario(
            ego=ego,
            exos=exos,
            noise_seed=mix(seed, 0x7AFF5EED, i),
            ego_intention=ego_intention,
        )
        out.append((sc, w))
    return out


def _close(a: Candidate, b: Candidate) -> bool:
    if len(a.states) != len(b.states):
        return False
    return all(
        math.hypot(p.x - q.x, p.y - q.y) < DEDUP_DIST for p, q in zip(a.states, b.states)
    )


def generate_candidates(
    scenarios: list[Scenario],
    planned_sequence: list[MacroAction],
    network: RoadNetwork,
    weights: RewardWeights = RewardWeights(),
    speed_scales: tuple = SPEED_SCALES,
) -> list[Candidate]:
    """Roll out the first planned macro-action per scenario and speed scale.

    Candidates differ only longitudinally (scaled desired speed); the
    lateral behavior stays the planner's choice. Near-identical
    trajectories are merged, and at most MAX_SOURCES distinct scenarios
    (in sampling order) seed candidates.
    """
    assert planned_sequence
    first = planned_sequence[0]
    out: list[Candidate] = []
    seen: set = set()
    for idx, sc in enumerate(scenarios):
        if len(seen) >= MAX_SOURCES:
            break
        key = _scenario_key(sc)
        if key in seen:  # an exact repeat yields the same trajectories
            continue
        seen.add(key)
        _, initiated = _bind_ego_intention(sc, first, network)
        for scale in speed_scales:
            style = StyleParam(
                v0=first.ego_style.v0 * scale, lookahead=first.ego_style.lookahead
            )
            action = MacroAction(first.kind, first.duration, style)
            sim = simulate(sc, action, network, weights, start_tick=0)
            cand = Candidate(
                [st for st, _ in sim.states], idx, scale, lc_initiated=initiated
            )
            if not any(_close(cand, kept) for kept in out):
                out.append(cand)
    return out


def is_feasible(cand: Candidate, tol: float = 1e-6) -> bool:
    """Per-tick acceleration and yaw-rate within the vehicle envelope."""
    for a, b in zip(cand.states, cand.states[1:]):
        if abs(b.speed - a.speed) / DT > B_EMERGENCY + tol:
            return False
        if abs(b.heading - a.heading) / DT > YAW_MAX + tol:
            return False
    return True


def replay_value(
    cand: Candidate,
    scenario: Scenario,
    network: RoadNetwork,
    weights: RewardWeights = RewardWeights(),
) -> float:
    """V_i(tau): ego follows tau verbatim, exo-agents react via their models.

    Mirrors the planner's simulator exactly (simultaneous stepping from the
    previous tick, discount from tick zero, early stop on collision).
    """
    exos = [
        ExoAgent(e.id, e.state, e.intention, e.style, e.connector_seed)
        for e in scenario.exos
    ]
    prev_ego = scenario.ego
    total = 0.0
    for i, ego_state in enumerate(cand.states):
        # same in-place peer-state bookkeeping as the forward simulator
        cur_states = [e.state for e in exos]
        for k, e in enumerate(exos):
            others = [prev_ego]
            others.extend(cur_states[:k])
            others.extend(cur_states[k + 1:])
            e.state, e.intention = step_driver(
                e.state, e.intention, e.style, others, network, DT,
                connector_seed=e.connector_seed,
            )
            cur_states[k] = e.state
        collided = any(rectangles_overlap(ego_state, e.state) for e in exos)
        d_goal = goal_distance(network, ego_state.lane)
        r = step_reward(
            ego_state.speed, d_goal, collided, cand.lc_initiated and i == 0, weights
        )
        total += (weights.gamma ** i) * r
        if collided:
            break
        prev_ego = ego_state
    return total


def cross_evaluate(
    candidates: list[Candidate],
    weighted_scenarios: list[tuple[Scenario, float]],
    network: RoadNetwork,
    weights: RewardWeights = RewardWeights(),
) -> tuple[CrossEvaluation, Candidate]:
    """Importance-weighted estimate E[V(tau)] = (1/n) sum_i w_i V_i(tau);
    returns the argmax candidate (ties: speed scale nearest 1.0, then
    lowest index)."""
    assert candidates and weighted_scenarios
    n = len(weighted_scenarios)
    # replay once per distinct scenario content; repeats share the value
    groups: dict[tuple, list[int]] = {}
    for idx, (sc, _) in enumerate(weighted_scenarios):
        groups.setdefault(_scenario_key(sc), []).append(idx)
    values = []
    estimates = []
    for cand in candidates:
        row = [0.0] * n
        for idxs in groups.values():
            v = replay_value(cand, weighted_scenarios[idxs[0]][0], network, weights)
            for i in idxs:
                row[i] = v
        values.append(row)
        estimates.append(sum(w * v for (_, w), v in zip(weighted_scenarios, row)) / n)
    best = max(
        range(len(candidates)),
        key=lambda i: (estimates[i], -abs(candidates[i].speed_scale - 1.0), -i),
    )
    ev = CrossEvaluation(
        values, [w for _, w in weighted_scenarios], estimates, best
    )
    return ev, candidates[best]


def refine(
    belief: JointBelief,
    ego: PhysicalState,
    planned_sequence: list[MacroAction],
    network: RoadNetwork,
    weights: RewardWeights = RewardWeights(),
    n_is: int = 30,
    lambda_mix: float = 0.5,
    seed: int = 0,
    ego_intention: Intention = LF,
) -> tuple[Candidate, CrossEvaluation]:
    """Full refinement pass: proposal, resampling, candidates, selection."""
    proposal = build_proposal(belief, lambda_mix)
    weighted = resample(proposal, belief, n_is, seed, ego, ego_intention)
    candidates = generate_candidates(
        [sc for sc, _ in weighted], planned_sequence, network, weights
    )
    ev, best = cross_evaluate(candidates, weighted, network, weights)
    return best, ev
