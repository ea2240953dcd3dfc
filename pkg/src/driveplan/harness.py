"""Closed-loop episode simulator, metrics, traces, and batch runner.

The loop each tick: extract a noisy observation of the true exo-agents,
update the belief, run the tree search and the trajectory refinement, move
the ego one tick along the refined trajectory, and step the exo-agents
with their ground-truth models. Everything is a pure function of
(spec, config, seed).
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace

from .config import Config
from .driver import (
    LC_DONE_D,
    LC_DONE_HEADING,
    Intention,
    IntentionKind,
    LF,
    make_state,
    step_driver,
)
from .inference import init_belief, ml_hypothesis, posterior_style_mean, update
from .planner import Budget, plan
from .pomdp import (
    DT,
    ExoAgent,
    Scenario,
    extract_observation,
    goal_distance,
    rectangles_overlap,
    step_reward,
)
from .refine import build_proposal, cross_evaluate, generate_candidates, resample
from .road import RoadNetwork
from .scenes import ScenarioSpec, build_network, ground_truth_agents
from .util import mix, wrap_angle

COMFORT_ACCEL = 2.5  # m/s^2
COMFORT_JERK = 4.0  # m/s^3


@dataclass
class EpisodeMetrics:
    reward: float  # undiscounted cumulative step reward over the true trace
    collided: bool
    missed_goal: bool
    time_to_goal: float | None  # s; sustained on goal lane to episode end
    comfort: float  # fraction of comfortable ticks, in [0, 1]

    def to_dict(self) -> dict:
        return asdict(self)


def compute_comfort(accels: list[float], dt: float = DT) -> float:
    """Fraction of ticks with |accel| <= 2.5 m/s^2 and |jerk| <= 4 m/s^3."""
    assert len(accels) >= 2
    ok = 0
    total = 0
    prev = accels[0]
    for a in accels[1:]:
        jerk = (a - prev) / dt
        total += 1
        if abs(a) <= COMFORT_ACCEL and abs(jerk) <= COMFORT_JERK:
            ok += 1
        prev = a
    return ok / total


def _state_dict(st) -> dict:
    return {
        "x": st.x, "y": st.y, "heading": st.heading, "speed": st.speed,
        "accel": st.accel, "lane": st.lane, "s": st.s, "d": st.d,
    }


def _belief_summary(belief) -> dict:
    out = {}
    for aid, ab in sorted(belief.per_agent.items()):
        style = posterior_style_mean(ab)
        out[str(aid)] = {
            "intention": {
                f"{m.kind.name}:{m.target_lane}": p
                for m, p in sorted(ab.intention_prob.items(), key=lambda kv: kv[0].kind.value)
            },
            "v0_mean": style.v0,
            "lookahead_mean": style.lookahead,
        }
    return out


def _ml_scenario(belief, ego, ego_intention, noise_seed) -> Scenario:
    """Single maximum-likelihood determinization (the wo_unc ablation)."""
    exos = []
    for aid in sorted(belief.per_agent):
        m, p = ml_hypothesis(belief.per_agent[aid])
        exos.append(ExoAgent(aid, p.state, p.intention, p.style, p.connector_seed))
    return Scenario(ego=ego, exos=exos, noise_seed=noise_seed, ego_intention=ego_intention)


def _maybe_collapse(network: RoadNetwork, state, intention: Intention) -> Intention:
    """Mirror the driver models' lane-change completion rule for the ego."""
    if intention.kind == IntentionKind.LF:
        return intention
    anchor = network.lanes[state.lane]
    tid = intention.target_lane
    if state.lane != tid and anchor.left_neighbor != tid and anchor.right_neighbor != tid:
        return LF  # target no longer adjacent (it ended at a split)
    target = network.lanes[intention.target_lane]
    st, d = target.project_local(state.x, state.y)
    _, tangent = target.point_at(st)
    if abs(d) < LC_DONE_D and abs(wrap_angle(state.heading - tangent)) < LC_DONE_HEADING:
        state.lane, state.s, state.d = target.id, st, d
        return LF
    return intention


def run_episode(
    spec: ScenarioSpec, config: Config = Config(), seed: int = 0
) -> tuple[EpisodeMetrics, list[dict]]:
    """Run one closed-loop episode; returns metrics and the tick trace.

    The trace is a list of plain dicts (one header record, then one record
    per tick) ready for line-delimited serialization.
    """
    network = spec.validate()
    cfg, overrides = config.resolved()
    noise = cfg.observation_noise()
    fcfg = cfg.filter_config()
    weights = cfg.reward_weights()
    budget = Budget(cfg.max_expansions, cfg.max_ms)

    master = mix(spec.seed, seed)
    world_noise_seed = mix(master, 0xB0B)

    ego = make_state(network, (spec.ego_x, spec.ego_y), spec.ego_heading, spec.ego_speed)
    ego_intention: Intention = LF
    exos = ground_truth_agents(spec, network)

    trace: list[dict] = [
        {
            "record": "header",
            "spec": spec.name,
            "variant": cfg.variant,
            "variant_overrides": overrides,
            "config": cfg.to_dict(),
            "seed": seed,
            "master_seed": master,
        }
    ]

    obs = extract_observation({e.id: e.state for e in exos}, world_noise_seed, 0, noise)
    belief = init_belief(obs, network, fcfg, seed=mix(master, 1)) if exos else None

    def on_goal(state) -> bool:
        # same goal test the reward uses: zero lateral hops remaining
        return goal_distance(network, state.lane) == 0.0 and abs(state.d) < LC_DONE_D

    total_reward = 0.0
    collided = False
    accels: list[float] = [ego.accel]
    on_goal_since: float | None = 0.0 if on_goal(ego) else None
    n_ticks = spec.n_ticks()

    for tick in range(n_ticks):
        # --- plan ------------------------------------------------------
        if exos and cfg.variant == "wo_unc":
            plan_scenarios = [_ml_scenario(belief, ego, ego_intention, mix(master, 2, tick))]
        elif exos:
            plan_scenarios = None
        else:
            plan_scenarios = [Scenario(ego=ego, exos=[], noise_seed=mix(master, 2, tick),
                                       ego_intention=ego_intention)]
        tree = plan(
            belief,
            ego,
            network,
            weights,
            budget=budget,
            K=cfg.k_scenarios,
            horizon_s=cfg.horizon_s,
            seed=mix(master, 2, tick),
            ego_intention=ego_intention,
            noise=noise,
            lambda_reg=cfg.lambda_reg,
            scenarios=plan_scenarios,
        )

        # --- refine ----------------------------------------------------
        if exos and cfg.variant == "wo_unc":
            weighted = [(plan_scenarios[0], 1.0)]
        elif exos:
            proposal = build_proposal(belief, cfg.lambda_mix)
            weighted = resample(
                proposal, belief, cfg.n_is, mix(master, 3, tick), ego, ego_intention
            )
        else:
            weighted = [(plan_scenarios[0], 1.0)]
        candidates = generate_candidates(
            [sc for sc, _ in weighted], tree.most_likely_sequence or [tree.root_action],
            network, weights,
        )
        ev, best = cross_evaluate(candidates, weighted, network, weights)

        # --- act: consume the refined trajectory for one tick ----------
        bound_intention, _ = _bind(tree.root_action, ego, ego_intention, network)
        new_ego = replace(best.states[0])
        new_intention = _maybe_collapse(network, new_ego, bound_intention)

        # --- world advances (exo-agents react to the previous-tick ego)
        prev_ego = ego
        for k, e in enumerate(exos):
            others = [prev_ego] + [x.state for j, x in enumerate(exos) if j != k]
            e.state, e.intention = step_driver(
                e.state, e.intention, e.style, others, network, DT,
                connector_seed=e.connector_seed,
            )
        ego = new_ego
        ego_intention = new_intention

        tick_collided = any(rectangles_overlap(ego, e.state) for e in exos)
        d_goal = goal_distance(network, ego.lane)
        r = step_reward(ego.speed, d_goal, tick_collided, False, weights)
        total_reward += r
        accels.append(ego.accel)

        t_now = (tick + 1) * DT
        if on_goal(ego):
            if on_goal_since is None:
                on_goal_since = t_now
        else:
            on_goal_since = None

        obs = extract_observation(
            {e.id: e.state for e in exos}, world_noise_seed, tick + 1, noise
        )
        if exos:
            belief, _ = update(belief, obs, DT, network, fcfg, seed=mix(master, 4, tick))

        trace.append(
            {
                "record": "tick",
                "tick": tick,
                "t": t_now,
                "ego": _state_dict(ego),
                "ego_intention": ego_intention.kind.name,
                "exos": {str(e.id): _state_dict(e.state) for e in exos},
                "obs": {
                    str(aid): [oa.x, oa.y, oa.heading, oa.speed]
                    for aid, oa in sorted(obs.agents.items())
                },
                "belief": _belief_summary(belief) if exos else {},
                "planner": {
                    "action": tree.root_action.kind.name,
                    "expansions": tree.expansions,
                    "lower": tree.root_lower,
                    "upper": tree.root_upper,
                    "sequence": [a.kind.name for a in tree.most_likely_sequence],
                },
                "refined": {
                    "speed_scale": best.speed_scale,
                    "estimate": ev.estimates[ev.selected],
                    "n_candidates": len(candidates),
                },
                "collided": tick_collided,
                "reward": r,
            }
        )
        if tick_collided:
            collided = True
            break

    on_goal_now = on_goal(ego)
    metrics = EpisodeMetrics(
        reward=total_reward,
        collided=collided,
        missed_goal=not (on_goal_now and not collided),
        time_to_goal=(on_goal_since if (on_goal_now and not collided) else None),
        comfort=compute_comfort(accels),
    )
    trace.append({"record": "metrics", **metrics.to_dict()})
    return metrics, trace


def _bind(action, ego, ego_intention, network):
    from .pomdp import _bind_ego_intention

    sc = Scenario(ego=ego, exos=[], noise_seed=0, ego_intention=ego_intention)
    return _bind_ego_intention(sc, action, network)


def write_trace(trace: list[dict], path):
    with open(path, "w") as fh:
        for rec in trace:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


@dataclass
class BatchRow:
    variant: str
    episodes: int
    mean_reward: float
    collision_rate: float  # percent
    miss_goal_rate: float  # percent
    mean_ttg: float | None  # over episodes that reached the goal
    mean_comfort: float


def run_batch(
    specs: list[ScenarioSpec],
    variants: list[str],
    seeds: list[int],
    config: Config = Config(),
) -> list[BatchRow]:
    """Run every (spec, seed) episode per variant and aggregate."""
    rows = []
    for variant in variants:
        cfg = replace(config, variant=variant)
        results = [
            run_episode(spec, cfg, seed)[0] for spec in specs for seed in seeds
        ]
        n = len(results)
        ttgs = [m.time_to_goal for m in results if m.time_to_goal is not None]
        rows.append(
            BatchRow(
                variant=variant,
                episodes=n,
                mean_reward=sum(m.reward for m in results) / n,
                collision_rate=100.0 * sum(m.collided for m in results) / n,
                miss_goal_rate=100.0 * sum(m.missed_goal for m in results) / n,
                mean_ttg=(sum(ttgs) / len(ttgs)) if ttgs else None,
                mean_comfort=sum(m.comfort for m in results) / n,
            )
        )
    return rows


def batch_csv(rows: list[BatchRow]) -> str:
    header = "variant,episodes,mean_reward,coll_rate_pct,mgr_pct,mean_ttg_s,mean_comfort"
    lines = [header]
    for r in rows:
        ttg = f"{r.mean_ttg:.2f}" if r.mean_ttg is not None else ""
        lines.append(
            f"{r.variant},{r.episodes},{r.mean_reward:.4f},{r.collision_rate:.2f},"
            f"{r.miss_goal_rate:.2f},{ttg},{r.mean_comfort:.4f}"
        )
    return "\n".join(lines) + "\n"
