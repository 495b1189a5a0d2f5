import math

import numpy as np
import pytest

from jointdrive.sim import (Behavior, Controls, EpisodeLog, VehicleState, World, compute_metrics, expert_policy,
                            generate, load_scenario, rollout_labels, run_episode, save_scenario, suite)
from jointdrive.sim.episode import EmptyLogError, TickRecord, all_controls
from jointdrive.sim.geometry import wrap_angle
from jointdrive.sim.scenarios import ScenarioFormatError, scenario_from_dict, scenario_to_dict
from jointdrive.sim.world import MAX_SPEED, WHEELBASE, Scenario, advance


def lone_vehicle(speed=0.0, heading=0.0):
    return VehicleState(0, 0.0, 0.0, heading, speed)


def test_zero_controls_fixed_point():
    v = lone_vehicle(0.0, 0.3)
    out = advance(v, Controls())
    assert (out.x, out.y, out.heading, out.speed) == (v.x, v.y, v.heading, v.speed)


def test_straight_line_advance():
    out = advance(lone_vehicle(10.0, 0.0), Controls(0.0, 0.0, 0.0), 0.1)
    assert out.x == pytest.approx(1.0, abs=1e-12) and out.y == 0.0


def test_constant_steer_traces_circle():
    steer = 0.4
    delta = steer * math.radians(35.0)
    radius = WHEELBASE / math.tan(delta)
    v = VehicleState(0, 0.0, 0.0, 0.0, 5.0)
    cx, cy = 0.0, radius
    for _ in range(100):
        v = advance(v, Controls(steer, 0.0, 0.0))
        assert abs(math.hypot(v.x - cx, v.y - cy) - radius) < 1e-3
    # heading stays tangent to the circle
    assert wrap_angle(v.heading - (math.atan2(v.y - cy, v.x - cx) + math.pi / 2)) == pytest.approx(0.0, abs=1e-9)


def test_non_finite_control_rejected():
    with pytest.raises(ValueError):
        advance(lone_vehicle(), Controls(float("nan"), 0.0, 0.0).validate())


def test_speed_clamped():
    v = lone_vehicle(MAX_SPEED)
    assert advance(v, Controls(0.0, 1.0, 0.0)).speed == MAX_SPEED
    assert advance(lone_vehicle(0.1), Controls(0.0, 0.0, 1.0)).speed == 0.0


def test_vehicle_state_invariants():
    with pytest.raises(ValueError):
        VehicleState(0, 0.0, 0.0, 0.0, -1.0)
    with pytest.raises(ValueError):
        VehicleState(0, 0.0, 0.0, 0.0, 1.0, length=0.0)
    assert VehicleState(0, 0.0, 0.0, 3 * math.pi).heading == pytest.approx(math.pi)


# ------------------------------------------------------------------ expert
def with_lead(gap, ego_speed, lead_speed=0.0):
    base = generate("empty", 0)
    lead = VehicleState(1, 4.5 + gap, base.vehicles[0].y, 0.0, lead_speed)
    ego = VehicleState(0, 0.0, base.vehicles[0].y, 0.0, ego_speed)
    routes = dict(base.routes)
    routes[1] = base.routes[0]
    return Scenario(seed=0, kind="custom", lanes=base.lanes, vehicles=[ego, lead], routes=routes, max_time=20.0,
                    hard_brake={1: 0.0})  # the leader stays parked


def test_expert_free_flow():
    world = World(generate("empty", 3))
    c, b = expert_policy(world, 0)
    assert c.throttle > 0 and c.brake == 0 and abs(c.steer) < 1e-6
    assert b == Behavior.GO_STRAIGHT


def test_expert_idm_equilibrium_at_min_gap():
    # at rest exactly s0 behind a stopped leader, IDM acceleration is exactly zero
    c, b = expert_policy(World(with_lead(2.0, 0.0)), 0)
    assert c.throttle == pytest.approx(0.0, abs=1e-12) and c.brake == pytest.approx(0.0, abs=1e-12)
    assert b == Behavior.FOLLOWING


def test_expert_stops_behind_stopped_leader():
    world = World(with_lead(2.0, 3.0))
    c, _ = expert_policy(world, 0)
    assert c.brake > 0
    log = run_episode(world.scenario, max_time=10.0)
    assert not [e for e in log.events() if e.startswith("collision")]
    final = {st["id"]: st for st in log.records[-1].states}
    assert final[0]["speed"] == pytest.approx(0.0, abs=1e-6)
    assert final[1]["x"] - final[0]["x"] > 4.5  # bumpers never touched


def test_expert_requires_route():
    sc = with_lead(10.0, 0.0)
    del sc.routes[1]
    with pytest.raises(KeyError):
        expert_policy(World(sc), 1)


def test_left_turn_label():
    sc = next(sc for sc in (generate("intersection", 1, i) for i in range(60))
              if "S_in>W_out" in sc.routes[0].lanes)
    route = sc.routes[0]
    world = World(sc)
    world.progress[0] = float(route._point_s[route.lanes.index("S_in>W_out")]) - 5.0
    assert expert_policy(world, 0)[1] == Behavior.TURN_LEFT


# ------------------------------------------------------------------ labels
def test_labels_stationary():
    sc = generate("empty", 0)
    sc.vehicles[0].speed = 0.0
    sc.hard_brake[0] = 0.0  # scripted full brake keeps the vehicle parked
    np.testing.assert_array_equal(rollout_labels(World(sc), 0, T=10), np.zeros((10, 2)))


def test_labels_uniform_motion(monkeypatch):
    from jointdrive.sim import episode
    sc = generate("empty", 0)
    sc.vehicles[0].speed = 5.0
    monkeypatch.setattr(episode, "background_controls", lambda w, vid: Controls())
    labels = rollout_labels(World(sc), 0, T=10, dt_wp=0.5)
    k = np.arange(1, 11)
    np.testing.assert_allclose(labels, np.column_stack([2.5 * k, np.zeros(10)]), atol=1e-9)


def test_labels_match_brute_force_resimulation():
    sc = generate("intersection", 2, 5)
    world = World(sc)
    for _ in range(30):
        world = world.step(all_controls(world))
    labels = rollout_labels(world, 0, T=10, dt_wp=0.5)
    w = world.clone()
    pts = []
    for tick in range(1, 51):
        w = w.step(all_controls(w))
        if tick % 5 == 0:
            v = w.vehicles[0]
            pts.append((v.x, v.y))
    me = world.vehicles[0]
    c, s = math.cos(me.heading), math.sin(me.heading)
    oracle = [((x - me.x) * c + (y - me.y) * s, -(x - me.x) * s + (y - me.y) * c) for x, y in pts]
    np.testing.assert_array_equal(labels, np.array(oracle))


# ----------------------------------------------------------------- metrics
def make_log(progress, events=()):
    log = EpisodeLog(0, "custom", 100.0)
    log.records.append(TickRecord(0.1, [], {}, list(events), progress))
    return log


def test_metrics_examples():
    assert compute_metrics(make_log(1.0)) == (100.0, 1.0, 100.0)
    rc, is_, ds = compute_metrics(make_log(1.0, ["collision:0-3"]))
    assert ds == pytest.approx(60.0, abs=1e-12)
    assert compute_metrics(make_log(0.5))[0::2] == (50.0, 50.0)
    assert compute_metrics(make_log(1.0, ["collision:2-3"]))[1] == 1.0  # background crash does not count
    assert compute_metrics(make_log(1.0, ["stop_violation:S_signal"]))[2] == pytest.approx(80.0)
    with pytest.raises(EmptyLogError):
        compute_metrics(EpisodeLog(0, "x", 1.0))


# ----------------------------------------------------------- suite checks
@pytest.fixture(scope="module")
def smoke_logs():
    scs = suite(0, 20)
    labels = set()
    logs = []
    for sc in scs:
        logs.append(run_episode(sc, on_tick=lambda w: labels.add(expert_policy(w, 0)[1])))
    return scs, logs, labels


def test_expert_is_collision_free(smoke_logs):
    _, logs, _ = smoke_logs
    assert sum(1 for log in logs for e in log.events() if e.startswith("collision")) == 0


def test_no_teleporting_and_monotone_log(smoke_logs):
    scs, logs, _ = smoke_logs
    for sc, log in zip(scs, logs):
        prev = {v.id: (v.x, v.y) for v in sc.vehicles}
        t_prev, p_prev = 0.0, 0.0
        for rec in log.records:
            assert rec.t > t_prev and rec.progress >= p_prev
            t_prev, p_prev = rec.t, rec.progress
            for st in rec.states:
                x0, y0 = prev[st["id"]]
                assert math.hypot(st["x"] - x0, st["y"] - y0) <= MAX_SPEED * 0.1 + 1e-6
                prev[st["id"]] = (st["x"], st["y"])


def test_behavior_label_coverage():
    labels = set()
    for sc in suite(0, 30):
        run_episode(sc, on_tick=lambda w: labels.add(expert_policy(w, 0)[1]))
        if len(labels) == 6:
            break
    assert labels == set(Behavior)


def test_episode_determinism():
    sc = generate("intersection", 4, 2)
    a, b = run_episode(sc), run_episode(generate("intersection", 4, 2))
    assert [r.states for r in a.records] == [r.states for r in b.records]


def test_scenario_json_round_trip(tmp_path):
    sc = generate("intersection", 5, 1)
    save_scenario(sc, tmp_path / "s.json")
    back = load_scenario(tmp_path / "s.json")
    assert scenario_to_dict(back) == scenario_to_dict(sc)
    assert [r.states for r in run_episode(back, max_time=3.0).records] == \
        [r.states for r in run_episode(sc, max_time=3.0).records]
    bad = scenario_to_dict(sc)
    bad["schema_version"] = 99
    with pytest.raises(ScenarioFormatError):
        scenario_from_dict(bad)


def test_episode_log_jsonl(tmp_path):
    log = run_episode(generate("straight", 1, 0), max_time=2.0)
    log.to_jsonl(tmp_path / "log.jsonl")
    back = EpisodeLog.from_jsonl(tmp_path / "log.jsonl")
    assert back == log
    assert len((tmp_path / "log.jsonl").read_text().splitlines()) == len(log.records) + 1


def test_initial_states_non_overlapping():
    for sc in suite(3, 30):
        vs = sc.vehicles
        for i in range(len(vs)):
            for j in range(i + 1, len(vs)):
                assert math.hypot(vs[i].x - vs[j].x, vs[i].y - vs[j].y) > vs[i].radius + vs[j].radius
