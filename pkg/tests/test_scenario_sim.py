import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import nearest_distance
from roadmcl.distance_field import lookup_many
from roadmcl.errors import ConfigError, MapStructureError
from roadmcl.map_model import GeoPoint, MapPoint, RoadGraph, Way
from roadmcl.measurement_model import KINDS, DistanceFunctionSpec, score_pose
from roadmcl.motion_model import apply_control, integrate_odometry
from roadmcl.scenario_sim import (
    ScenarioConfig,
    build_scenario,
    generate_trajectory,
    load_replay,
    save_scenario,
    scan_rng,
    synthesize_scan,
)

SQUARE = {1: MapPoint(0, 0), 2: MapPoint(100, 0), 3: MapPoint(100, 100), 4: MapPoint(0, 100)}


def graph(ways, nodes=SQUARE):
    return RoadGraph.from_ways(nodes, [Way(i, tuple(w), "residential") for i, w in ways], GeoPoint(0, 0))


def dead_reckon(start, controls):
    e, n, th = start
    out = [(e, n, th)]
    for u in controls:
        e, n, th = apply_control(e, n, th, u)
        out.append((e, n, th))
    return np.array(out)


class TestTrajectory:
    def test_straight_segment(self):
        g = graph([(1, (1, 2))])
        tr = generate_trajectory(g, ScenarioConfig(route=(1,), speed=10.0, step_dt=1.0))
        assert len(tr) == 10
        np.testing.assert_allclose(np.diff(tr.poses[:, 0]), 10.0)
        assert np.all(tr.poses[:, 1] == 0) and np.all(tr.poses[:, 2] == 0)

    def test_square_loop(self):
        g = graph([(1, (1, 2, 3, 4, 1))])
        tr = generate_trajectory(g, ScenarioConfig(route=(1,), speed=10.0, step_dt=1.0))
        assert math.dist(tr.poses[-1, :2], tr.poses[0, :2]) <= 10.0
        assert tr.headings_unwrapped[-1] - tr.headings_unwrapped[0] == pytest.approx(2 * math.pi)
        steps = np.hypot(*np.diff(tr.poses[:, :2], axis=0).T)
        np.testing.assert_allclose(steps, 10.0, rtol=0.01)

    def test_l_shape_arc_length(self):
        nodes = {1: MapPoint(0, 0), 2: MapPoint(100, 0), 3: MapPoint(100, 60)}
        g = graph([(1, (1, 2)), (2, (3, 2))], nodes)
        tr = generate_trajectory(g, ScenarioConfig(route=(1, 2), speed=5.0, step_dt=1.0))
        assert tr.arc_length() == pytest.approx(160.0, rel=0.01)
        np.testing.assert_allclose(tr.poses[-1, :2], [100, 60], atol=1e-9)

    def test_route_reversal_and_errors(self):
        g = graph([(1, (1, 2)), (2, (3, 4))])
        with pytest.raises(MapStructureError):
            generate_trajectory(g, ScenarioConfig(route=(1, 2)))
        with pytest.raises(MapStructureError):
            generate_trajectory(g, ScenarioConfig(route=(1, 9)))
        tr = generate_trajectory(graph([(1, (2, 1))]), ScenarioConfig(route=(1,), speed=20.0))
        assert tr.poses[0, 0] == 100.0 and tr.poses[-1, 0] == 0.0

    def test_route_shorter_than_a_step(self):
        with pytest.raises(ConfigError):
            generate_trajectory(graph([(1, (1, 2))]), ScenarioConfig(route=(1,), speed=200.0))

    def test_random_route_on_fixture(self, rural_map):
        cfg = ScenarioConfig(route_length=2000.0, speed=6.0, seed=4)
        tr = generate_trajectory(rural_map, cfg)
        assert len(tr) == int(2000 / 6)
        steps = np.hypot(*np.diff(tr.poses[:, :2], axis=0).T)
        assert steps.max() <= 6.0 + 1e-9
        assert np.median(steps) == pytest.approx(6.0, rel=0.01)
        d = [nearest_distance(rural_map.segments, e, n) for e, n, _ in tr.poses[::10]]
        assert max(d) < 1e-6

    def test_odometry_dead_reckons(self):
        nodes = {1: MapPoint(0, 0), 2: MapPoint(300, 400)}
        g = graph([(1, (1, 2))], nodes)
        cfg = ScenarioConfig(route=(1,), speed=5.0, odom_speed_sigma=0.0, odom_steer_sigma=0.0)
        sc = build_scenario(g, cfg)
        rp = sc.to_replay()
        dr = dead_reckon(rp.gt[0], rp.controls)
        drift = np.hypot(*(dr[:, :2] - rp.gt[:, :2]).T)
        assert drift[-1] < 0.5 * 500 / 100
        assert drift.max() < 1e-6

    def test_odometry_on_curvy_route(self, rural_map):
        cfg = ScenarioConfig(route_length=1000.0, speed=6.0, seed=1, odom_speed_sigma=0.0, odom_steer_sigma=0.0)
        tr = generate_trajectory(rural_map, cfg)
        controls = [integrate_odometry(tr.odometry(k), cfg.wheelbase) for k in range(len(tr))]
        dr = dead_reckon(tr.poses[0], controls)
        assert np.hypot(*(dr[:, :2] - tr.poses[:, :2]).T).max() < 1e-6

    def test_odometry_bias(self):
        g = graph([(1, (1, 2))])
        tr = generate_trajectory(g, ScenarioConfig(route=(1,), odom_bias=0.1, odom_speed_sigma=0.0))
        np.testing.assert_allclose(tr.odom_v, 6.6)

    @pytest.mark.parametrize("kw", [{"label_flip_prob": 1.5}, {"speed": 0.0}, {"step_dt": -1.0},
                                    {"nonroad_fraction": -0.1}, {"fov_deg": 0.0}])
    def test_config_validation(self, kw):
        with pytest.raises(ConfigError):
            ScenarioConfig(**kw)

    def test_config_from_dict(self):
        cfg = ScenarioConfig.from_dict({"route": [3, 4], "speed": 6})
        assert cfg.route == (3, 4)
        assert ScenarioConfig.from_dict(cfg.to_dict()) == cfg
        with pytest.raises(ConfigError) as exc:
            ScenarioConfig.from_dict({"sped": 6})
        assert exc.value.field == "sped"


@pytest.fixture(scope="module")
def drive(rural_map):
    cfg = ScenarioConfig(route_length=1500.0, speed=6.0, seed=2, label_flip_prob=0.0)
    return generate_trajectory(rural_map, cfg), cfg


class TestScan:
    def test_road_points_near_edges(self, rural_map, rural_field, drive):
        tr, cfg = drive
        limit = 3 * cfg.road_point_lateral_sigma
        for k in range(0, len(tr), 25):
            z = synthesize_scan(tr.poses[k], rural_map, cfg, scan_rng(cfg.seed, k))
            e, n, th = tr.poses[k]
            pe = e + z.a * math.cos(th) - z.b * math.sin(th)
            pn = n + z.a * math.sin(th) + z.b * math.cos(th)
            road = z.c == 1
            assert road.sum() == 120
            assert np.all(lookup_many(rural_field, pe[road], pn[road]) <= limit + math.sqrt(2) + 1e-9)
            exact = np.array([nearest_distance(rural_map.segments, a, b) for a, b in zip(pe, pn)])
            assert np.all(exact[road] <= limit + 1e-9)
            assert np.all(exact[~road] >= cfg.nonroad_min_offset - 1e-9)
            assert np.all(np.hypot(z.a, z.b) <= cfg.sensor_range + 1e-9)
            assert np.all(z.a >= -1e-9)

    def test_full_flip_inverts_labels(self, rural_map, drive):
        tr, cfg = drive
        flipped = ScenarioConfig(**{**cfg.to_dict(), "label_flip_prob": 1.0})
        a = synthesize_scan(tr.poses[40], rural_map, cfg, scan_rng(7, 40))
        b = synthesize_scan(tr.poses[40], rural_map, flipped, scan_rng(7, 40))
        np.testing.assert_array_equal(a.points[:, :2], b.points[:, :2])
        np.testing.assert_array_equal(a.c, 1 - b.c)

    def test_flip_rate(self, rural_map, drive):
        tr, cfg = drive
        noisy = ScenarioConfig(**{**cfg.to_dict(), "label_flip_prob": 0.2, "points_per_scan": 5000})
        a = synthesize_scan(tr.poses[10], rural_map, ScenarioConfig(**{**noisy.to_dict(), "label_flip_prob": 0.0}),
                            scan_rng(1, 10))
        b = synthesize_scan(tr.poses[10], rural_map, noisy, scan_rng(1, 10))
        assert abs(np.mean(a.c != b.c) - 0.2) < 0.02

    def test_seeded_scans_repeat(self, rural_map, drive):
        tr, cfg = drive
        a = synthesize_scan(tr.poses[5], rural_map, cfg, scan_rng(3, 5))
        b = synthesize_scan(tr.poses[5], rural_map, cfg, scan_rng(3, 5))
        c = synthesize_scan(tr.poses[5], rural_map, cfg, scan_rng(3, 6))
        assert np.array_equal(a.points, b.points)
        assert not np.array_equal(a.points, c.points)

    def test_no_roads_in_range(self, rural_map):
        cfg = ScenarioConfig(label_flip_prob=0.0)
        z = synthesize_scan((5000.0, 5000.0, 0.0), rural_map, cfg, scan_rng(0, 1))
        assert len(z) == cfg.points_per_scan
        assert np.all(z.c == 0)

    @settings(max_examples=60, deadline=None)
    @given(k=st.integers(0, 249), offset=st.floats(50.0, 300.0), side=st.sampled_from([-1.0, 1.0]),
           kind=st.sampled_from(KINDS))
    def test_lateral_separation(self, rural_map, rural_field, drive, k, offset, side, kind):
        tr, cfg = drive
        e, n, th = tr.poses[k]
        z = synthesize_scan(tr.poses[k], rural_map, cfg, scan_rng(cfg.seed, k))
        spec = DistanceFunctionSpec(kind)
        moved = (e - side * offset * math.sin(th), n + side * offset * math.cos(th), th)
        assert score_pose(tr.poses[k], z, rural_field, spec) >= score_pose(moved, z, rural_field, spec)


class TestReplayFiles:
    def test_round_trip(self, tmp_path, rural_map):
        sc = build_scenario(rural_map, ScenarioConfig(route_length=200.0, speed=6.0, seed=3))
        save_scenario(sc, tmp_path, {"map": "rural.osm"})
        meta = json.loads((tmp_path / "scenario.json").read_text())
        assert meta["seed"] == 3 and meta["map"] == "rural.osm" and meta["steps"] == len(sc.truth)
        assert len(list((tmp_path / "clouds").glob("*.csv"))) == len(sc.truth)
        rp = load_replay(tmp_path)
        mem = sc.to_replay()
        np.testing.assert_array_equal(rp.gt, mem.gt)
        assert rp.controls == mem.controls
        for a, b in zip(rp.clouds, mem.clouds):
            np.testing.assert_array_equal(a.points, b.points)

    def test_save_is_deterministic(self, tmp_path, rural_map):
        cfg = ScenarioConfig(route_length=100.0, seed=8)
        for name in ("a", "b"):
            save_scenario(build_scenario(rural_map, cfg), tmp_path / name)
        files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*.csv"))
        assert files
        for f in files:
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_bad_groundtruth_header(self, tmp_path, rural_map):
        save_scenario(build_scenario(rural_map, ScenarioConfig(route_length=50.0)), tmp_path)
        (tmp_path / "groundtruth.csv").write_text("step,x,y\n0,1,2\n")
        with pytest.raises(ConfigError):
            load_replay(tmp_path)
