import math

import numpy as np
import pytest

from minepred.geometry import is_simple, point_in_any
from minepred.scene import make_instances, resample
from minepred.synth import KINDS, SAMPLE_HZ, V_MAX, V_MIN, synth_scenario


def _all_points(trajs):
    return np.vstack([t.positions for t in trajs])


def test_deterministic():
    a_map, a = synth_scenario("straight", 1, 42)
    b_map, b = synth_scenario("straight", 1, 42)
    assert all(np.array_equal(p, q) for p, q in zip(a_map.drivable, b_map.drivable))
    assert [s for s in a[0].states] == [s for s in b[0].states]
    _, c = synth_scenario("straight", 1, 43)
    assert not np.array_equal(a[0].positions[:5], c[0].positions[:5])


@pytest.mark.parametrize("kind", KINDS)
def test_map_and_trajectory_invariants(kind):
    scene_map, trajs = synth_scenario(kind, 10, 5)
    for poly in (*scene_map.drivable, *scene_map.non_drivable):
        assert len(poly) >= 3 and is_simple(poly) and np.all(np.isfinite(poly))
    for traj in trajs:
        dt = np.diff(traj.times)
        assert np.allclose(dt, 1 / SAMPLE_HZ, atol=1e-6)
        v = np.array([s.v for s in traj.states])
        assert v.min() >= V_MIN - 1e-9 and v.max() <= V_MAX + 1e-9
        theta = np.array([s.theta for s in traj.states])
        assert np.all((theta > -math.pi) & (theta <= math.pi))
        assert all(np.isfinite([s.x, s.y, s.theta, s.v, s.a, s.omega]).all() for s in traj.states)


def test_crossroads_positions_on_road():
    scene_map, trajs = synth_scenario("crossroads", 20, 7)
    pts = _all_points(trajs)
    assert point_in_any(pts, scene_map.drivable).all()
    assert not point_in_any(pts, scene_map.non_drivable).any()


def test_corridor_widths():
    for kind in KINDS:
        scene_map, _ = synth_scenario(kind, 1, 11)
        for poly in scene_map.drivable:
            edges = np.linalg.norm(np.diff(np.vstack([poly, poly[:1]]), axis=0), axis=1)
            # arm rectangles: two short edges give the width
            if len(poly) == 4:
                assert 8.0 - 1e-9 <= edges.min() <= 15.0 + 1e-9


def test_t_junction_branches_balanced():
    _, trajs = synth_scenario("t_junction", 100, 3)
    turns = []
    for traj in trajs:
        h0, h1 = traj.states[0].theta, traj.states[-1].theta
        turns.append(math.sin(h1 - h0) > 0)
    left = sum(turns) / len(turns)
    assert 0.35 <= left <= 0.65


def test_windows_come_out_of_the_generator():
    _, trajs = synth_scenario("crossroads", 3, 1)
    inst = [i for t in trajs for i in make_instances(resample(t, 2), 6, 6, 1.0)]
    assert inst and all(i.k == 6 and i.horizon == 6 for i in inst)


def test_errors():
    with pytest.raises(ValueError, match="unknown scenario kind"):
        synth_scenario("roundabout", 1, 0)
    with pytest.raises(ValueError):
        synth_scenario("straight", 0, 0)
