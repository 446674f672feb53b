import numpy as np
import pytest

from minepred.scene import AgentState, Footprint, Instance, SceneMap, Trajectory, make_instances, resample
from minepred.synth import synth_scenario


def straight_track(n=40, dt=0.5, v=5.0, theta=0.0, x0=0.0, y0=0.0, agent="a", footprint=None):
    states = [
        AgentState(t=i * dt, x=x0 + v * i * dt * np.cos(theta), y=y0 + v * i * dt * np.sin(theta), theta=theta, v=v)
        for i in range(n)
    ]
    return Trajectory(agent, tuple(states), footprint or Footprint())


def corridor_map(length=200.0, half_width=6.0):
    road = [(-length, -half_width), (length, -half_width), (length, half_width), (-length, half_width)]
    berm = [(-length, half_width + 2), (length, half_width + 2), (length, half_width + 6), (-length, half_width + 6)]
    return SceneMap(drivable=(road,), non_drivable=(berm,))


@pytest.fixture
def road_map():
    return corridor_map()


@pytest.fixture
def straight_instances(road_map):
    return make_instances(straight_track(), 6, 6, 1.0, 0.5, road_map)


@pytest.fixture(scope="session")
def crossroads_data():
    scene_map, trajs = synth_scenario("crossroads", 6, 3)
    instances = [i for t in trajs for i in make_instances(resample(t, 2.0), 6, 6, 1.0, 0.5, scene_map)]
    return scene_map, trajs, instances


def make_instance(history_xy, future_xy, scene_map=None, dt=0.5, pred_dt=1.0, iid="x"):
    hist = []
    for i, (x, y) in enumerate(history_xy):
        hist.append(AgentState(t=i * dt, x=x, y=y, theta=0.0, v=1.0))
    t_last = hist[-1].t
    fut_t = t_last + pred_dt * np.arange(1, len(future_xy) + 1)
    return Instance(tuple(hist), np.asarray(future_xy, float), fut_t, scene_map or SceneMap(), Footprint(), iid, "a")


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
