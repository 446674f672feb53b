import re

import numpy as np
import pytest

from conftest import corridor_map, make_instance
from minepred.evaluation import Prediction, feasibility_filter
from minepred.plot import mode_opacity, render_svg


@pytest.fixture
def case():
    scene_map = corridor_map()
    hist = np.column_stack([np.arange(-30, 0, 5.0), np.zeros(6)])
    fut = np.column_stack([np.arange(5, 35, 5.0), np.zeros(6)])
    inst = make_instance(hist, fut, scene_map)
    modes = np.stack([fut, fut + [0, 2.0], fut + [0, 10.0]])  # last mode runs over the berm
    return inst, Prediction(inst.id, modes, np.array([0.5, 0.3, 0.2])), scene_map


def test_element_counts(case):
    inst, pred, _ = case
    svg = render_svg(inst, pred)
    assert svg.count('class="mode"') == 3
    assert svg.count('class="gt"') == 1
    assert 'stroke="#d00000"' in svg and 'stroke="#00a000"' in svg
    assert ">0.50</text>" in svg


def test_opacity_follows_probability(case):
    inst, pred, _ = case
    svg = render_svg(inst, pred)
    found = dict(re.findall(r'data-prob="([\d.]+)".*?stroke-opacity="([\d.]+)"', svg))
    assert found == {"0.5000": "1.000", "0.3000": "0.700", "0.2000": "0.550"}
    assert mode_opacity(0.0, 1.0) == 0.25 and mode_opacity(1.0, 1.0) == 1.0


def test_infeasible_mode_dashed(case):
    inst, pred, scene_map = case
    filtered = feasibility_filter(pred, scene_map)
    assert filtered.infeasible == (False, False, True)
    svg = render_svg(inst, filtered)
    dashed = [line for line in svg.splitlines() if "stroke-dasharray" in line]
    assert len(dashed) == 1 and 'data-mode="2"' in dashed[0]
    assert "stroke-dasharray" not in render_svg(inst, pred)


def test_byte_identical(case):
    inst, pred, _ = case
    assert render_svg(inst, pred) == render_svg(inst, pred)


def test_layers_colored(case):
    inst, pred, _ = case
    svg = render_svg(inst, pred)
    assert 'class="drivable"' in svg and 'fill="#e6e6e6"' in svg
    assert 'class="non-drivable"' in svg and 'fill="#3a3a3a"' in svg
