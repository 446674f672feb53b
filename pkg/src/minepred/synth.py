"""Seeded generator of small mining-road scenes for desk-scale experiments.

A scene is a junction (or a bent straight road) built from corridor "arms"
radiating from a common centre. Arms are 8-15 m wide and deliberately not
perpendicular. Agents enter on one arm, pick an exit arm uniformly at
random, and drive a jittered lane path with a trapezoidal speed profile.
T-junction traffic always enters on the stem and turns left or right.
"""

from __future__ import annotations

import math

import numpy as np

from .geometry import convex_hull
from .scene import MINING_TRUCK, PICKUP, AgentState, SceneMap, Trajectory

KINDS = ("straight", "t_junction", "crossroads")
SAMPLE_HZ = 10
V_MIN, V_MAX = 3.0, 12.0


class _Arm:
    def __init__(self, angle: float, width: float, length: float):
        self.angle = angle
        self.width = width
        self.length = length
        self.u = np.array([math.cos(angle), math.sin(angle)])
        self.n = np.array([-self.u[1], self.u[0]])

    def point(self, s: float, lateral: float) -> np.ndarray:
        return s * self.u + lateral * self.n

    def rectangle(self) -> np.ndarray:
        h = self.width / 2.0
        return np.array([self.point(0.0, -h), self.point(self.length, -h), self.point(self.length, h), self.point(0.0, h)])


def _jitter_deg(rng, lo: float, hi: float) -> float:
    return math.radians(rng.uniform(lo, hi)) * rng.choice([-1.0, 1.0])


def _arm_angles(kind: str, rng) -> list[float]:
    base = rng.uniform(-math.pi, math.pi)
    if kind == "straight":
        return [base, base + math.pi + _jitter_deg(rng, 8.0, 20.0)]
    if kind == "t_junction":
        return [
            base,
            base + math.pi / 2 + _jitter_deg(rng, 8.0, 20.0),
            base - math.pi / 2 + _jitter_deg(rng, 8.0, 20.0),
        ]
    if kind == "crossroads":
        return [base + i * math.pi / 2 + _jitter_deg(rng, 5.0, 15.0) for i in range(4)]
    raise ValueError(f"unknown scenario kind {kind!r}; expected one of {', '.join(KINDS)}")


def _berms(arms: list[_Arm], core_radius: float) -> list[np.ndarray]:
    """Non-drivable strips running beside each arm, kept clear of every corridor."""
    strips = []
    for arm in arms:
        for side in (-1.0, 1.0):
            lo_lat = side * (arm.width / 2.0 + 1.5)
            hi_lat = side * (arm.width / 2.0 + 4.5)
            s0 = core_radius + 12.0
            s1 = arm.length - 2.0
            if s1 - s0 < 5.0:
                continue
            strip = np.array([arm.point(s0, lo_lat), arm.point(s1, lo_lat), arm.point(s1, hi_lat), arm.point(s0, hi_lat)])
            if side > 0:
                strip = strip[::-1]
            if not any(_overlaps_corridor(strip, other) for other in arms if other is not arm):
                strips.append(strip)
    return strips


def _overlaps_corridor(poly: np.ndarray, arm: _Arm, margin: float = 1.0) -> bool:
    # sample the strip densely and test against the other arm's rectangle
    pts = []
    for a, b in zip(poly, np.roll(poly, -1, axis=0)):
        for f in np.linspace(0.0, 1.0, 25):
            pts.append(a + f * (b - a))
    pts = np.array(pts)
    s = pts @ arm.u
    lat = pts @ arm.n
    return bool(np.any((s > -margin) & (s < arm.length + margin) & (np.abs(lat) < arm.width / 2.0 + margin)))


def _build_map(kind: str, rng) -> tuple[SceneMap, list[_Arm], float]:
    angles = _arm_angles(kind, rng)
    arms = [_Arm(a, rng.uniform(8.0, 15.0), rng.uniform(65.0, 85.0)) for a in angles]
    core_radius = 0.9 * max(a.width for a in arms)
    corners = []
    for arm in arms:
        corners.append(arm.point(core_radius, -arm.width / 2.0))
        corners.append(arm.point(core_radius, arm.width / 2.0))
    core = convex_hull(np.array(corners))
    drivable = [core] + [arm.rectangle() for arm in arms]
    scene = SceneMap(
        drivable=tuple(drivable),
        non_drivable=tuple(_berms(arms, core_radius)),
        origin_note=f"synthetic {kind}: origin at junction centre",
        origin={"note": f"synthetic {kind}: origin at junction centre", "kind": kind},
    )
    return scene, arms, core_radius


def _lane_path(entry: _Arm, exit_: _Arm, core_radius: float, rng, spacing: float = 0.25) -> np.ndarray:
    """Dense polyline: inbound lane on ``entry``, quadratic turn through the centre, outbound lane on ``exit_``."""
    amp = rng.uniform(0.0, 0.5)
    wavelength = rng.uniform(25.0, 50.0)
    phase = rng.uniform(0.0, 2.0 * math.pi)
    bias = rng.uniform(-0.4, 0.4)

    def wobble(s):
        # fades out on approach to the core so the turn starts on the lane line
        envelope = np.clip((s - core_radius) / 10.0, 0.0, 1.0)
        return envelope * (bias + amp * np.sin(2.0 * math.pi * s / wavelength + phase))

    start = entry.length - 3.0
    s_in = np.arange(start, core_radius, -spacing)
    inbound = np.array([entry.point(s, entry.width / 4.0 + w) for s, w in zip(s_in, wobble(s_in))])

    p0 = entry.point(core_radius, entry.width / 4.0)
    p2 = exit_.point(core_radius, -exit_.width / 4.0)
    ctrl = np.zeros(2)
    approx = np.linalg.norm(p0 - ctrl) + np.linalg.norm(p2 - ctrl)
    f = np.linspace(0.0, 1.0, max(int(approx / spacing), 8))[:, None]
    turn = (1 - f) ** 2 * p0 + 2 * (1 - f) * f * ctrl + f**2 * p2

    s_out = np.arange(core_radius, exit_.length - 3.0, spacing)
    outbound = np.array([exit_.point(s, -exit_.width / 4.0 - w) for s, w in zip(s_out, wobble(s_out))])
    return np.vstack([inbound, turn[1:-1], outbound])


def _speed_profile(length: float, rng) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Arc length, speed and acceleration at 10 Hz for a trapezoidal profile."""
    v0 = rng.uniform(V_MIN, 6.0)
    v_end = rng.uniform(V_MIN, 6.0)
    v_cruise = rng.uniform(8.0, V_MAX)
    acc = rng.uniform(0.6, 1.5)
    dec = rng.uniform(0.6, 1.5)
    # lower the cruise speed when the path is too short for both ramps
    while (v_cruise**2 - v0**2) / (2 * acc) + (v_cruise**2 - v_end**2) / (2 * dec) > length and v_cruise > max(v0, v_end):
        v_cruise = max(v_cruise - 0.1, max(v0, v_end))

    def speed(s):
        up = math.sqrt(v0**2 + 2 * acc * max(s, 0.0))
        down = math.sqrt(max(v_end**2 + 2 * dec * (length - s), 0.0))
        return min(up, v_cruise, down)

    def accel(s):
        up = math.sqrt(v0**2 + 2 * acc * max(s, 0.0))
        down = math.sqrt(max(v_end**2 + 2 * dec * (length - s), 0.0))
        v = min(up, v_cruise, down)
        if v == up and up < v_cruise:
            return acc
        if v == down and down < v_cruise:
            return -dec
        return 0.0

    fine_dt = 0.01
    sub = int(round(1.0 / (SAMPLE_HZ * fine_dt)))
    s_samples, v_samples, a_samples = [], [], []
    s, i = 0.0, 0
    while s < length:
        if i % sub == 0:
            s_samples.append(s)
            v_samples.append(speed(s))
            a_samples.append(accel(s))
        # midpoint step
        k1 = speed(s)
        s += fine_dt * speed(s + 0.5 * fine_dt * k1)
        i += 1
    v = np.clip(np.array(v_samples), V_MIN, V_MAX)
    return np.array(s_samples), v, np.array(a_samples)


def _sample_path(path: np.ndarray, s_query: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    seg = np.linalg.norm(np.diff(path, axis=0), axis=1)
    arclen = np.concatenate([[0.0], np.cumsum(seg)])
    x = np.interp(s_query, arclen, path[:, 0])
    y = np.interp(s_query, arclen, path[:, 1])
    tangent = np.gradient(path, arclen, axis=0)
    heading = np.unwrap(np.arctan2(tangent[:, 1], tangent[:, 0]))
    theta = np.interp(s_query, arclen, heading)
    return np.stack([x, y], axis=1), theta


def _drive(agent_id: str, entry: _Arm, exit_: _Arm, core_radius: float, rng, tick0: int) -> Trajectory:
    path = _lane_path(entry, exit_, core_radius, rng)
    total = float(np.sum(np.linalg.norm(np.diff(path, axis=0), axis=1)))
    s, v, a = _speed_profile(total, rng)
    xy, theta = _sample_path(path, s)
    t = (tick0 + np.arange(len(s))) / SAMPLE_HZ
    omega = np.gradient(theta, t) if len(t) > 1 else np.zeros_like(t)
    footprint = MINING_TRUCK if rng.random() < 0.25 else PICKUP
    states = tuple(
        AgentState(t=t[i], x=xy[i, 0], y=xy[i, 1], theta=theta[i], v=v[i], a=a[i], omega=omega[i]) for i in range(len(t))
    )
    return Trajectory(agent_id, states, footprint)


def synth_scenario(kind: str, n_agents: int, seed: int) -> tuple[SceneMap, list[Trajectory]]:
    """Generate a polygon map and ``n_agents`` 10 Hz trajectories.

    Args:
        kind: One of ``"straight"``, ``"t_junction"``, ``"crossroads"``.
        n_agents: Number of trajectories, at least 1.
        seed: Seed for every random choice; equal seeds give identical output.

    Returns:
        ``(scene_map, trajectories)``. Every generated position lies inside a
        drivable polygon and outside all non-drivable ones.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown scenario kind {kind!r}; expected one of {', '.join(KINDS)}")
    if n_agents < 1:
        raise ValueError("n_agents must be at least 1")
    rng = np.random.default_rng(seed)
    scene, arms, core_radius = _build_map(kind, rng)

    trajectories = []
    for idx in range(n_agents):
        # T-junction traffic approaches along the stem and turns left or right
        entry = 0 if kind == "t_junction" else int(rng.integers(len(arms)))
        choices = [j for j in range(len(arms)) if j != entry]
        exit_ = choices[int(rng.integers(len(choices)))]
        tick0 = int(rng.integers(0, 200))
        trajectories.append(_drive(f"agent{idx:04d}", arms[entry], arms[exit_], core_radius, rng, tick0))
    return scene, trajectories
