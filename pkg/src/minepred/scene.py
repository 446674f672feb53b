"""Scene data: agent states, trajectories, polygon maps, instances and splits.

All containers are frozen dataclasses. Numeric arrays stored on them are
marked read-only so that instances can be shared freely between workers.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .geometry import as_polygon, is_simple

EARTH_RADIUS_M = 6_378_137.0
LOG_FIELDS = ("t", "agent_id", "x", "y", "theta", "v", "a", "omega")
# optional per-agent footprint columns; absent or empty means the pickup default
FOOTPRINT_FIELDS = ("length", "width")


def wrap_angle(theta: float) -> float:
    """Wrap an angle to the half-open interval (-pi, pi]."""
    wrapped = math.remainder(theta, 2.0 * math.pi)
    if wrapped <= -math.pi:
        wrapped += 2.0 * math.pi
    return wrapped


def _frozen(arr, dtype=np.float64) -> np.ndarray:
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class AgentState:
    """Pose and kinematics of one vehicle at one timestamp (SI units)."""

    t: float
    x: float
    y: float
    theta: float
    v: float = 0.0
    a: float = 0.0
    omega: float = 0.0

    def __post_init__(self):
        values = (self.t, self.x, self.y, self.theta, self.v, self.a, self.omega)
        if not all(math.isfinite(float(val)) for val in values):
            raise ValueError(f"non-finite agent state: {values}")
        for name in ("t", "x", "y", "v", "a", "omega"):
            object.__setattr__(self, name, float(getattr(self, name)))
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])

    @property
    def kinematics(self) -> tuple[float, float, float]:
        return (self.v, self.a, self.omega)

    def as_array(self) -> np.ndarray:
        return np.array([self.t, self.x, self.y, self.theta, self.v, self.a, self.omega])

    @classmethod
    def from_array(cls, row) -> "AgentState":
        return cls(*map(float, row))


@dataclass(frozen=True)
class Footprint:
    length: float = 5.0
    width: float = 2.5

    def __post_init__(self):
        if not (self.length > 0 and self.width > 0):
            raise ValueError(f"footprint dimensions must be positive, got {self.length} x {self.width}")


PICKUP = Footprint(5.0, 2.5)
MINING_TRUCK = Footprint(9.0, 5.0)


@dataclass(frozen=True)
class Trajectory:
    agent_id: str
    states: tuple
    footprint: Footprint = PICKUP

    def __post_init__(self):
        states = tuple(self.states)
        if not states:
            raise ValueError("trajectory must contain at least one state")
        times = np.array([s.t for s in states])
        if np.any(np.diff(times) <= 0):
            raise ValueError(f"timestamps of agent {self.agent_id!r} are not strictly increasing")
        object.__setattr__(self, "states", states)

    def __len__(self) -> int:
        return len(self.states)

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])

    @property
    def positions(self) -> np.ndarray:
        return np.array([[s.x, s.y] for s in self.states])


@dataclass(frozen=True, eq=False)
class SceneMap:
    """Drivable / non-drivable polygon layers in a local metric frame."""

    drivable: tuple = ()
    non_drivable: tuple = ()
    origin_note: str = ""
    origin: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        layers = []
        for name in ("drivable", "non_drivable"):
            polys = []
            for idx, raw in enumerate(getattr(self, name)):
                poly = as_polygon(raw)
                if len(poly) < 3:
                    raise ValueError(f"{name}[{idx}] needs at least 3 vertices")
                if not np.all(np.isfinite(poly)):
                    raise ValueError(f"{name}[{idx}] has non-finite coordinates")
                if not is_simple(poly):
                    raise ValueError(f"{name}[{idx}] is self-intersecting")
                polys.append(_frozen(poly))
            layers.append(tuple(polys))
        object.__setattr__(self, "drivable", layers[0])
        object.__setattr__(self, "non_drivable", layers[1])

    def transformed(self, rot: np.ndarray, shift) -> "SceneMap":
        """Apply ``p -> rot @ p + shift`` to every vertex."""
        shift = np.asarray(shift, dtype=np.float64)
        return SceneMap(
            drivable=tuple(p @ rot.T + shift for p in self.drivable),
            non_drivable=tuple(p @ rot.T + shift for p in self.non_drivable),
            origin_note=self.origin_note,
            origin=dict(self.origin),
        )


EMPTY_MAP = SceneMap()


@dataclass(frozen=True, eq=False)
class Instance:
    """One sample: ``k`` history states, ``H`` future positions, map and footprint."""

    history: tuple
    future: np.ndarray
    future_t: np.ndarray
    map: SceneMap = EMPTY_MAP
    footprint: Footprint = PICKUP
    id: str = ""
    agent_id: str = ""

    def __post_init__(self):
        history = tuple(self.history)
        if not history:
            raise ValueError("instance history is empty")
        future = _frozen(self.future)
        future_t = _frozen(self.future_t)
        if future.ndim != 2 or future.shape[1] != 2:
            raise ValueError(f"future must have shape (H, 2), got {future.shape}")
        if future_t.shape != (len(future),):
            raise ValueError("future_t must have one timestamp per future position")
        if len(future) and not history[-1].t < future_t[0]:
            raise ValueError("last history timestamp must precede the first future timestamp")
        object.__setattr__(self, "history", history)
        object.__setattr__(self, "future", future)
        object.__setattr__(self, "future_t", future_t)

    @property
    def anchor(self) -> AgentState:
        return self.history[-1]

    @property
    def k(self) -> int:
        return len(self.history)

    @property
    def horizon(self) -> int:
        return len(self.future)


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple
    val: tuple
    test: tuple
    seed: int | None = None

    def __post_init__(self):
        for name in ("train", "val", "test"):
            object.__setattr__(self, name, tuple(int(i) for i in getattr(self, name)))
        sets = [set(self.train), set(self.val), set(self.test)]
        if sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2]:
            raise ValueError("split parts overlap")

    @property
    def sizes(self) -> tuple[int, int, int]:
        return len(self.train), len(self.val), len(self.test)


# --------------------------------------------------------------------------
# transforms


def to_agent_frame(point, anchor: AgentState) -> np.ndarray:
    """World point(s) -> anchor frame with +x along the heading and +y to the left."""
    pts = np.asarray(point, dtype=np.float64)
    c, s = math.cos(anchor.theta), math.sin(anchor.theta)
    dx = pts[..., 0] - anchor.x
    dy = pts[..., 1] - anchor.y
    return np.stack([c * dx + s * dy, -s * dx + c * dy], axis=-1)


def from_agent_frame(point, anchor: AgentState) -> np.ndarray:
    """Inverse of :func:`to_agent_frame`."""
    pts = np.asarray(point, dtype=np.float64)
    c, s = math.cos(anchor.theta), math.sin(anchor.theta)
    u, w = pts[..., 0], pts[..., 1]
    return np.stack([c * u - s * w + anchor.x, s * u + c * w + anchor.y], axis=-1)


def latlon_to_local(lat, lon, origin_lat: float, origin_lon: float) -> tuple[np.ndarray, np.ndarray]:
    """Equirectangular projection around an origin; meters east (x) and north (y)."""
    lat = np.radians(np.asarray(lat, dtype=np.float64))
    lon = np.radians(np.asarray(lon, dtype=np.float64))
    lat0, lon0 = math.radians(origin_lat), math.radians(origin_lon)
    x = EARTH_RADIUS_M * (lon - lon0) * math.cos(lat0)
    y = EARTH_RADIUS_M * (lat - lat0)
    return x, y


# --------------------------------------------------------------------------
# trajectory operations


def nominal_rate(traj: Trajectory) -> float:
    """Sampling rate in Hz estimated from the median timestamp spacing."""
    if len(traj) < 2:
        raise ValueError("need at least two states to infer a sampling rate")
    return 1.0 / float(np.median(np.diff(traj.times)))


def resample(traj: Trajectory, target_hz: float, source_hz: float | None = None) -> Trajectory:
    """Decimate ``traj`` to ``target_hz`` by keeping every n-th state.

    The source rate must be an integer multiple of the target rate; no
    interpolation is performed and kept timestamps are untouched.
    """
    if len(traj) == 0:
        raise ValueError("cannot resample an empty trajectory")
    if target_hz <= 0:
        raise ValueError("target_hz must be positive")
    if len(traj) == 1:
        return traj
    if source_hz is None:
        source_hz = nominal_rate(traj)
    ratio = source_hz / target_hz
    step = int(round(ratio))
    if step < 1 or abs(ratio - step) > 1e-6 * max(1.0, ratio):
        raise ValueError(f"incompatible rates: {source_hz:g} Hz cannot be decimated to {target_hz:g} Hz")
    if step == 1:
        return traj
    return Trajectory(traj.agent_id, traj.states[::step], traj.footprint)


def split_on_gaps(traj: Trajectory, nominal_dt: float, max_gap_factor: float = 2.0) -> list[Trajectory]:
    """Break a trajectory wherever consecutive timestamps are further apart than ``max_gap_factor * nominal_dt``."""
    times = traj.times
    cuts = np.flatnonzero(np.diff(times) > max_gap_factor * nominal_dt) + 1
    bounds = [0, *cuts.tolist(), len(times)]
    pieces = []
    for part, (lo, hi) in enumerate(zip(bounds[:-1], bounds[1:])):
        agent = traj.agent_id if len(bounds) == 2 else f"{traj.agent_id}#{part}"
        pieces.append(Trajectory(agent, traj.states[lo:hi], traj.footprint))
    return pieces


def make_instances(
    traj: Trajectory,
    k: int = 6,
    H: int = 6,
    pred_dt: float = 1.0,
    hist_dt: float = 0.5,
    scene_map: SceneMap = EMPTY_MAP,
) -> list[Instance]:
    """Slide a window of ``k`` history states plus ``H`` future positions over ``traj``.

    ``traj`` is expected at ``1/hist_dt`` Hz. Future positions are taken every
    ``pred_dt / hist_dt`` states after the anchor, so ``pred_dt`` must be a
    whole multiple of ``hist_dt``. Windows that overrun the end are dropped.
    """
    if k < 1 or H < 1:
        raise ValueError("k and H must be positive")
    ratio = pred_dt / hist_dt
    stride = int(round(ratio))
    if stride < 1 or abs(ratio - stride) > 1e-9:
        raise ValueError(f"pred_dt={pred_dt} is not a whole multiple of hist_dt={hist_dt}")

    states = traj.states
    n = len(states)
    instances = []
    for anchor in range(k - 1, n - H * stride):
        fut_idx = anchor + stride * np.arange(1, H + 1)
        future = np.array([[states[i].x, states[i].y] for i in fut_idx])
        future_t = np.array([states[i].t for i in fut_idx])
        instances.append(
            Instance(
                history=states[anchor - k + 1 : anchor + 1],
                future=future,
                future_t=future_t,
                map=scene_map,
                footprint=traj.footprint,
                id=f"{traj.agent_id}@{anchor}",
                agent_id=traj.agent_id,
            )
        )
    return instances


def split_dataset(n: int, ratios: Sequence[float] = (7, 1.5, 1.5), seed: int = 0) -> DatasetSplit:
    """Seeded shuffle then a proportional cut with largest-remainder rounding.

    Remainder ties go to the earlier part (train, then val), so ``n=10``
    splits as 7/2/1.
    """
    if n < 3:
        raise ValueError(f"need at least 3 items to split, got {n}")
    ratios = np.asarray(ratios, dtype=np.float64)
    if ratios.shape != (3,) or np.any(ratios < 0) or ratios.sum() <= 0:
        raise ValueError("ratios must be three non-negative numbers")
    quotas = n * ratios / ratios.sum()
    sizes = np.floor(quotas).astype(int)
    leftover = n - int(sizes.sum())
    # stable sort keeps train ahead of val ahead of test on equal remainders
    order = np.argsort(-(quotas - sizes), kind="stable")
    sizes[order[:leftover]] += 1

    perm = np.random.default_rng(seed).permutation(n)
    a, b = sizes[0], sizes[0] + sizes[1]
    return DatasetSplit(perm[:a].tolist(), perm[a:b].tolist(), perm[b:].tolist(), seed=seed)


# --------------------------------------------------------------------------
# file formats


def _rows_to_trajectories(rows: Iterable[tuple[int, dict]], footprints=None) -> list[Trajectory]:
    footprints = dict(footprints or {})
    grouped: dict[str, list] = {}
    for lineno, row in rows:
        try:
            agent = str(row["agent_id"])
            state = AgentState(
                t=float(row["t"]),
                x=float(row["x"]),
                y=float(row["y"]),
                theta=float(row["theta"]),
                v=float(row["v"]),
                a=float(row["a"]),
                omega=float(row["omega"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"malformed trajectory record at line {lineno}: {exc}") from None
        grouped.setdefault(agent, []).append(state)
        if agent not in footprints and row.get("length") not in (None, "") and row.get("width") not in (None, ""):
            try:
                footprints[agent] = Footprint(float(row["length"]), float(row["width"]))
            except (TypeError, ValueError) as exc:
                raise ValueError(f"malformed trajectory record at line {lineno}: {exc}") from None

    trajectories = []
    for agent in sorted(grouped):
        states = sorted(grouped[agent], key=lambda s: s.t)
        trajectories.append(Trajectory(agent, tuple(states), footprints.get(agent, PICKUP)))
    return trajectories


def _project_rows(rows, origin):
    for lineno, row in rows:
        if "x" not in row and "lat" in row and "lon" in row:
            if not origin or "lat" not in origin or "lon" not in origin:
                raise ValueError(f"line {lineno}: lat/lon records need a map origin with lat and lon")
            try:
                x, y = latlon_to_local(float(row["lat"]), float(row["lon"]), origin["lat"], origin["lon"])
            except (TypeError, ValueError) as exc:
                raise ValueError(f"malformed trajectory record at line {lineno}: {exc}") from None
            row = dict(row, x=float(x), y=float(y))
        yield lineno, row


def read_trajectories(path, origin: dict | None = None, footprints=None) -> list[Trajectory]:
    """Read a trajectory log in CSV (``t,agent_id,x,y,theta,v,a,omega``) or JSON-lines form.

    Optional ``length``/``width`` columns set the agent's footprint.

    Records with ``lat``/``lon`` instead of ``x``/``y`` are projected around
    ``origin`` (``{"lat": ..., "lon": ...}``).
    """
    path = Path(path)
    text = path.read_text()
    if path.suffix in (".jsonl", ".ndjson", ".json"):
        rows = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                rows.append((lineno, json.loads(line)))
            except json.JSONDecodeError as exc:
                raise ValueError(f"malformed trajectory record at line {lineno}: {exc}") from None
    else:
        reader = csv.DictReader(text.splitlines())
        if reader.fieldnames is None:
            return []
        missing = {"t", "agent_id", "theta", "v", "a", "omega"} - set(reader.fieldnames)
        if missing:
            raise ValueError(f"trajectory CSV header is missing columns: {sorted(missing)}")
        # header is line 1
        rows = [(lineno, row) for lineno, row in enumerate(reader, start=2)]
    return _rows_to_trajectories(_project_rows(rows, origin), footprints)


def write_trajectories(trajectories: Iterable[Trajectory], path) -> None:
    path = Path(path)
    records = []
    for traj in trajectories:
        for s in traj.states:
            fp = traj.footprint
            records.append((s.t, traj.agent_id, s.x, s.y, s.theta, s.v, s.a, s.omega, fp.length, fp.width))
    fields = LOG_FIELDS + FOOTPRINT_FIELDS
    if path.suffix in (".jsonl", ".ndjson"):
        with path.open("w") as fh:
            for rec in records:
                fh.write(json.dumps(dict(zip(fields, rec))) + "\n")
        return
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(fields)
        for t, agent, *rest in records:
            writer.writerow([repr(t), agent, *map(repr, rest)])


def map_to_dict(scene_map: SceneMap) -> dict:
    origin = dict(scene_map.origin)
    if scene_map.origin_note:
        origin.setdefault("note", scene_map.origin_note)
    return {
        "origin": origin,
        "drivable": [p.tolist() for p in scene_map.drivable],
        "non_drivable": [p.tolist() for p in scene_map.non_drivable],
    }


def map_from_dict(doc: dict) -> SceneMap:
    for key in ("drivable", "non_drivable"):
        if key not in doc or not isinstance(doc[key], list):
            raise ValueError(f"map document needs a list under {key!r}")
    origin = dict(doc.get("origin") or {})
    return SceneMap(
        drivable=tuple(doc["drivable"]),
        non_drivable=tuple(doc["non_drivable"]),
        origin_note=str(origin.get("note", "")),
        origin=origin,
    )


def write_map(scene_map: SceneMap, path) -> None:
    Path(path).write_text(json.dumps(map_to_dict(scene_map), indent=1) + "\n")


def read_map(path) -> SceneMap:
    return map_from_dict(json.loads(Path(path).read_text()))


def write_split(split: DatasetSplit, path) -> None:
    doc = {"seed": split.seed, "train": list(split.train), "val": list(split.val), "test": list(split.test)}
    Path(path).write_text(json.dumps(doc) + "\n")


def read_split(path) -> DatasetSplit:
    doc = json.loads(Path(path).read_text())
    return DatasetSplit(doc["train"], doc["val"], doc["test"], seed=doc.get("seed"))


def instance_to_dict(inst: Instance) -> dict:
    return {
        "id": inst.id,
        "agent_id": inst.agent_id,
        "footprint": [inst.footprint.length, inst.footprint.width],
        "history": [s.as_array().tolist() for s in inst.history],
        "future": inst.future.tolist(),
        "future_t": inst.future_t.tolist(),
    }


def instance_from_dict(doc: dict, scene_map: SceneMap = EMPTY_MAP) -> Instance:
    return Instance(
        history=tuple(AgentState.from_array(row) for row in doc["history"]),
        future=np.asarray(doc["future"], dtype=np.float64).reshape(-1, 2),
        future_t=np.asarray(doc["future_t"], dtype=np.float64),
        map=scene_map,
        footprint=Footprint(*doc.get("footprint", (PICKUP.length, PICKUP.width))),
        id=str(doc.get("id", "")),
        agent_id=str(doc.get("agent_id", "")),
    )


def write_instances(instances: Iterable[Instance], path) -> None:
    with Path(path).open("w") as fh:
        for inst in instances:
            fh.write(json.dumps(instance_to_dict(inst)) + "\n")


def read_instances(path, scene_map: SceneMap = EMPTY_MAP) -> list[Instance]:
    out = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            out.append(instance_from_dict(json.loads(line), scene_map))
    return out
