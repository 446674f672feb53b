"""Displacement metrics, drivable-area filtering and method comparison tables."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .geometry import point_in_any
from .scene import SceneMap, from_agent_frame

log = logging.getLogger(__name__)

DEFAULT_MISS_THRESHOLD = 2.0


@dataclass(frozen=True, eq=False)
class Prediction:
    """World-frame mode trajectories ``(M, H, 2)`` and their probabilities for one instance."""

    id: str
    modes: np.ndarray
    probs: np.ndarray
    source: str = "model"
    infeasible: tuple = ()
    warning: str = ""

    def __post_init__(self):
        modes = np.asarray(self.modes, dtype=np.float64)
        if modes.ndim == 2:
            modes = modes[None]
        probs = np.asarray(self.probs, dtype=np.float64).reshape(-1)
        if modes.ndim != 3 or modes.shape[2] != 2 or len(modes) < 1:
            raise ValueError(f"prediction {self.id!r}: modes must have shape (M, H, 2), got {modes.shape}")
        if probs.shape != (len(modes),):
            raise ValueError(f"prediction {self.id!r}: need one probability per mode")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-6:
            raise ValueError(f"prediction {self.id!r}: probabilities must sum to 1")
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "infeasible", tuple(bool(v) for v in self.infeasible))

    @property
    def n_modes(self) -> int:
        return len(self.probs)


def _checked(pred: Prediction, gt) -> tuple[np.ndarray, np.ndarray]:
    gt = np.asarray(gt, dtype=np.float64)
    if gt.ndim != 2 or gt.shape[1] != 2 or pred.modes.shape[1:] != gt.shape:
        raise ValueError(f"length mismatch: modes {pred.modes.shape[1:]} vs ground truth {gt.shape}")
    return pred.modes, gt


def min_ade(pred: Prediction, gt) -> float:
    """Smallest average displacement error over the modes."""
    modes, gt = _checked(pred, gt)
    return float(np.min(np.mean(np.linalg.norm(modes - gt[None], axis=-1), axis=-1)))


def min_fde(pred: Prediction, gt) -> float:
    """Smallest final-step displacement over the modes."""
    modes, gt = _checked(pred, gt)
    return float(np.min(np.linalg.norm(modes[:, -1] - gt[-1], axis=-1)))


def miss_rate(preds: Sequence[Prediction], gts: Sequence, threshold: float = DEFAULT_MISS_THRESHOLD) -> float:
    """Fraction of instances whose minFDE exceeds ``threshold`` meters."""
    if len(preds) == 0:
        raise ValueError("miss_rate needs at least one prediction")
    if len(preds) != len(gts):
        raise ValueError("one ground truth per prediction is required")
    misses = sum(min_fde(p, g) > threshold for p, g in zip(preds, gts))
    return misses / len(preds)


def mode_feasibility(pred: Prediction, scene_map: SceneMap) -> np.ndarray:
    """True for modes whose every position is on drivable and off non-drivable ground."""
    m, h, _ = pred.modes.shape
    pts = pred.modes.reshape(-1, 2)
    on_road = point_in_any(pts, scene_map.drivable) if scene_map.drivable else np.zeros(len(pts), bool)
    blocked = point_in_any(pts, scene_map.non_drivable) if scene_map.non_drivable else np.zeros(len(pts), bool)
    ok = (on_road & ~blocked).reshape(m, h)
    return ok.all(axis=1)


def feasibility_filter(pred: Prediction, scene_map: SceneMap) -> Prediction:
    """Zero the probability of infeasible modes and renormalize the rest.

    When every mode is infeasible the distribution is returned unchanged and
    ``warning`` is set.
    """
    feasible = mode_feasibility(pred, scene_map)
    infeasible = tuple(bool(v) for v in ~feasible)
    if not feasible.any():
        log.debug("prediction %s: all %d modes infeasible, keeping unfiltered probabilities", pred.id, pred.n_modes)
        return replace(pred, infeasible=infeasible, warning="all modes infeasible")
    kept = np.where(feasible, pred.probs, 0.0)
    if np.array_equal(kept, pred.probs):
        # nothing to remove; keeps the filter exactly idempotent
        return replace(pred, infeasible=infeasible, warning="")
    mass = kept.sum()
    if mass <= 0:
        # feasible modes carry no probability: spread uniformly over them
        kept = feasible.astype(np.float64)
        mass = kept.sum()
    return replace(pred, probs=kept / mass, infeasible=infeasible, warning="")


# ---------------------------------------------------------------------------
# reports


@dataclass
class MetricRow:
    method: str
    min_ade: float
    min_fde: float
    miss_rate: float | None
    n: int


@dataclass
class MetricReport:
    rows: list = field(default_factory=list)
    horizon: int = 0
    miss_threshold: float = DEFAULT_MISS_THRESHOLD
    n_modes: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def row(self, method: str) -> MetricRow:
        for r in self.rows:
            if r.method == method:
                return r
        raise KeyError(method)

    def to_csv(self) -> str:
        lines = ["method,minADE,minFDE,missRate,n"]
        for r in self.rows:
            miss = "" if r.miss_rate is None else f"{r.miss_rate:.6f}"
            lines.append(f"{r.method},{r.min_ade:.6f},{r.min_fde:.6f},{miss},{r.n}")
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        header = ("Method", "minADE", "minFDE", "missRate")
        body = []
        for r in self.rows:
            miss = "\\" if r.miss_rate is None else f"{r.miss_rate:.3f}"
            body.append((display_name(r.method), f"{r.min_ade:.3f}", f"{r.min_fde:.3f}", miss))
        widths = [max(len(row[i]) for row in [header, *body]) for i in range(4)]
        fmt = "  ".join(["{:<%d}" % widths[0]] + ["{:>%d}" % w for w in widths[1:]])
        out = [fmt.format(*header), fmt.format(*("-" * w for w in widths))]
        out += [fmt.format(*row) for row in body]
        out.append(f"(H={self.horizon}, miss threshold {self.miss_threshold:g} m, final-step)")
        return "\n".join(out) + "\n"


_MODEL_TAG = re.compile(r"^model-M(\d+)$")


def display_name(tag: str) -> str:
    if tag == "ekf":
        return "EKF"
    match = _MODEL_TAG.match(tag)
    if match:
        k = int(match.group(1))
        return "Single-modal (M=1)" if k == 1 else f"Ours with m={k}"
    return tag


def _order_key(item):
    pos, tag = item
    if tag == "ekf":
        return (0, 0, pos)
    match = _MODEL_TAG.match(tag)
    if match:
        return (1, int(match.group(1)), pos)
    return (2, 0, pos)


def compare(
    methods: Sequence[tuple[str, Mapping[str, Prediction]]],
    ground_truth: Mapping[str, np.ndarray],
    miss_threshold: float = DEFAULT_MISS_THRESHOLD,
    instance_ids: Iterable[str] | None = None,
) -> MetricReport:
    """Score several methods on the same instances.

    Args:
        methods: ``(tag, {instance_id: Prediction})`` pairs. Tags must be
            unique; ``"ekf"`` rows get no miss rate.
        ground_truth: ``{instance_id: (H, 2) world positions}``.
        miss_threshold: Final-displacement threshold in meters.
        instance_ids: Instances to score (defaults to all ground-truth keys,
            sorted).

    Rows are ordered EKF first, then ``model-M<k>`` by ``k``, then anything
    else in the given order.
    """
    tags = [tag for tag, _ in methods]
    dupes = sorted({t for t in tags if tags.count(t) > 1})
    if dupes:
        raise ValueError(f"duplicate method tags: {dupes}")
    ids = sorted(ground_truth) if instance_ids is None else list(instance_ids)
    if not ids:
        raise ValueError("no instances to evaluate")
    horizon = int(np.asarray(ground_truth[ids[0]]).shape[0])
    report = MetricReport(horizon=horizon, miss_threshold=miss_threshold)
    ordered = sorted(enumerate(tags), key=_order_key)
    lookup = dict(methods)
    for _, tag in ordered:
        preds = lookup[tag]
        chosen = []
        for iid in ids:
            if iid not in preds:
                raise KeyError(f"method {tag!r} has no prediction for instance {iid!r}")
            chosen.append(preds[iid])
        gts = [ground_truth[iid] for iid in ids]
        ade = float(np.mean([min_ade(p, g) for p, g in zip(chosen, gts)]))
        fde = float(np.mean([min_fde(p, g) for p, g in zip(chosen, gts)]))
        miss = None if tag == "ekf" else miss_rate(chosen, gts, miss_threshold)
        report.rows.append(MetricRow(tag, ade, fde, miss, len(ids)))
        report.n_modes[tag] = max(p.n_modes for p in chosen)
    return report


# ---------------------------------------------------------------------------
# conversions and files


def predictions_from_modes(instances, mode_sets, source: str) -> list[Prediction]:
    """Convert agent-frame :class:`~minepred.nn.ModeSet` outputs to world-frame predictions."""
    out = []
    for inst, ms in zip(instances, mode_sets):
        world = from_agent_frame(ms.trajectories, inst.anchor)
        out.append(Prediction(inst.id, world, ms.probs, source))
    return out


def prediction_to_dict(pred: Prediction) -> dict:
    doc = {"id": pred.id, "source": pred.source, "modes": pred.modes.tolist(), "probs": pred.probs.tolist()}
    if pred.infeasible:
        doc["infeasible"] = list(pred.infeasible)
    if pred.warning:
        doc["warning"] = pred.warning
    return doc


def prediction_from_dict(doc: dict) -> Prediction:
    return Prediction(
        id=str(doc["id"]),
        modes=np.asarray(doc["modes"], dtype=np.float64),
        probs=np.asarray(doc["probs"], dtype=np.float64),
        source=str(doc.get("source", "model")),
        infeasible=tuple(doc.get("infeasible", ())),
        warning=str(doc.get("warning", "")),
    )


def write_predictions(preds: Iterable[Prediction], path) -> None:
    with Path(path).open("w") as fh:
        for p in preds:
            fh.write(json.dumps(prediction_to_dict(p)) + "\n")


def read_predictions(path) -> list[Prediction]:
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            out.append(prediction_from_dict(json.loads(line)))
        except (KeyError, ValueError) as exc:
            raise ValueError(f"malformed prediction record at line {lineno}: {exc}") from None
    return out
