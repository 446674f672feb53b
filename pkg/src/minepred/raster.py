"""Agent-centric bird's-eye-view rasterization.

Pixel coordinates are ``(col, row)`` measured from the bottom-left corner of
the canvas. The anchor's heading points up the image (increasing row) and
its left side points towards decreasing column, so the default placement
near the bottom of the canvas leaves most of the view ahead of the vehicle.
Pixel arrays are stored image-style, ``pixels[n - 1 - row, col]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .geometry import fill_mask, oriented_box
from .scene import AgentState, Footprint, SceneMap, to_agent_frame

BLACK = (0, 0, 0)
WHITE = (255, 255, 255)


@dataclass(frozen=True)
class RasterConfig:
    resolution: float = 0.1
    size_px: int = 1200
    agent_px: tuple = (600, 300)
    fade_delta: float = 0.1

    def __post_init__(self):
        w, h = self.agent_px
        object.__setattr__(self, "agent_px", (int(w), int(h)))
        object.__setattr__(self, "size_px", int(self.size_px))
        if not self.resolution > 0:
            raise ValueError("resolution must be positive")
        if not (0 <= w < self.size_px and 0 <= h < self.size_px):
            raise ValueError(f"agent placement {self.agent_px} lies outside a {self.size_px}px canvas")
        if not 0.0 <= self.fade_delta <= 1.0:
            raise ValueError("fade_delta must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "resolution": self.resolution,
            "size_px": self.size_px,
            "agent_px": list(self.agent_px),
            "fade_delta": self.fade_delta,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "RasterConfig":
        return cls(float(doc["resolution"]), int(doc["size_px"]), tuple(doc["agent_px"]), float(doc["fade_delta"]))


# 120 m x 120 m of context in every preset: 90 m ahead, 30 m behind, 60 m either side
PRESETS = {
    "paper": RasterConfig(0.1, 1200, (600, 300), 0.1),
    "train": RasterConfig(0.5, 240, (120, 60), 0.1),
    "coarse": RasterConfig(1.0, 120, (60, 30), 0.1),
}


def get_config(config) -> RasterConfig:
    """Resolve a preset name, a dict or a :class:`RasterConfig`."""
    if isinstance(config, RasterConfig):
        return config
    if isinstance(config, str):
        try:
            return PRESETS[config]
        except KeyError:
            raise ValueError(f"unknown raster preset {config!r}; choose from {sorted(PRESETS)}") from None
    if isinstance(config, dict):
        return RasterConfig.from_dict(config)
    raise TypeError(f"cannot interpret {config!r} as a raster configuration")


@dataclass(frozen=True, eq=False)
class Raster:
    pixels: np.ndarray
    config: RasterConfig
    anchor: AgentState

    def __post_init__(self):
        n = self.config.size_px
        if self.pixels.shape != (n, n, 3) or self.pixels.dtype != np.uint8:
            raise ValueError(f"raster pixels must be uint8 of shape {(n, n, 3)}")
        if self.pixels.flags.writeable:
            frozen = self.pixels.copy()
            frozen.setflags(write=False)
            object.__setattr__(self, "pixels", frozen)


def history_brightness(K: int, delta: float = 0.1) -> float:
    """Brightness of the box drawn ``K`` steps before the anchor: ``max(0, 1 - K*delta)``."""
    if K < 0:
        raise ValueError("K must be non-negative")
    return max(0.0, 1.0 - K * delta)


def world_to_pixel(point, anchor: AgentState, cfg: RasterConfig) -> np.ndarray:
    """Real-valued ``(col, row)`` of world point(s); nothing is rounded or clipped."""
    local = to_agent_frame(point, anchor)
    w, h = cfg.agent_px
    col = w - local[..., 1] / cfg.resolution
    row = h + local[..., 0] / cfg.resolution
    return np.stack([col, row], axis=-1)


def pixel_to_world(pixel, anchor: AgentState, cfg: RasterConfig) -> np.ndarray:
    px = np.asarray(pixel, dtype=np.float64)
    w, h = cfg.agent_px
    forward = (px[..., 1] - h) * cfg.resolution
    left = (w - px[..., 0]) * cfg.resolution
    c, s = np.cos(anchor.theta), np.sin(anchor.theta)
    return np.stack([c * forward - s * left + anchor.x, s * forward + c * left + anchor.y], axis=-1)


def render(scene_map: SceneMap, history: Sequence, cfg: RasterConfig | str = "train") -> Raster:
    """Rasterize map layers and the faded history boxes around the newest pose.

    Args:
        scene_map: Drivable and non-drivable polygons in world coordinates.
        history: ``(AgentState, Footprint)`` pairs, oldest first; the last one
            is the anchor.
        cfg: Raster configuration or preset name.
    """
    cfg = get_config(cfg)
    if len(history) == 0:
        raise ValueError("anchor required: history is empty")
    anchor = history[-1][0]
    n = cfg.size_px
    canvas = np.zeros((n, n, 3), dtype=np.uint8)  # bottom-up rows while painting

    for poly in scene_map.drivable:
        canvas[fill_mask(world_to_pixel(poly, anchor, cfg), n, n)] = WHITE
    for poly in scene_map.non_drivable:
        canvas[fill_mask(world_to_pixel(poly, anchor, cfg), n, n)] = BLACK

    k = len(history)
    for idx, (state, footprint) in enumerate(history):
        K = k - 1 - idx
        red = int(round(255 * history_brightness(K, cfg.fade_delta)))
        box = oriented_box(state.x, state.y, state.theta, footprint.length, footprint.width)
        canvas[fill_mask(world_to_pixel(box, anchor, cfg), n, n)] = (red, 0, 0)

    return Raster(np.ascontiguousarray(canvas[::-1]), cfg, anchor)


def render_instance(instance, cfg: RasterConfig | str = "train") -> Raster:
    return render(instance.map, [(s, instance.footprint) for s in instance.history], cfg)


def export_png(raster: Raster, path) -> Path:
    from PIL import Image

    path = Path(path)
    Image.fromarray(np.ascontiguousarray(raster.pixels)).save(path, format="PNG")
    return path


def read_png(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as img:
        return np.array(img.convert("RGB"), dtype=np.uint8)


def export_ppm(raster: Raster, path) -> Path:
    """Binary PPM (P6); handy when no image library is around."""
    path = Path(path)
    n = raster.config.size_px
    with path.open("wb") as fh:
        fh.write(f"P6\n{n} {n}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(raster.pixels).tobytes())
    return path


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P6" or tokens[3] != b"255":
        raise ValueError("not an 8-bit binary PPM")
    width, height = int(tokens[1]), int(tokens[2])
    body = data[pos + 1 : pos + 1 + width * height * 3]
    return np.frombuffer(body, dtype=np.uint8).reshape(height, width, 3).copy()


class InstanceRasterizer(TransformerMixin, BaseEstimator):
    """Turn a list of :class:`~minepred.scene.Instance` into a ``(N, n, n, 3)`` uint8 stack."""

    def __init__(self, raster="train"):
        self.raster = raster

    def fit(self, X, y=None):
        self.config_ = get_config(self.raster)
        return self

    def transform(self, X):
        cfg = getattr(self, "config_", None) or get_config(self.raster)
        n = cfg.size_px
        out = np.empty((len(X), n, n, 3), dtype=np.uint8)
        for i, inst in enumerate(X):
            out[i] = render_instance(inst, cfg).pixels
        return out
