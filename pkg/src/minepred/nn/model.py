"""Compact convolutional multimodal trajectory predictor.

The network maps an agent-centric raster plus the target's ``(v, a, omega)``
to ``M`` candidate trajectories of ``H`` agent-frame positions and ``M``
mode logits, i.e. ``(2H + 1) * M`` raw outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..raster import Raster, RasterConfig, get_config
from .layers import Conv2d, GlobalAvgPool, Linear, ReLU, he_uniform, softmax

STATE_SCALE = (15.0, 3.0, 0.5)


@dataclass(frozen=True, eq=False)
class ModeSet:
    """``M`` agent-frame trajectories ``(M, H, 2)`` with probabilities summing to one."""

    trajectories: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        traj = np.asarray(self.trajectories, dtype=np.float64)
        probs = np.asarray(self.probs, dtype=np.float64)
        if traj.ndim != 3 or traj.shape[2] != 2 or probs.shape != (traj.shape[0],):
            raise ValueError(f"inconsistent mode set shapes {traj.shape} / {probs.shape}")
        if not np.all(np.isfinite(traj)):
            raise ValueError("mode trajectories must be finite")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-6:
            raise ValueError("mode probabilities must form a simplex")
        object.__setattr__(self, "trajectories", traj)
        object.__setattr__(self, "probs", probs)

    @property
    def n_modes(self) -> int:
        return len(self.probs)

    @property
    def horizon(self) -> int:
        return self.trajectories.shape[1]


class ConvBackbone:
    """Stack of stride-2 3x3 convolutions with ReLU followed by global average pooling.

    Alternative feature extractors only need ``layers``, ``out_features``,
    ``descriptor()`` and ``output_hw()``.
    """

    def __init__(self, channels=(3, 16, 32, 64), kernel: int = 3, stride: int = 2, dtype=np.float32):
        self.channels = tuple(int(c) for c in channels)
        self.kernel, self.stride = kernel, stride
        self.layers = []
        for c_in, c_out in zip(self.channels[:-1], self.channels[1:]):
            self.layers += [Conv2d(c_in, c_out, kernel, stride, kernel // 2, dtype=dtype), ReLU()]
        self.layers[0].needs_input_grad = False
        self.layers.append(GlobalAvgPool())

    @property
    def out_features(self) -> int:
        return self.channels[-1]

    def output_hw(self, size: int) -> tuple[int, int, int]:
        h = w = size
        for layer in self.layers:
            if isinstance(layer, Conv2d):
                h, w = layer.output_hw(h, w)
        return h, w, self.channels[-1]

    def descriptor(self) -> dict:
        return {"type": "conv", "channels": list(self.channels), "kernel": self.kernel, "stride": self.stride}


@dataclass
class ArchSpec:
    horizon: int = 6
    n_modes: int = 3
    channels: tuple = (3, 16, 32, 64)
    hidden: int = 128
    raster: RasterConfig = field(default_factory=lambda: get_config("train"))
    state_scale: tuple = STATE_SCALE
    output_scale: float = 10.0

    @property
    def n_outputs(self) -> int:
        return (2 * self.horizon + 1) * self.n_modes


class TrajectoryNet:
    """Model parameters plus forward/backward over batches.

    Images are ``(N, n, n, 3)`` uint8 or float in ``[0, 255]``; states are
    ``(N, 3)`` raw ``(v, a, omega)``.
    """

    def __init__(self, spec: ArchSpec | None = None, seed: int = 0, dtype=np.float32, **kwargs):
        spec = spec or ArchSpec(**kwargs)
        if isinstance(spec.raster, (str, dict)):
            spec.raster = get_config(spec.raster)
        self.spec = spec
        self.dtype = np.dtype(dtype)
        self.backbone = ConvBackbone(spec.channels, dtype=self.dtype)
        n_feat = self.backbone.out_features + 3
        self.hidden = Linear(n_feat, spec.hidden, dtype=self.dtype)
        self.hidden_act = ReLU()
        self.head = Linear(spec.hidden, spec.n_outputs, dtype=self.dtype)
        self._forward_done = False
        self.initialize(seed)

    # -- parameters -----------------------------------------------------

    @property
    def layers(self):
        return [*self.backbone.layers, self.hidden, self.hidden_act, self.head]

    @property
    def param_layers(self):
        return [layer for layer in self.layers if layer.params]

    def parameters(self) -> list[np.ndarray]:
        return [p for layer in self.param_layers for p in layer.params]

    def gradients(self) -> list[np.ndarray]:
        return [g for layer in self.param_layers for g in layer.grads]

    def param_names(self) -> list[str]:
        names = []
        for i, layer in enumerate(self.param_layers):
            kind = "conv" if isinstance(layer, Conv2d) else "fc"
            names += [f"{i}.{kind}.weight", f"{i}.{kind}.bias"]
        return names

    def set_parameters(self, values) -> None:
        values = list(values)
        params = self.parameters()
        if len(values) != len(params):
            raise ValueError("parameter count mismatch")
        for p, v in zip(params, values):
            if p.shape != np.shape(v):
                raise ValueError(f"parameter shape mismatch {p.shape} vs {np.shape(v)}")
            p[...] = v

    def zero_grad(self) -> None:
        for layer in self.param_layers:
            layer.zero_grad()

    def initialize(self, seed: int) -> None:
        """He-uniform weights, zero biases; the output layer is scaled by 0.01."""
        rng = np.random.default_rng(seed)
        for layer in self.param_layers:
            weight, bias = layer.params
            fan_in = int(np.prod(weight.shape[:-1]))
            weight[...] = he_uniform(rng, weight.shape, fan_in, self.dtype)
            bias[...] = 0
        self.head.params[0] *= self.dtype.type(0.01)
        self.zero_grad()

    def architecture(self) -> dict:
        spec = self.spec
        return {
            "backbone": self.backbone.descriptor(),
            "head": {"in": self.backbone.out_features + 3, "hidden": spec.hidden, "out": spec.n_outputs},
            "params": [[name, list(p.shape)] for name, p in zip(self.param_names(), self.parameters())],
        }

    # -- forward / backward ----------------------------------------------

    def _check_inputs(self, images, states):
        n = self.spec.raster.size_px
        images = np.asarray(images)
        if images.ndim == 3:
            images = images[None]
        if images.shape[1:] != (n, n, 3):
            raise ValueError(f"raster shape {images.shape[1:]} does not match the model's {(n, n, 3)}")
        states = np.asarray(states, dtype=np.float64).reshape(-1, 3)
        if len(states) != len(images):
            raise ValueError("one (v, a, omega) state is needed per raster")
        if not np.all(np.isfinite(states)):
            raise ValueError("motion state must be finite")
        return images, states

    def forward_raw(self, images, states) -> np.ndarray:
        """Raw ``(N, (2H+1)M)`` head output."""
        images, states = self._check_inputs(images, states)
        x = images.astype(self.dtype) * self.dtype.type(1.0 / 255.0)
        for layer in self.backbone.layers:
            x = layer.forward(x)
        norm = (states / np.asarray(self.spec.state_scale)).astype(self.dtype)
        x = np.concatenate([x, norm], axis=1)
        x = self.hidden_act.forward(self.hidden.forward(x))
        out = self.head.forward(x)
        self._forward_done = True
        return out

    def split_output(self, raw):
        """``raw -> (coords (N, M, H, 2) in meters, logits (N, M))``."""
        spec = self.spec
        m, h = spec.n_modes, spec.horizon
        coords = raw[:, : 2 * h * m].reshape(-1, m, h, 2) * spec.output_scale
        logits = raw[:, 2 * h * m :]
        return coords, logits

    def join_grad(self, d_coords, d_logits) -> np.ndarray:
        n = d_coords.shape[0]
        d_raw = np.concatenate([d_coords.reshape(n, -1) * self.spec.output_scale, d_logits], axis=1)
        return d_raw.astype(self.dtype)

    def forward(self, images, states):
        coords, logits = self.split_output(self.forward_raw(images, states))
        return coords, logits

    def backward(self, d_raw) -> list[np.ndarray]:
        """Accumulate parameter gradients for ``d loss / d raw``; returns the gradient list."""
        if not self._forward_done:
            raise RuntimeError("backward called without a preceding forward pass")
        g = self.head.backward(np.asarray(d_raw, dtype=self.dtype))
        g = self.hidden.backward(self.hidden_act.backward(g))
        g = g[:, : self.backbone.out_features]
        for layer in reversed(self.backbone.layers):
            g = layer.backward(g)
            if g is None:
                break
        return self.gradients()

    def predict_modes(self, images, states) -> list[ModeSet]:
        coords, logits = self.forward(images, states)
        probs = softmax(logits.astype(np.float64), axis=1)
        return [ModeSet(c.astype(np.float64), p) for c, p in zip(coords, probs)]


def forward(params: TrajectoryNet, raster: Raster, state) -> tuple[ModeSet, np.ndarray]:
    """Single-raster convenience wrapper returning ``(ModeSet, logits)``."""
    if raster.config != params.spec.raster:
        raise ValueError(f"raster config {raster.config} does not match the checkpoint's {params.spec.raster}")
    coords, logits = params.forward(raster.pixels[None], np.asarray(state, dtype=np.float64)[None])
    logits = logits[0].astype(np.float64)
    return ModeSet(coords[0].astype(np.float64), softmax(logits)), logits
