"""Binary checkpoints.

Layout: 8-byte magic, uint32 format version, uint32 header length, UTF-8
JSON header (architecture, horizon, modes, raster config, normalization
constants), then every parameter as little-endian float32 in header order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..raster import RasterConfig
from .model import ArchSpec, TrajectoryNet

MAGIC = b"MPREDCK\x00"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save(net: TrajectoryNet, path, extra: dict | None = None) -> Path:
    spec = net.spec
    header = {
        "architecture": net.architecture(),
        "horizon": spec.horizon,
        "n_modes": spec.n_modes,
        "raster": spec.raster.to_dict(),
        "state_scale": list(spec.state_scale),
        "output_scale": spec.output_scale,
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(blob)))
        fh.write(blob)
        for p in net.parameters():
            fh.write(np.ascontiguousarray(p, dtype="<f4").tobytes())
    return path


def read_header(path) -> dict:
    with Path(path).open("rb") as fh:
        return _read_header(fh)[0]


def _read_header(fh):
    magic = fh.read(len(MAGIC))
    if magic != MAGIC:
        raise CheckpointError("corrupt checkpoint: bad magic")
    raw = fh.read(8)
    if len(raw) != 8:
        raise CheckpointError("corrupt checkpoint: truncated header")
    version, length = struct.unpack("<II", raw)
    if version != VERSION:
        raise CheckpointError(f"checkpoint version {version} is not supported (expected {VERSION})")
    try:
        header = json.loads(fh.read(length).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    return header, fh


def load(path, expected_architecture: dict | None = None, dtype=np.float32) -> TrajectoryNet:
    """Rebuild a :class:`TrajectoryNet` from ``path``.

    Raises:
        CheckpointError: bad magic/version, truncated data, or an
            architecture that differs from ``expected_architecture`` or from
            the one implied by the header's own settings.
    """
    with Path(path).open("rb") as fh:
        header, fh = _read_header(fh)
        arch = header["architecture"]
        if expected_architecture is not None and arch != expected_architecture:
            raise CheckpointError("architecture mismatch: checkpoint does not match the requested model")
        spec = ArchSpec(
            horizon=int(header["horizon"]),
            n_modes=int(header["n_modes"]),
            channels=tuple(arch["backbone"]["channels"]),
            hidden=int(arch["head"]["hidden"]),
            raster=RasterConfig.from_dict(header["raster"]),
            state_scale=tuple(header["state_scale"]),
            output_scale=float(header["output_scale"]),
        )
        net = TrajectoryNet(spec, seed=0, dtype=dtype)
        if net.architecture() != arch:
            raise CheckpointError("architecture mismatch: descriptor is inconsistent with its settings")
        values = []
        for p in net.parameters():
            raw = fh.read(p.size * 4)
            if len(raw) != p.size * 4:
                raise CheckpointError("corrupt checkpoint: parameter data truncated")
            values.append(np.frombuffer(raw, dtype="<f4").reshape(p.shape))
        if fh.read(1):
            raise CheckpointError("corrupt checkpoint: trailing bytes")
    net.set_parameters(values)
    net.extra = header.get("extra", {})
    return net
