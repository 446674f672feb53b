"""Kinematic process models and an extended Kalman filter forecaster.

State vectors are ``[x, y, theta, v, a, omega]`` in SI units. Every model
propagates all six entries; entries a model does not use are carried over
unchanged (CV keeps ``a`` and ``omega`` but ignores them).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .scene import wrap_angle

MODEL_KINDS = ("CV", "CA", "CTRV", "CTRA")
OMEGA_EPS = 1e-6
STATE_DIM = 6
IX, IY, ITH, IV, IA, IW = range(STATE_DIM)


class FilterDivergence(RuntimeError):
    pass


@dataclass(frozen=True)
class KinematicState:
    x: float
    y: float
    theta: float
    v: float = 0.0
    a: float = 0.0
    omega: float = 0.0

    def __post_init__(self):
        vals = (self.x, self.y, self.theta, self.v, self.a, self.omega)
        if not all(math.isfinite(float(v)) for v in vals):
            raise ValueError(f"non-finite kinematic state {vals}")
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    def as_vector(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta, self.v, self.a, self.omega], dtype=np.float64)

    @classmethod
    def from_vector(cls, vec) -> "KinematicState":
        return cls(*map(float, vec))

    @classmethod
    def from_agent(cls, state) -> "KinematicState":
        return cls(state.x, state.y, state.theta, state.v, state.a, state.omega)


@dataclass(frozen=True)
class ProcessModel:
    """Model kind plus per-state process-noise spectral densities.

    ``Q = diag(q) * dt`` for a prediction over ``dt`` seconds.
    """

    kind: str = "CTRV"
    q: tuple = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown process model {self.kind!r}; expected one of {MODEL_KINDS}")
        q = tuple(float(v) for v in np.broadcast_to(np.asarray(self.q, dtype=float), (STATE_DIM,)))
        if any(v < 0 for v in q):
            raise ValueError("process noise densities must be non-negative")
        object.__setattr__(self, "q", q)

    def noise(self, dt: float) -> np.ndarray:
        return np.diag(self.q) * dt


@dataclass(frozen=True, eq=False)
class Gaussian:
    mean: np.ndarray
    cov: np.ndarray = field(default_factory=lambda: np.eye(STATE_DIM))

    def __post_init__(self):
        mean = np.array(self.mean, dtype=np.float64).reshape(STATE_DIM)
        cov = np.array(self.cov, dtype=np.float64).reshape(STATE_DIM, STATE_DIM)
        if not np.all(np.isfinite(mean)) or not np.all(np.isfinite(cov)):
            raise FilterDivergence("filter divergence: non-finite mean or covariance")
        if np.max(np.abs(cov - cov.T)) > 1e-9 * max(1.0, np.max(np.abs(cov))):
            raise ValueError("covariance is not symmetric")
        mean[ITH] = wrap_angle(mean[ITH])
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)


def _sin_diff(theta: float, dth: float) -> float:
    """sin(theta + dth) - sin(theta) without cancellation."""
    return 2.0 * math.cos(theta + 0.5 * dth) * math.sin(0.5 * dth)


def _cos_diff(theta: float, dth: float) -> float:
    """cos(theta + dth) - cos(theta) without cancellation."""
    return -2.0 * math.sin(theta + 0.5 * dth) * math.sin(0.5 * dth)


def _advance(kind: str, s: np.ndarray, dt: float) -> np.ndarray:
    x, y, th, v, a, w = s
    out = np.array(s, dtype=np.float64)
    c, sn = math.cos(th), math.sin(th)
    if kind == "CV":
        out[IX] = x + v * c * dt
        out[IY] = y + v * sn * dt
    elif kind == "CA":
        dist = v * dt + 0.5 * a * dt * dt
        out[IX] = x + dist * c
        out[IY] = y + dist * sn
        out[IV] = v + a * dt
    elif kind == "CTRV":
        if abs(w) < OMEGA_EPS:
            # first-order expansion in omega
            out[IX] = x + v * dt * c - 0.5 * v * w * dt * dt * sn
            out[IY] = y + v * dt * sn + 0.5 * v * w * dt * dt * c
        else:
            out[IX] = x + v / w * _sin_diff(th, w * dt)
            out[IY] = y - v / w * _cos_diff(th, w * dt)
        out[ITH] = th + w * dt
    else:  # CTRA
        th1 = th + w * dt
        if abs(w) < OMEGA_EPS:
            lin = v * dt + 0.5 * a * dt * dt
            bend = w * (0.5 * v * dt * dt + a * dt**3 / 3.0)
            out[IX] = x + lin * c - bend * sn
            out[IY] = y + lin * sn + bend * c
        else:
            sd, cd = _sin_diff(th, w * dt), _cos_diff(th, w * dt)
            out[IX] = x + (v * sd + a * dt * math.sin(th1)) / w + a * cd / (w * w)
            out[IY] = y + (-v * cd - a * dt * math.cos(th1)) / w + a * sd / (w * w)
        out[ITH] = th1
        out[IV] = v + a * dt
    out[ITH] = wrap_angle(out[ITH])
    return out


def _jacobian(kind: str, s: np.ndarray, dt: float) -> np.ndarray:
    """Analytic d step / d state at ``s``."""
    x, y, th, v, a, w = s
    F = np.eye(STATE_DIM)
    c, sn = math.cos(th), math.sin(th)
    if kind == "CV":
        F[IX, ITH] = -v * sn * dt
        F[IX, IV] = c * dt
        F[IY, ITH] = v * c * dt
        F[IY, IV] = sn * dt
    elif kind == "CA":
        dist = v * dt + 0.5 * a * dt * dt
        F[IX, ITH] = -dist * sn
        F[IX, IV] = c * dt
        F[IX, IA] = 0.5 * dt * dt * c
        F[IY, ITH] = dist * c
        F[IY, IV] = sn * dt
        F[IY, IA] = 0.5 * dt * dt * sn
        F[IV, IA] = dt
    elif kind == "CTRV":
        F[ITH, IW] = dt
        if abs(w) < OMEGA_EPS:
            h = 0.5 * dt * dt
            F[IX, ITH] = -v * dt * sn - h * v * w * c
            F[IX, IV] = dt * c - h * w * sn
            F[IX, IW] = -h * v * sn
            F[IY, ITH] = v * dt * c - h * v * w * sn
            F[IY, IV] = dt * sn + h * w * c
            F[IY, IW] = h * v * c
        else:
            th1 = th + w * dt
            s1, c1 = math.sin(th1), math.cos(th1)
            sd, cd = _sin_diff(th, w * dt), _cos_diff(th, w * dt)
            F[IX, ITH] = v / w * cd
            F[IX, IV] = sd / w
            F[IX, IW] = -v / (w * w) * sd + v / w * c1 * dt
            F[IY, ITH] = v / w * sd
            F[IY, IV] = -cd / w
            F[IY, IW] = v / (w * w) * cd + v / w * s1 * dt
    else:  # CTRA
        F[ITH, IW] = dt
        F[IV, IA] = dt
        if abs(w) < OMEGA_EPS:
            lin = v * dt + 0.5 * a * dt * dt
            bend_coef = 0.5 * v * dt * dt + a * dt**3 / 3.0
            bend = w * bend_coef
            F[IX, ITH] = -lin * sn - bend * c
            F[IX, IV] = dt * c - w * 0.5 * dt * dt * sn
            F[IX, IA] = 0.5 * dt * dt * c - w * dt**3 / 3.0 * sn
            F[IX, IW] = -bend_coef * sn
            F[IY, ITH] = lin * c - bend * sn
            F[IY, IV] = dt * sn + w * 0.5 * dt * dt * c
            F[IY, IA] = 0.5 * dt * dt * sn + w * dt**3 / 3.0 * c
            F[IY, IW] = bend_coef * c
        else:
            th1 = th + w * dt
            s1, c1 = math.sin(th1), math.cos(th1)
            sd, cd = _sin_diff(th, w * dt), _cos_diff(th, w * dt)
            w2, w3 = w * w, w * w * w
            # x' = x + (v*sd + a*dt*s1)/w + a*cd/w^2
            F[IX, ITH] = (v * cd + a * dt * c1) / w - a * sd / w2
            F[IX, IV] = sd / w
            F[IX, IA] = dt * s1 / w + cd / w2
            F[IX, IW] = (
                (v * c1 * dt + a * dt * dt * c1) / w
                - (v * sd + a * dt * s1) / w2
                - a * s1 * dt / w2
                - 2.0 * a * cd / w3
            )
            # y' = y + (-v*cd - a*dt*c1)/w + a*sd/w^2
            F[IY, ITH] = (v * sd + a * dt * s1) / w + a * cd / w2
            F[IY, IV] = -cd / w
            F[IY, IA] = -dt * c1 / w + sd / w2
            F[IY, IW] = (
                (v * s1 * dt + a * dt * dt * s1) / w
                - (-v * cd - a * dt * c1) / w2
                + a * c1 * dt / w2
                - 2.0 * a * sd / w3
            )
    return F


def step(model: ProcessModel | str, s, dt: float):
    """Advance a state by ``dt`` seconds under the model's closed-form transition.

    Accepts a :class:`KinematicState` (returned as one) or a 6-vector.
    """
    kind = model if isinstance(model, str) else model.kind
    if not dt > 0:
        raise ValueError("dt must be positive")
    if isinstance(s, KinematicState):
        return KinematicState.from_vector(_advance(kind, s.as_vector(), dt))
    return _advance(kind, np.asarray(s, dtype=np.float64), dt)


def jacobian(model: ProcessModel | str, s, dt: float) -> np.ndarray:
    kind = model if isinstance(model, str) else model.kind
    vec = s.as_vector() if isinstance(s, KinematicState) else np.asarray(s, dtype=np.float64)
    return _jacobian(kind, vec, dt)


def _condition(P: np.ndarray) -> np.ndarray:
    P = 0.5 * (P + P.T)
    eig = np.linalg.eigvalsh(P)
    lo = eig.min()
    if lo < -1e-9 * max(1.0, eig.max()):
        raise FilterDivergence(f"filter divergence: covariance eigenvalue {lo:.3e}")
    if lo < 0:
        vals, vecs = np.linalg.eigh(P)
        P = (vecs * np.clip(vals, 0.0, None)) @ vecs.T
        P = 0.5 * (P + P.T)
    return P


def ekf_predict(model: ProcessModel, g: Gaussian, dt: float) -> Gaussian:
    """Propagate mean through :func:`step` and covariance through ``F P F^T + Q``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    F = _jacobian(model.kind, g.mean, dt)
    mean = _advance(model.kind, g.mean, dt)
    P = F @ g.cov @ F.T + model.noise(dt)
    return Gaussian(mean, _condition(P))


_H_POS = np.zeros((2, STATE_DIM))
_H_POS[0, IX] = 1.0
_H_POS[1, IY] = 1.0


def ekf_update(g: Gaussian, z, r) -> Gaussian:
    """Fuse a position observation ``z = [x, y]`` with noise covariance ``r``."""
    z = np.asarray(z, dtype=np.float64).reshape(2)
    r = np.asarray(r, dtype=np.float64).reshape(2, 2)
    if np.max(np.abs(r - r.T)) > 1e-12 * max(1.0, np.max(np.abs(r))):
        raise ValueError("observation noise must be symmetric")
    S = _H_POS @ g.cov @ _H_POS.T + r
    if abs(np.linalg.det(S)) < 1e-300 or np.linalg.cond(S) > 1e15:
        raise np.linalg.LinAlgError("innovation covariance is singular")
    K = np.linalg.solve(S, _H_POS @ g.cov).T
    innovation = z - _H_POS @ g.mean
    mean = g.mean + K @ innovation
    # Joseph form keeps P symmetric PSD under round-off
    I_KH = np.eye(STATE_DIM) - K @ _H_POS
    P = I_KH @ g.cov @ I_KH.T + K @ r @ K.T
    return Gaussian(mean, _condition(P))


DEFAULT_INIT_STD = (0.5, 0.5, 0.1, 1.0, 0.5, 0.05)


def ekf_forecast(
    history: Sequence,
    model: ProcessModel | None = None,
    H: int = 6,
    pred_dt: float = 1.0,
    r=None,
    init_std: Sequence[float] = DEFAULT_INIT_STD,
) -> np.ndarray:
    """Filter a state history with position updates, then roll ``H`` predict-only steps.

    The filter starts from the full state of the oldest history entry.

    Returns:
        ``(H, 2)`` array of predicted world positions.
    """
    if len(history) < 2:
        raise ValueError("ekf_forecast needs at least two history states")
    model = model or ProcessModel("CTRV", q=BASELINE_Q)
    r = np.eye(2) * 0.25 if r is None else np.asarray(r, dtype=np.float64)
    first = history[0]
    g = Gaussian(KinematicState.from_agent(first).as_vector(), np.diag(np.square(init_std)))
    for prev, cur in zip(history[:-1], history[1:]):
        g = ekf_predict(model, g, cur.t - prev.t)
        g = ekf_update(g, [cur.x, cur.y], r)
    out = np.empty((H, 2))
    for h in range(H):
        g = ekf_predict(model, g, pred_dt)
        out[h] = g.mean[[IX, IY]]
    return out


BASELINE_Q = (0.01, 0.01, 0.001, 0.5, 0.5, 0.01)


class EKFForecaster(BaseEstimator):
    """Kalman-filter baseline exposed with the estimator API.

    ``fit`` is a no-op kept for pipeline compatibility; ``predict`` returns one
    ``(H, 2)`` world-frame trajectory per instance.
    """

    def __init__(self, model="CTRV", q=BASELINE_Q, obs_std=0.5, horizon=6, pred_dt=1.0):
        self.model = model
        self.q = q
        self.obs_std = obs_std
        self.horizon = horizon
        self.pred_dt = pred_dt

    def fit(self, X=None, y=None):
        self.process_model_ = ProcessModel(self.model, tuple(self.q))
        return self

    def predict(self, X) -> np.ndarray:
        pm = getattr(self, "process_model_", None) or ProcessModel(self.model, tuple(self.q))
        r = np.eye(2) * self.obs_std**2
        return np.stack([ekf_forecast(inst.history, pm, self.horizon, self.pred_dt, r) for inst in X])
