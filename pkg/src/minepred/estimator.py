"""Estimator-style wrappers around the network and the Kalman baseline."""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import nn
from .evaluation import Prediction, min_ade, predictions_from_modes
from .nn.model import ArchSpec, TrajectoryNet
from .physics import EKFForecaster
from .raster import get_config
from .training import LossConfig, TrainConfig, TrainingData, prepare, train, write_history_csv
from .validation import check_instances


class MultimodalPredictor(BaseEstimator):
    """Raster CNN predicting ``n_modes`` trajectories with probabilities.

    ``fit`` accepts a list of instances or an already rendered
    :class:`~minepred.training.TrainingData` (useful when several models share
    one dataset).
    """

    def __init__(
        self,
        n_modes=3,
        horizon=6,
        raster="train",
        alpha=1.0,
        angle_threshold=math.pi / 4,
        loss="best-mode",
        batch_size=64,
        learning_rate=1e-4,
        epochs=10,
        max_steps=None,
        hidden=128,
        channels=(3, 16, 32, 64),
        output_scale=10.0,
        random_state=0,
    ):
        self.n_modes = n_modes
        self.horizon = horizon
        self.raster = raster
        self.alpha = alpha
        self.angle_threshold = angle_threshold
        self.loss = loss
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.max_steps = max_steps
        self.hidden = hidden
        self.channels = channels
        self.output_scale = output_scale
        self.random_state = random_state

    def _data(self, X) -> TrainingData:
        if isinstance(X, TrainingData):
            return X
        return prepare(check_instances(X, horizon=self.horizon), self.raster)

    def loss_config(self) -> LossConfig:
        return LossConfig(self.alpha, self.angle_threshold, self.n_modes, self.loss)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            epochs=self.epochs if self.epochs is not None else 10**9,
            max_steps=self.max_steps,
            seed=self.random_state,
        )

    def build(self) -> TrajectoryNet:
        spec = ArchSpec(
            horizon=self.horizon,
            n_modes=self.n_modes,
            channels=tuple(self.channels),
            hidden=self.hidden,
            raster=get_config(self.raster),
            output_scale=self.output_scale,
        )
        return TrajectoryNet(spec, seed=self.random_state)

    def fit(self, X, y=None, X_val=None, callback=None):
        data = self._data(X)
        if data.targets.shape[1] != self.horizon:
            raise ValueError(f"targets have horizon {data.targets.shape[1]}, estimator expects {self.horizon}")
        val = self._data(X_val) if X_val is not None else None
        net = self.build()
        result = train(data, net, self.train_config(), self.loss_config(), val_data=val, callback=callback)
        self.net_ = result.model
        self.history_ = result.history
        self.step_losses_ = result.step_losses
        self.raster_config_ = net.spec.raster
        return self

    @classmethod
    def from_checkpoint(cls, path) -> "MultimodalPredictor":
        net = nn.load(path)
        est = cls(n_modes=net.spec.n_modes, horizon=net.spec.horizon, raster=net.spec.raster, hidden=net.spec.hidden,
                  channels=net.spec.channels, output_scale=net.spec.output_scale)
        est.net_ = net
        est.history_ = []
        est.step_losses_ = []
        est.raster_config_ = net.spec.raster
        return est

    def save(self, path, net: TrajectoryNet | None = None) -> None:
        """Write ``net`` (default: the fitted network) with this estimator's parameters as metadata."""
        if net is None:
            check_is_fitted(self, "net_")
            net = self.net_
        nn.save(net, path, extra={"params": {k: str(v) for k, v in self.get_params().items()}})

    def predict_modes(self, X, batch_size: int = 64) -> list:
        """Agent-frame :class:`~minepred.nn.ModeSet` per instance."""
        check_is_fitted(self, "net_")
        data = self._data(X)
        out = []
        for lo in range(0, len(data), batch_size):
            part = data.subset(slice(lo, lo + batch_size))
            out.extend(self.net_.predict_modes(part.images, part.states))
        return out

    def predict_predictions(self, X) -> list[Prediction]:
        instances = check_instances(X)
        tag = f"model-M{self.n_modes}"
        return predictions_from_modes(instances, self.predict_modes(instances), tag)

    def predict(self, X) -> np.ndarray:
        """World-frame trajectories, shape ``(N, M, H, 2)``."""
        return np.stack([p.modes for p in self.predict_predictions(X)])

    def predict_proba(self, X) -> np.ndarray:
        return np.stack([ms.probs for ms in self.predict_modes(X)])

    def score(self, X, y=None) -> float:
        """Negative mean minADE (higher is better)."""
        instances = check_instances(X)
        preds = self.predict_predictions(instances)
        return -float(np.mean([min_ade(p, inst.future) for p, inst in zip(preds, instances)]))

    def write_history(self, path) -> None:
        check_is_fitted(self, "net_")
        write_history_csv(self.history_, path)


def ekf_predictions(instances, forecaster: EKFForecaster | None = None) -> list[Prediction]:
    forecaster = forecaster or EKFForecaster()
    instances = check_instances(instances, min_history=2)
    first = instances[0]
    forecaster.set_params(horizon=first.horizon, pred_dt=float(first.future_t[0] - first.anchor.t))
    tracks = forecaster.fit().predict(instances)
    return [Prediction(inst.id, track[None], np.ones(1), "ekf") for inst, track in zip(instances, tracks)]
