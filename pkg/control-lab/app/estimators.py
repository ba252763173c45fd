"""Offline-trained residual estimators that can be plugged into the controller."""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from shared.logging_config import get_logger
from app.checkpoint import load_network
from app.dataset import ReplayDataset
from app.errors import EstimatorUnavailableError
from app.gp import GpModel, gp_fit, gp_grid_search, gp_predict
from app.mlp import MlpNetwork, forward, train_offline
from app.schemas import ExperimentConfig, PretrainedKind

logger = get_logger(__name__)


@dataclass
class NetworkEstimator:
    name: str
    net: MlpNetwork

    def predict(self, features: np.ndarray) -> float:
        with np.errstate(over="ignore", invalid="ignore"):
            return float(forward(self.net, features)[0])


@dataclass
class GpEstimator:
    model: GpModel
    name: str = "gp"

    def predict(self, features: np.ndarray) -> float:
        mean, _ = gp_predict(self.model, features)
        return mean


def fit_network_estimator(
    cfg: ExperimentConfig, dataset: ReplayDataset, sn_enabled: bool, seed: int
) -> Tuple[NetworkEstimator, float]:
    xs, ys = dataset.as_arrays()
    net, wall = train_offline(
        xs,
        ys,
        cfg.layer_sizes,
        cfg.training,
        epochs=cfg.estimator_comparison.offline_epochs,
        seed=seed,
        zeta=cfg.network.zeta,
        sn_enabled=sn_enabled,
        sn_tol=cfg.network.sn_tol,
    )
    name = PretrainedKind.SN_DNN.value if sn_enabled else PretrainedKind.DNN.value
    return NetworkEstimator(name=name, net=net), wall


def fit_gp_estimator(cfg: ExperimentConfig, dataset: ReplayDataset) -> Tuple[GpEstimator, float]:
    section = cfg.estimator_comparison
    xs, ys = dataset.as_arrays()
    if section.gp_grid_search:
        model = gp_grid_search(
            xs,
            ys,
            section.gp_lengthscale_grid,
            section.gp_signal_var_grid,
            section.gp_noise_var_grid,
            jitter=section.gp_jitter,
        )
    else:
        model = gp_fit(xs, ys, section.gp_lengthscale, section.gp_signal_var, section.gp_noise_var, section.gp_jitter)
    logger.info("gp_fit_completed", samples=len(xs), wall_time_s=round(model.fit_wall_time, 4))
    return GpEstimator(model=model), model.fit_wall_time


def fit_estimator(
    cfg: ExperimentConfig, kind: PretrainedKind, dataset: ReplayDataset, seed: int = 0
) -> Tuple[object, float]:
    """Train the requested estimator on an offline dataset; returns (estimator, wall time s)"""
    if len(dataset) == 0:
        raise EstimatorUnavailableError("offline dataset is empty")
    kind = PretrainedKind(kind)
    if kind == PretrainedKind.GP:
        return fit_gp_estimator(cfg, dataset)
    return fit_network_estimator(cfg, dataset, sn_enabled=kind == PretrainedKind.SN_DNN, seed=seed)


def load_pretrained_estimator(cfg: ExperimentConfig, seed: int = 0) -> Tuple[object, float]:
    """
    Build the estimator a friday_with_pretrained run needs, from a network
    checkpoint (dnn / sn_dnn) or by fitting on the configured offline CSV.

    Raises:
        EstimatorUnavailableError: If neither source is configured
    """
    section = cfg.controller
    kind: Optional[PretrainedKind] = section.pretrained
    if kind is None:
        raise EstimatorUnavailableError("controller.pretrained is not set")
    if kind != PretrainedKind.GP and section.checkpoint:
        return NetworkEstimator(name=kind.value, net=load_network(section.checkpoint)), 0.0
    if section.offline_data:
        dataset = ReplayDataset.load_csv(section.offline_data)
        return fit_estimator(cfg, kind, dataset, seed=seed)
    raise EstimatorUnavailableError(f"pretrained '{kind.value}' needs controller.offline_data or controller.checkpoint")
