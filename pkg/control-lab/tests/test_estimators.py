import math

import numpy as np
import pytest

from app.checkpoint import save_network
from app.dataset import ReplayDataset
from app.errors import EstimatorUnavailableError
from app.estimators import GpEstimator, NetworkEstimator, fit_estimator, load_pretrained_estimator
from app.mlp import spectral_product
from app.schemas import PretrainedKind


@pytest.fixture
def offline_dataset():
    """60 samples of a smooth residual R = 0.5 p - 0.2 u"""
    rng = np.random.default_rng(21)
    ds = ReplayDataset()
    for p, pdot, u in rng.uniform(-1, 1, size=(60, 3)):
        ds.append([p, pdot], u, 0.5 * p - 0.2 * u)
    return ds


@pytest.fixture
def comparison_config(tiny_config):
    return tiny_config.override({"estimator_comparison": {"offline_epochs": 2}})


def test_fit_empty_dataset(comparison_config):
    """Test no estimator can be fitted on an empty dataset"""
    with pytest.raises(EstimatorUnavailableError):
        fit_estimator(comparison_config, PretrainedKind.GP, ReplayDataset())


def test_fit_gp_estimator(comparison_config, offline_dataset):
    """Test the GP estimator interpolates its training data closely"""
    estimator, wall = fit_estimator(comparison_config, PretrainedKind.GP, offline_dataset)
    assert isinstance(estimator, GpEstimator)
    assert wall > 0.0
    xs, ys = offline_dataset.as_arrays()
    assert estimator.predict(xs[0]) == pytest.approx(ys[0, 0], abs=0.1)


def test_fit_gp_grid_search(comparison_config, offline_dataset):
    """Test the grid-search variant reports the summed fit time"""
    cfg = comparison_config.override(
        {"estimator_comparison": {"gp_grid_search": True, "gp_lengthscale_grid": [0.5, 1.0], "gp_signal_var_grid": [1.0]}}
    )
    estimator, wall = fit_estimator(cfg, "gp", offline_dataset)
    assert estimator.model.lengthscale in (0.5, 1.0)
    assert wall == estimator.model.fit_wall_time


@pytest.mark.parametrize("kind, normalized", [(PretrainedKind.SN_DNN, True), (PretrainedKind.DNN, False)])
def test_fit_network_estimators(comparison_config, offline_dataset, kind, normalized):
    """Test both network estimators train and only the SN variant is bounded"""
    estimator, wall = fit_estimator(comparison_config, kind, offline_dataset, seed=0)
    assert isinstance(estimator, NetworkEstimator)
    assert estimator.name == kind.value
    assert wall >= 0.0
    assert math.isfinite(estimator.predict(np.array([0.1, 0.2, 0.3])))
    if normalized:
        assert spectral_product(estimator.net) <= comparison_config.network.zeta * (1 + 1e-9)


def test_load_pretrained_from_checkpoint(tmp_path, comparison_config, offline_dataset):
    """Test a dnn checkpoint is loaded without refitting"""
    trained, _ = fit_estimator(comparison_config, PretrainedKind.DNN, offline_dataset)
    path = tmp_path / "dnn.rclnet"
    save_network(trained.net, str(path))
    cfg = comparison_config.override(
        {"controller": {"kind": "friday_with_pretrained", "pretrained": "dnn", "checkpoint": str(path)}}
    )
    estimator, wall = load_pretrained_estimator(cfg)
    assert wall == 0.0
    features = np.array([0.3, -0.1, 0.4])
    assert estimator.predict(features) == trained.predict(features)


def test_load_pretrained_from_offline_csv(tmp_path, comparison_config, offline_dataset):
    """Test a gp estimator is fitted on the configured CSV"""
    path = tmp_path / "offline.csv"
    offline_dataset.dump_csv(str(path))
    cfg = comparison_config.override(
        {"controller": {"kind": "friday_with_pretrained", "pretrained": "gp", "offline_data": str(path)}}
    )
    estimator, _ = load_pretrained_estimator(cfg)
    assert isinstance(estimator, GpEstimator)
    assert estimator.model.train_inputs.shape == (60, 3)


def test_load_pretrained_without_source(comparison_config):
    """Test a pretrained run with no checkpoint and no data is rejected"""
    cfg = comparison_config.override({"controller": {"kind": "friday_with_pretrained", "pretrained": "sn_dnn"}})
    with pytest.raises(EstimatorUnavailableError):
        load_pretrained_estimator(cfg)
