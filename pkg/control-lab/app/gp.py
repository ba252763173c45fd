"""Exact Gaussian-process regression with a Matern-5/2 kernel."""

import itertools
import math
import time
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular
from scipy.spatial.distance import cdist

from shared.logging_config import get_logger
from app.errors import DimensionError, GpFitError

logger = get_logger(__name__)

SQRT5 = math.sqrt(5.0)


def _check_hyper(lengthscale: float, signal_var: float) -> None:
    if lengthscale <= 0 or signal_var <= 0:
        raise ValueError("lengthscale and signal_var must be positive")


def matern52(x, y, lengthscale: float, signal_var: float) -> float:
    """k = s2 (1 + sqrt5 d / l + 5 d^2 / (3 l^2)) exp(-sqrt5 d / l), d = ||x - y||"""
    _check_hyper(lengthscale, signal_var)
    d = float(np.linalg.norm(np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)))
    s = SQRT5 * d / lengthscale
    return signal_var * (1.0 + s + s * s / 3.0) * math.exp(-s)


def matern52_matrix(xs, ys, lengthscale: float, signal_var: float) -> np.ndarray:
    """Kernel matrix between the rows of xs and ys"""
    _check_hyper(lengthscale, signal_var)
    s = SQRT5 * cdist(np.atleast_2d(xs), np.atleast_2d(ys)) / lengthscale
    return signal_var * (1.0 + s + s * s / 3.0) * np.exp(-s)


@dataclass(frozen=True)
class GpModel:
    train_inputs: np.ndarray
    alpha: np.ndarray
    chol_l: np.ndarray
    lengthscale: float
    signal_var: float
    noise_var: float
    jitter: float = 1e-8
    fit_wall_time: float = 0.0


def gp_fit(
    xs,
    ys,
    lengthscale: float = 1.0,
    signal_var: float = 1.0,
    noise_var: float = 1e-2,
    jitter: float = 1e-8,
) -> GpModel:
    """
    Factorize K + (noise_var + jitter) I and solve for alpha.

    Raises:
        GpFitError: If the Cholesky factorization fails
    """
    x = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    y = np.asarray(ys, dtype=np.float64).ravel()
    if x.shape[0] == 0:
        raise ValueError("gp_fit needs at least one training point")
    if x.shape[0] != y.size:
        raise DimensionError(f"{x.shape[0]} inputs but {y.size} targets")
    if noise_var <= 0:
        raise ValueError("noise_var must be positive")

    start = time.perf_counter()
    k = matern52_matrix(x, x, lengthscale, signal_var)
    k[np.diag_indices_from(k)] += noise_var + jitter
    try:
        lower = cholesky(k, lower=True)
    except LinAlgError as e:
        raise GpFitError(f"kernel matrix is not positive definite (jitter={jitter:g}); increase the jitter") from e
    alpha = cho_solve((lower, True), y)
    wall = time.perf_counter() - start

    logger.debug("gp_fit_completed", samples=x.shape[0], lengthscale=lengthscale, wall_time_s=round(wall, 4))
    return GpModel(
        train_inputs=x,
        alpha=alpha,
        chol_l=lower,
        lengthscale=float(lengthscale),
        signal_var=float(signal_var),
        noise_var=float(noise_var),
        jitter=float(jitter),
        fit_wall_time=wall,
    )


def gp_predict_batch(m: GpModel, xs) -> Tuple[np.ndarray, np.ndarray]:
    """Predictive means and variances (clipped at 0) for the rows of xs"""
    k_star = matern52_matrix(m.train_inputs, xs, m.lengthscale, m.signal_var)
    mean = k_star.T @ m.alpha
    v = solve_triangular(m.chol_l, k_star, lower=True)
    var = np.maximum(m.signal_var - np.sum(v * v, axis=0), 0.0)
    return mean, var


def gp_predict(m: GpModel, x) -> Tuple[float, float]:
    mean, var = gp_predict_batch(m, np.atleast_2d(np.asarray(x, dtype=np.float64)))
    return float(mean[0]), float(var[0])


def log_marginal_likelihood(m: GpModel, ys) -> float:
    """log p(y | X) = -y^T alpha / 2 - sum log diag(L) - n log(2 pi) / 2"""
    y = np.asarray(ys, dtype=np.float64).ravel()
    n = y.size
    return float(-0.5 * y @ m.alpha - np.sum(np.log(np.diag(m.chol_l))) - 0.5 * n * math.log(2.0 * math.pi))


def gp_grid_search(
    xs,
    ys,
    lengthscales: Sequence[float],
    signal_vars: Sequence[float],
    noise_vars: Sequence[float],
    jitter: float = 1e-8,
) -> GpModel:
    """
    Fit every hyperparameter combination and keep the highest marginal likelihood.

    The returned model's fit_wall_time is the total over all fits.
    """
    best, best_lml, total = None, -math.inf, 0.0
    for lengthscale, signal_var, noise_var in itertools.product(lengthscales, signal_vars, noise_vars):
        try:
            model = gp_fit(xs, ys, lengthscale, signal_var, noise_var, jitter)
        except GpFitError as e:
            logger.warning("gp_grid_point_skipped", lengthscale=lengthscale, noise_var=noise_var, error=str(e))
            continue
        total += model.fit_wall_time
        lml = log_marginal_likelihood(model, ys)
        if lml > best_lml:
            best, best_lml = model, lml
    if best is None:
        raise GpFitError("no hyperparameter combination produced a positive-definite kernel matrix")

    logger.info(
        "gp_grid_search_completed",
        lengthscale=best.lengthscale,
        signal_var=best.signal_var,
        noise_var=best.noise_var,
        log_marginal_likelihood=round(best_lml, 6),
        wall_time_s=round(total, 4),
    )
    return GpModel(
        train_inputs=best.train_inputs,
        alpha=best.alpha,
        chol_l=best.chol_l,
        lengthscale=best.lengthscale,
        signal_var=best.signal_var,
        noise_var=best.noise_var,
        jitter=best.jitter,
        fit_wall_time=total,
    )
