"""Contraction iteration, error-ball radius and post-hoc constants measured from logs."""

import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from app.controllers import FridayState, lqr_step
from app.errors import ConvergenceError, ErrorBallHypothesisError
from app.linalg import StabilityConstants
from app.logs import TrajectoryLog
from app.mlp import forward
from app.plant import Reference

RHO_Z_THRESHOLD = 1e-9


@dataclass(frozen=True)
class ErrorBallReport:
    radius: float
    r_z: float
    r_u: float
    feasibility_ok: bool
    denominator: float


def control_map(st: FridayState, x, ref: Reference, u: float) -> float:
    """F(u) = -K(x - x_r) + u_r - R_hat(x, u) with the state and network frozen"""
    with np.errstate(over="ignore", invalid="ignore"):
        r_hat = float(forward(st.net, st.features(x, u))[0])
    return lqr_step(st.gain_k, x, ref) - r_hat


def fixed_point_iterate(
    st: FridayState,
    x,
    ref: Reference,
    u0: float,
    tol: float,
    max_iter: int,
    gaps: Optional[List[float]] = None,
) -> Tuple[float, int]:
    """
    Iterate u <- F(u) until |u_{i+1} - u_i| <= tol.

    Args:
        gaps: If given, every successive gap |u_{i+1} - u_i| is appended

    Returns:
        (fixed point, index i of the first iterate whose next gap is within tol)

    Raises:
        ConvergenceError: After max_iter evaluations of F, carrying the last gap
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    u = float(u0)
    gap = math.inf
    for index in range(max_iter):
        u_next = control_map(st, x, ref, u)
        gap = abs(u_next - u)
        if gaps is not None:
            gaps.append(gap)
        u = u_next
        if gap <= tol:
            return u, index
        if not math.isfinite(gap):
            break
    raise ConvergenceError(
        f"fixed-point iteration did not converge (last gap {gap:.3e})", last_iterate=u, residual=gap, iterations=max_iter
    )


def error_ball_radius(consts: StabilityConstants, l_r: float, eps_m: float) -> ErrorBallReport:
    """
    Ultimate bound on ||z|| under a learning error eps_m.

    r   = sigma(Lambda^-1) * c2 c3 sqrt(c1) / (c1 lambda - c2 c3 rho L_R) * eps_m
    r_z = sigma(Lambda^-1) * (||Lambda z0|| + c2 c3 sqrt(c1) / (...) * eps_m)
    r_u = sigma(K) r_z + u_r_max + eps_m + R_max

    Raises:
        ErrorBallHypothesisError: If c1 lambda - c2 c3 rho L_R <= 0
    """
    if eps_m < 0:
        raise ValueError("eps_m must be non-negative")
    if l_r < 0:
        raise ValueError("l_r must be non-negative")
    denominator = consts.c1 * consts.lambda_ - consts.c2 * consts.c3 * consts.rho * l_r
    if not denominator > 0:
        raise ErrorBallHypothesisError(
            f"c1*lambda - c2*c3*rho*L_R = {denominator:.6g} <= 0; reduce zeta or the input rate", denominator=denominator
        )

    sigma_inv = float(np.linalg.norm(np.linalg.inv(consts.lam_chol), 2))
    gain = consts.c2 * consts.c3 * math.sqrt(consts.c1) / denominator
    radius = sigma_inv * gain * eps_m
    z0 = np.asarray(consts.z0, dtype=np.float64).ravel()
    if z0.size == 0:
        z0 = np.zeros(consts.lam_chol.shape[0])
    r_z = sigma_inv * (float(np.linalg.norm(consts.lam_chol @ z0)) + gain * eps_m)
    sigma_k = 0.0 if consts.gain_k is None else float(np.linalg.norm(consts.gain_k, 2))
    r_u = sigma_k * r_z + consts.u_r_max + eps_m + consts.r_max
    return ErrorBallReport(
        radius=radius,
        r_z=r_z,
        r_u=r_u,
        feasibility_ok=bool(r_z <= consts.r_x and r_u <= consts.r_u),
        denominator=denominator,
    )


def estimate_rho(log: TrajectoryLog) -> float:
    """max_k |u_k - u_{k-1}| / ||z_k|| over steps with ||z_k|| above a small threshold"""
    if len(log) < 2:
        raise ValueError("estimate_rho needs at least two logged steps")
    u = log.column("u")
    z = log.tracking_errors()
    du = np.abs(np.diff(u))
    zk = z[1:]
    mask = zk > RHO_Z_THRESHOLD
    if not np.any(mask):
        raise ValueError("every logged tracking error is below the threshold; rho is undefined")
    return float(np.max(du[mask] / zk[mask]))


def measure_learning_bounds(log: TrajectoryLog) -> Tuple[float, float]:
    """
    Post-hoc (eps_m, R_max): max |R - R_hat| and max |R| over rows where both are finite.
    """
    r_true = log.column("r_true")
    r_hat = log.column("r_hat")
    mask = np.isfinite(r_true) & np.isfinite(r_hat)
    if not np.any(mask):
        raise ValueError("no finite residual estimates in the log")
    return float(np.max(np.abs(r_true[mask] - r_hat[mask]))), float(np.max(np.abs(r_true[mask])))


def steady_state_error(log: TrajectoryLog, fraction: float = 0.2) -> float:
    """max ||z|| over the trailing fraction of the run"""
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    if not log.rows:
        raise ValueError("steady_state_error needs a non-empty log")
    z = log.tracking_errors()
    tail = max(1, int(math.ceil(fraction * len(z))))
    return float(np.max(z[-tail:]))
