"""Small dense numerics: spectral norm, CARE/LQR synthesis and stability constants."""

from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np
from scipy import linalg as sla

from shared.logging_config import get_logger
from app.errors import (
    ControllabilityError,
    ConvergenceError,
    DimensionError,
    NonFiniteValueError,
    NotPositiveDefiniteError,
)

logger = get_logger(__name__)

SYMMETRY_TOL = 1e-10
INITIAL_GAIN_SCALES = (1.0, 10.0, 100.0)


def as_matrix(value, name: str = "matrix") -> np.ndarray:
    """Coerce scalars/lists into a finite 2-D float64 array."""
    m = np.atleast_2d(np.asarray(value, dtype=np.float64))
    if m.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NonFiniteValueError(f"{name} has non-finite entries")
    return m


def is_hurwitz(a: np.ndarray) -> bool:
    """True when every eigenvalue of a has strictly negative real part"""
    return bool(np.all(np.linalg.eigvals(a).real < 0.0))


@dataclass(frozen=True)
class RiccatiSolution:
    p: np.ndarray
    gain_k: np.ndarray
    residual_norm: float
    iterations: int = 0


@dataclass(frozen=True)
class StabilityConstants:
    lambda_: float
    c1: float
    c2: float
    c3: float
    lam_chol: np.ndarray
    rho: float
    r_x: float
    r_u: float
    # Trajectory context consumed by the error-ball report
    z0: np.ndarray = field(default_factory=lambda: np.zeros(0))
    u_r_max: float = 0.0
    r_max: float = 0.0
    gain_k: Optional[np.ndarray] = None

    def with_context(self, z0, u_r_max: float, r_max: float, gain_k=None) -> "StabilityConstants":
        return replace(
            self,
            z0=np.asarray(z0, dtype=np.float64).ravel(),
            u_r_max=float(u_r_max),
            r_max=float(r_max),
            gain_k=self.gain_k if gain_k is None else as_matrix(gain_k, "gain_k"),
        )


def power_iteration(
    w, tol: float = 1e-12, max_iter: int = 10000, v0: Optional[np.ndarray] = None
) -> Tuple[float, np.ndarray]:
    """
    Largest singular value of w by power iteration on w^T w.

    Args:
        w: Matrix to analyze (must not be all zeros)
        tol: Relative change of the estimate that ends the iteration
        max_iter: Iteration cap
        v0: Optional start vector; defaults to the normalized all-ones vector

    Returns:
        (sigma, v) where v is the converged right singular vector estimate

    Raises:
        ConvergenceError: If the estimate is still moving after max_iter steps
    """
    w = np.asarray(w, dtype=np.float64)
    n = w.shape[1]
    if not np.any(w):
        raise ValueError("spectral norm of an all-zero matrix is undefined here")

    if v0 is None or v0.shape != (n,) or not np.any(v0):
        v = np.full(n, 1.0 / np.sqrt(n))
    else:
        v = v0 / np.linalg.norm(v0)

    wv = w @ v
    sigma = np.linalg.norm(wv)
    if sigma == 0.0:
        # start vector sits in the null space; restart on the heaviest column
        v = np.zeros(n)
        v[int(np.argmax(np.linalg.norm(w, axis=0)))] = 1.0
        wv = w @ v
        sigma = np.linalg.norm(wv)

    for _ in range(max_iter):
        g = w.T @ wv
        g_norm = np.linalg.norm(g)
        if g_norm == 0.0:
            return float(sigma), v
        v = g / g_norm
        wv = w @ v
        new_sigma = np.linalg.norm(wv)
        if abs(new_sigma - sigma) <= tol * new_sigma:
            return float(new_sigma), v
        sigma = new_sigma

    raise ConvergenceError(
        f"power iteration did not converge in {max_iter} iterations",
        last_iterate=float(sigma),
        iterations=max_iter,
    )


def spectral_norm(w, tol: float = 1e-12, max_iter: int = 10000) -> float:
    """Largest singular value of w (deterministic all-ones start vector)."""
    sigma, _ = power_iteration(w, tol=tol, max_iter=max_iter)
    return sigma


def care_residual(a: np.ndarray, b: np.ndarray, q: np.ndarray, r: np.ndarray, p: np.ndarray) -> float:
    """Frobenius norm of A^T P + P A - P B R^-1 B^T P + Q"""
    pb = p @ b
    res = a.T @ p + p @ a - pb @ np.linalg.solve(r, pb.T) + q
    return float(np.linalg.norm(res, "fro"))


def _check_controllable(a: np.ndarray, b: np.ndarray) -> None:
    n = a.shape[0]
    blocks = [b]
    for _ in range(n - 1):
        blocks.append(a @ blocks[-1])
    ctrb = np.hstack(blocks)
    if np.linalg.matrix_rank(ctrb) < n:
        raise ControllabilityError("(A, B) is not controllable")


def _initial_stabilizing_gain(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """
    Find K0 with A - B K0 Hurwitz: zero gain, then a pole-shifted Lyapunov
    construction, then a scan over alpha * B^T.
    """
    n, m = b.shape
    k0 = np.zeros((m, n))
    if is_hurwitz(a):
        return k0

    # Shift: (A + beta I) Z + Z (A + beta I)^T = 2 B B^T, K0 = B^T Z^-1 places
    # every closed-loop eigenvalue at real part -beta.
    beta = max(1.0, float(np.max(np.linalg.eigvals(a).real)) + 1.0, float(np.linalg.norm(a, 2)))
    shifted = a + beta * np.eye(n)
    try:
        z = sla.solve_continuous_lyapunov(shifted, 2.0 * b @ b.T)
        k0 = np.linalg.solve(z.T, b).T
        if np.all(np.isfinite(k0)) and is_hurwitz(a - b @ k0):
            return k0
    except (np.linalg.LinAlgError, ValueError):
        pass

    for alpha in INITIAL_GAIN_SCALES:
        k0 = alpha * b.T
        if is_hurwitz(a - b @ k0):
            return k0
    raise ControllabilityError("no stabilizing initial gain found")


def solve_care(a, b, q, r, tol: float = 1e-10, max_iter: int = 100) -> RiccatiSolution:
    """
    Solve the continuous-time ARE by Newton-Kleinman iteration.

    Args:
        a, b: System matrices (n x n, n x m); the pair must be controllable
        q: State weight, symmetric positive semidefinite (n x n)
        r: Input weight, symmetric positive definite (m x m)
        tol: Frobenius-norm tolerance on the ARE residual, relative to max(1, ||Q||_F)

    Returns:
        RiccatiSolution with P, the LQR gain and the final residual

    Raises:
        ControllabilityError: Uncontrollable pair or no stabilizing start
        ConvergenceError: Residual above tol when the iteration stalls
    """
    a, b, q, r = as_matrix(a, "a"), as_matrix(b, "b"), as_matrix(q, "q"), as_matrix(r, "r")
    n = a.shape[0]
    if a.shape != (n, n) or b.shape[0] != n or q.shape != (n, n) or r.shape != (b.shape[1], b.shape[1]):
        raise DimensionError(f"incompatible shapes a={a.shape} b={b.shape} q={q.shape} r={r.shape}")
    if not np.allclose(q, q.T, atol=SYMMETRY_TOL) or not np.allclose(r, r.T, atol=SYMMETRY_TOL):
        raise ValueError("q and r must be symmetric")
    try:
        np.linalg.cholesky(r)
    except np.linalg.LinAlgError as e:
        raise NotPositiveDefiniteError("r must be positive definite") from e

    _check_controllable(a, b)
    k = _initial_stabilizing_gain(a, b)
    threshold = tol * max(1.0, float(np.linalg.norm(q, "fro")))

    p = np.zeros((n, n))
    residual = np.inf
    best_residual, best_p, best_k = np.inf, p, k
    iteration = 0
    for iteration in range(1, max_iter + 1):
        a_cl = a - b @ k
        # (A - BK)^T P + P (A - BK) = -(Q + K^T R K)
        p = sla.solve_continuous_lyapunov(a_cl.T, -(q + k.T @ r @ k))
        p = 0.5 * (p + p.T)
        k = np.linalg.solve(r, b.T @ p)
        residual = care_residual(a, b, q, r, p)
        if residual <= threshold:
            break
        if iteration > 3 and residual >= best_residual:
            # stalled at rounding level
            residual, p, k = best_residual, best_p, best_k
            break
        if residual < best_residual:
            best_residual, best_p, best_k = residual, p, k

    if residual > threshold:
        raise ConvergenceError(
            f"Newton-Kleinman residual {residual:.3e} above tolerance {threshold:.1e}",
            last_iterate=p,
            residual=residual,
            iterations=iteration,
        )
    if not is_hurwitz(a - b @ k):
        raise ConvergenceError("CARE solution does not stabilize the closed loop", last_iterate=p, residual=residual)

    logger.debug("care_solved", iterations=iteration, residual=residual, states=n)
    return RiccatiSolution(p=p, gain_k=k, residual_norm=residual, iterations=iteration)


def lqr_gain(sol: RiccatiSolution, b, r) -> np.ndarray:
    """K = R^-1 B^T P"""
    b, r = as_matrix(b, "b"), as_matrix(r, "r")
    try:
        return np.linalg.solve(r, b.T @ sol.p)
    except np.linalg.LinAlgError as e:
        raise ValueError("r is singular") from e


def symmetric_eigenvalues(m: np.ndarray) -> np.ndarray:
    """Ascending eigenvalues of the symmetric part of m"""
    return np.linalg.eigvalsh(0.5 * (m + m.T))


def stability_constants(
    sol: RiccatiSolution, a, b, k, rho: float, r_x: float, r_u: float
) -> StabilityConstants:
    """
    Constants of the exponential error-ball bound.

    lambda = -lambda_max(P A_cl + A_cl^T P), c1 = lambda_min(P), c2 = lambda_max(P),
    c3 = 2 lambda_max(P) sigma(B), and Lambda with P = Lambda^T Lambda.
    """
    if rho < 0:
        raise ValueError("rho must be non-negative")
    a, b, k = as_matrix(a, "a"), as_matrix(b, "b"), as_matrix(k, "k")
    p = sol.p
    try:
        lower = np.linalg.cholesky(p)
    except np.linalg.LinAlgError as e:
        raise NotPositiveDefiniteError("P is not positive definite") from e

    a_cl = a - b @ k
    p_eigs = symmetric_eigenvalues(p)
    lam = -float(symmetric_eigenvalues(p @ a_cl + a_cl.T @ p)[-1])
    c1, c2 = float(p_eigs[0]), float(p_eigs[-1])
    c3 = 2.0 * c2 * float(np.linalg.norm(b, 2))
    return StabilityConstants(
        lambda_=lam,
        c1=c1,
        c2=c2,
        c3=c3,
        lam_chol=lower.T,
        rho=float(rho),
        r_x=float(r_x),
        r_u=float(r_u),
        z0=np.zeros(a.shape[0]),
        gain_k=k,
    )
