"""Diagnostic check suite: Lipschitz audit, contraction and error-ball consistency."""

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import List, Optional

import numpy as np

from shared.events import HookEvent
from shared.logging_config import get_logger
from app.controllers import FridayController, FridayState
from app.diagnostics import (
    error_ball_radius,
    estimate_rho,
    fixed_point_iterate,
    measure_learning_bounds,
    steady_state_error,
)
from app.errors import ConvergenceError, ErrorBallHypothesisError
from app.linalg import stability_constants
from app.logs import TrajectoryLog
from app.mlp import empirical_lipschitz, normalize_lipschitz, spectral_product
from app.plant import reference_at
from app.schemas import ControllerKind, ExperimentConfig
from app.service import run_trial, synthesize_gain

logger = get_logger(__name__)

LIPSCHITZ_SLACK = 1e-9
# Gaps below this are dominated by rounding and are left out of the rate check
GAP_FLOOR = 1e-8
RATE_SLACK = 1e-5


class CheckStatus(str, Enum):
    PASSED = "passed"
    FAILED = "failed"


@dataclass
class CheckResult:
    name: str
    status: CheckStatus
    details: dict = field(default_factory=dict)

    @property
    def failed(self) -> bool:
        return self.status == CheckStatus.FAILED


def _friday_config(cfg: ExperimentConfig, **network) -> ExperimentConfig:
    updates = {"controller": {"kind": ControllerKind.FRIDAY.value, "pretrained": None}}
    if network:
        updates["network"] = network
    return cfg.override(updates)


def _seed(cfg: ExperimentConfig) -> int:
    return cfg.seeds[0] if cfg.seeds else 0


def lipschitz_audit(cfg: ExperimentConfig) -> tuple:
    """
    Spectral-product audit at every prediction of a full FRIDAY run, then an
    empirical Lipschitz estimate of the final (normalized) network.

    Returns:
        (CheckResult, the run's TrajectoryLog)
    """
    run_cfg = _friday_config(cfg)
    zeta = run_cfg.network.zeta
    bound = zeta * (1.0 + LIPSCHITZ_SLACK)
    products: List[float] = []
    states: List[FridayState] = []

    def audit(event: HookEvent, st: FridayState) -> None:
        if event == HookEvent.PREDICTED:
            products.append(spectral_product(st.net.copy(), tol=st.sn_tol))

    def attach(controller: FridayController) -> None:
        controller.state.hooks.append(audit)
        states.append(controller.state)

    log = run_trial(run_cfg, _seed(cfg), instrument=attach)
    final = states[0].net.copy()
    normalize_lipschitz(final, tol=run_cfg.network.sn_tol)
    box = cfg.diagnostics.lipschitz_box
    empirical = empirical_lipschitz(final, [-box] * 3, [box] * 3, cfg.diagnostics.lipschitz_pairs, seed=_seed(cfg))

    violations = sum(1 for value in products if value > bound)
    ok = violations == 0 and empirical <= bound and not log.diverged
    details = {
        "steps": len(products),
        "max_spectral_product": max(products, default=0.0),
        "violations": violations,
        "empirical_lipschitz": empirical,
        "zeta": zeta,
    }
    return CheckResult("lipschitz_audit", CheckStatus.PASSED if ok else CheckStatus.FAILED, details), log


def contraction_check(cfg: ExperimentConfig) -> CheckResult:
    """
    Fixed-point iteration of u -> F(u) at frozen states sampled from a live run
    with zeta < 1: every start must reach the same point, gaps must shrink by
    at most zeta per iteration.
    """
    diag = cfg.diagnostics
    run_cfg = _friday_config(cfg, zeta=diag.contraction_zeta)
    n_steps = run_cfg.simulation.n_steps
    picks = set(np.linspace(0, max(n_steps - 1, 0), diag.contraction_states).round().astype(int).tolist())
    frozen = []

    def snapshot(k, controller, state, ref) -> None:
        if k in picks:
            net = controller.state.net.copy()
            normalize_lipschitz(net, tol=run_cfg.network.sn_tol)
            frozen.append((replace(controller.state, net=net, hooks=[]), state.x, ref))

    run_trial(run_cfg, _seed(cfg), on_step=snapshot)

    zeta = diag.contraction_zeta
    worst_spread, worst_rate, failures = 0.0, 0.0, 0
    for st, x, ref in frozen:
        points = []
        for u0 in diag.contraction_u0:
            gaps: List[float] = []
            try:
                u_star, _ = fixed_point_iterate(st, x, ref, u0, diag.contraction_tol, max_iter=10000, gaps=gaps)
            except ConvergenceError as e:
                logger.warning("contraction_not_converged", u0=u0, error=str(e), error_type=type(e).__name__)
                failures += 1
                continue
            points.append(u_star)
            for before, after in zip(gaps[:-1], gaps[1:]):
                if before > GAP_FLOOR:
                    worst_rate = max(worst_rate, after / before)
        if points:
            worst_spread = max(worst_spread, max(points) - min(points))

    ok = failures == 0 and bool(frozen) and worst_spread <= diag.contraction_agreement and worst_rate <= zeta + RATE_SLACK
    details = {
        "states": len(frozen),
        "starts": len(diag.contraction_u0),
        "max_spread": worst_spread,
        "max_gap_ratio": worst_rate,
        "non_converged": failures,
        "zeta": zeta,
    }
    return CheckResult("contraction", CheckStatus.PASSED if ok else CheckStatus.FAILED, details)


def _error_ball_config(cfg: ExperimentConfig) -> ExperimentConfig:
    zeta = cfg.diagnostics.error_ball_zeta
    return _friday_config(cfg) if zeta is None else _friday_config(cfg, zeta=zeta)


def error_ball_check(cfg: ExperimentConfig, log: Optional[TrajectoryLog] = None) -> CheckResult:
    """
    Post-hoc error-ball report from a finished FRIDAY run against its steady-state error.

    The run uses diagnostics.error_ball_zeta as its Lipschitz budget when set; without
    a log one is simulated. The check passes only if the bound's hypothesis holds,
    the report is feasible for (r_x, r_u) and the steady-state error lies in the ball.
    """
    run_cfg = _error_ball_config(cfg)
    if log is None:
        log = run_trial(run_cfg, _seed(cfg))
    if log.diverged or len(log) < 2:
        return CheckResult("error_ball", CheckStatus.FAILED, {"reason": "run diverged or too short"})
    l_r = run_cfg.network.zeta
    nominal, sol = synthesize_gain(run_cfg)
    rho = estimate_rho(log)
    eps_m, r_max = measure_learning_bounds(log)
    t = log.column("t")
    u_r_max = max(abs(reference_at(run_cfg.reference, float(tk), nominal.mass).u_r) for tk in t)
    z0 = [log.rows[0].p - log.rows[0].pr, log.rows[0].pdot - log.rows[0].prdot]
    consts = stability_constants(
        sol, nominal.a, nominal.b, sol.gain_k, rho, cfg.diagnostics.r_x, cfg.diagnostics.r_u
    ).with_context(z0=z0, u_r_max=u_r_max, r_max=r_max)
    steady = steady_state_error(log, cfg.diagnostics.steady_state_fraction)
    details = {"rho": rho, "l_r": l_r, "eps_m": eps_m, "r_max": r_max, "steady_state_error": steady}

    try:
        report = error_ball_radius(consts, l_r=l_r, eps_m=eps_m)
    except ErrorBallHypothesisError as e:
        details.update(denominator=e.denominator, reason="hypothesis violated")
        logger.warning("error_ball_hypothesis_violated", denominator=e.denominator, rho=rho, l_r=l_r)
        return CheckResult("error_ball", CheckStatus.FAILED, details)

    details.update(
        radius=report.radius,
        r_z=report.r_z,
        r_u=report.r_u,
        feasible=report.feasibility_ok,
        denominator=report.denominator,
    )
    if not report.feasibility_ok:
        details["reason"] = "bound leaves the feasible set"
    elif steady > report.radius:
        details["reason"] = "steady-state error outside the ball"
    ok = report.feasibility_ok and steady <= report.radius
    return CheckResult("error_ball", CheckStatus.PASSED if ok else CheckStatus.FAILED, details)


def run_checks(cfg: ExperimentConfig) -> List[CheckResult]:
    audit, log = lipschitz_audit(cfg)
    # the audit run only doubles as the error-ball run when both use the same budget
    shared = log if cfg.diagnostics.error_ball_zeta is None else None
    results = [audit, contraction_check(cfg), error_ball_check(cfg, shared)]
    for result in results:
        logger.info("check_finished", check=result.name, status=result.status.value, **result.details)
    return results
