"""Nominal LTI car model, nonlinear truth plants, RK4 integration and references."""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from shared.logging_config import get_logger
from app.errors import PlantDivergenceError
from app.schemas import ObservationMode, ReferenceKind, ReferenceSection, TruthKind, TruthSection

logger = get_logger(__name__)

GRAVITY = 9.81


@dataclass(frozen=True)
class LtiModel:
    a: np.ndarray
    b: np.ndarray
    mass: float

    @classmethod
    def car(cls, mass: float) -> "LtiModel":
        """m * pddot = u written as xdot = A x + B u with x = [p, pdot]"""
        if mass <= 0:
            raise ValueError("mass must be positive")
        return cls(a=np.array([[0.0, 1.0], [0.0, 0.0]]), b=np.array([[0.0], [1.0 / mass]]), mass=float(mass))


@dataclass(frozen=True)
class TruthModel:
    kind: TruthKind
    mass: float = 1.5
    a_load: float = 9.0
    t_period: float = 50.0
    mu_icy: float = 0.6
    c_air: float = 0.6
    r1: float = 0.2
    r2: float = 0.1
    a_roll: float = 0.4
    k1: float = 0.5
    k2: float = 0.3
    g: float = GRAVITY

    def __post_init__(self):
        if self.t_period <= 0:
            raise ValueError("t_period must be positive")
        if self.mass <= 0:
            raise ValueError("mass must be positive")

    @classmethod
    def from_config(cls, section: TruthSection, duration: float) -> "TruthModel":
        params = section.model_dump(exclude={"kind", "t_period"})
        t_period = section.t_period if section.t_period is not None else (duration if duration > 0 else 1.0)
        return cls(kind=TruthKind(section.kind), t_period=t_period, **params)


@dataclass(frozen=True)
class SimState:
    p: float
    pdot: float
    t: float = 0.0

    @property
    def x(self) -> np.ndarray:
        return np.array([self.p, self.pdot])


@dataclass(frozen=True)
class Reference:
    x_r: np.ndarray
    u_r: float


def _sign(value: float) -> float:
    # sign(0) = 0 keeps the rolling resistance continuous at rest
    return math.copysign(1.0, value) if value != 0.0 else 0.0


def _param_mass(model: TruthModel, t: float) -> float:
    return model.mass + model.a_load * model.mass * (1.0 - math.exp(-t / model.t_period))


def _enviro_forces(model: TruthModel, p: float, pdot: float):
    f_air = model.c_air * pdot * pdot * math.sin(pdot)
    f_roll = (
        -_sign(pdot)
        * model.mass
        * model.g
        * (model.r1 * (1.0 - math.exp(-model.a_roll * abs(pdot))) + model.r2 * abs(pdot))
    )
    f_duff = model.k1 * p + model.k2 * p * p * p
    return f_air, f_roll, f_duff


def truth_accel(model: TruthModel, s: SimState, u: float) -> float:
    """Acceleration pddot of the selected truth plant at state s under input u [N]"""
    if not (math.isfinite(s.p) and math.isfinite(s.pdot) and math.isfinite(u)):
        return math.nan
    kind = model.kind
    if kind == TruthKind.NOMINAL:
        return u / model.mass
    if kind == TruthKind.PARAM:
        return math.exp(-s.t / model.t_period) * u / _param_mass(model, s.t)
    if kind == TruthKind.MULTI:
        return ((1.0 + s.pdot * s.pdot) * u + s.p * s.p + s.pdot * abs(u)) / model.mass
    if kind == TruthKind.ENVIRO:
        f_air, f_roll, f_duff = _enviro_forces(model, s.p, s.pdot)
        return (model.mu_icy * u - f_air - f_roll - f_duff) / model.mass
    raise ValueError(f"unknown truth model {kind}")


def residual_force(model: TruthModel, s: SimState, u: float) -> float:
    """Closed-form residual R(x, u) such that m * pddot = u + R [N]"""
    kind = model.kind
    if kind == TruthKind.NOMINAL:
        return 0.0
    if kind == TruthKind.PARAM:
        return model.mass * math.exp(-s.t / model.t_period) * u / _param_mass(model, s.t) - u
    if kind == TruthKind.MULTI:
        return s.pdot * s.pdot * u + s.p * s.p + s.pdot * abs(u)
    if kind == TruthKind.ENVIRO:
        f_air, f_roll, f_duff = _enviro_forces(model, s.p, s.pdot)
        return (model.mu_icy - 1.0) * u - f_air - f_roll - f_duff
    raise ValueError(f"unknown truth model {kind}")


def observe_residual(p_ddot_obs: float, u: float, mass: float) -> float:
    """Force that, added to u, explains the observed acceleration: m * pddot - u"""
    return mass * p_ddot_obs - u


def acceleration_estimate(pdot_now: float, pdot_prev: float, dt: float) -> float:
    """Backward-difference acceleration"""
    if dt <= 0:
        raise ValueError("dt must be positive")
    return (pdot_now - pdot_prev) / dt


def rk4_step(model: TruthModel, s: SimState, u: float, dt: float) -> SimState:
    """Classical RK4 on (pdot, pddot) with u held constant over the step"""
    if dt <= 0:
        raise ValueError("dt must be positive")
    half = 0.5 * dt

    k1_p, k1_v = s.pdot, truth_accel(model, s, u)
    s2 = SimState(s.p + half * k1_p, s.pdot + half * k1_v, s.t + half)
    k2_p, k2_v = s2.pdot, truth_accel(model, s2, u)
    s3 = SimState(s.p + half * k2_p, s.pdot + half * k2_v, s.t + half)
    k3_p, k3_v = s3.pdot, truth_accel(model, s3, u)
    s4 = SimState(s.p + dt * k3_p, s.pdot + dt * k3_v, s.t + dt)
    k4_p, k4_v = s4.pdot, truth_accel(model, s4, u)

    p = s.p + dt / 6.0 * (k1_p + 2.0 * k2_p + 2.0 * k3_p + k4_p)
    pdot = s.pdot + dt / 6.0 * (k1_v + 2.0 * k2_v + 2.0 * k3_v + k4_v)
    if not (math.isfinite(p) and math.isfinite(pdot)):
        raise PlantDivergenceError(f"plant state diverged at t={s.t + dt:.3f}s")
    return SimState(p, pdot, s.t + dt)


def simulate_interval(model: TruthModel, s: SimState, u: float, substep: float, substeps: int) -> SimState:
    """Advance one control period under zero-order hold"""
    for _ in range(substeps):
        s = rk4_step(model, s, u, substep)
    return s


def reference_setpoint(target_p: float) -> Reference:
    return Reference(x_r=np.array([float(target_p), 0.0]), u_r=0.0)


def reference_sine(t: float, omega: float, mass: float) -> Reference:
    """x_r = [sin wt, w cos wt], u_r = -m w^2 sin wt (consistent with xdot_r = A x_r + B u_r)"""
    return Reference(
        x_r=np.array([math.sin(omega * t), omega * math.cos(omega * t)]),
        u_r=-mass * omega**2 * math.sin(omega * t),
    )


def reference_at(section: ReferenceSection, t: float, mass: float) -> Reference:
    if section.kind == ReferenceKind.SETPOINT:
        return reference_setpoint(section.target)
    return reference_sine(t, section.omega, mass)


@dataclass
class RandomSetpointSchedule:
    """Piecewise-constant targets drawn uniformly from [-span, span], redrawn every period seconds"""

    seed: int
    period: float = 5.0
    span: float = 1.0
    _targets: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self._rng = np.random.default_rng(self.seed)

    def target_at(self, t: float) -> float:
        index = int(math.floor(t / self.period + 1e-9))
        while len(self._targets) <= index:
            self._targets.append(float(self._rng.uniform(-self.span, self.span)))
        return self._targets[index]

    def reference_at(self, t: float) -> Reference:
        return reference_setpoint(self.target_at(t))


class ResidualObserver:
    """
    Produces the observed residual force for the interval that just ended.

    oracle: the true acceleration at the sample instant under the previously held input.
    measured: backward-difference of pdot across the control period plus optional noise.
    """

    def __init__(
        self, mode: ObservationMode, mass: float, dt: float, noise_std: float = 0.0, seed: Optional[int] = None
    ):
        self.mode = ObservationMode(mode)
        self.mass = mass
        self.dt = dt
        self.noise_std = noise_std
        self._rng = np.random.default_rng(seed)

    def observe(self, model: TruthModel, s_now: SimState, s_prev: SimState, u_prev: float) -> float:
        if self.mode == ObservationMode.ORACLE:
            accel = truth_accel(model, s_now, u_prev)
        else:
            accel = acceleration_estimate(s_now.pdot, s_prev.pdot, self.dt)
            if self.noise_std > 0:
                accel += float(self._rng.normal(0.0, self.noise_std))
        return observe_residual(accel, u_prev, self.mass)
