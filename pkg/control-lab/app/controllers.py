"""LQR, FRIDAY (LQR + real-time SN-DNN residual cancellation) and the adaptive FBL baseline."""

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, NamedTuple, Optional, Protocol

import numpy as np

from shared.events import HookEvent, StepFlag
from shared.logging_config import get_logger
from app.dataset import ReplayDataset
from app.errors import AdaptationDivergenceError, NonFiniteValueError
from app.linalg import RiccatiSolution, as_matrix
from app.mlp import (
    MlpNetwork,
    RunningScaler,
    forward,
    init_network,
    loss_and_gradients,
    normalize_lipschitz,
    sgd_momentum_step,
)
from app.plant import LtiModel, Reference
from app.schemas import ControllerKind, ExperimentConfig, TrainingHyper

logger = get_logger(__name__)


class StepOutcome(NamedTuple):
    u: float
    r_hat: float
    loss: float
    flags: frozenset


def lqr_step(gain_k: np.ndarray, x, ref: Reference) -> float:
    """u = -K (x - x_r) + u_r"""
    z = np.asarray(x, dtype=np.float64) - ref.x_r
    return float(-(gain_k @ z)[0]) + ref.u_r


# --------------------------------------------------------------------------- FRIDAY


@dataclass
class FridayState:
    gain_k: np.ndarray
    net: MlpNetwork
    dataset: ReplayDataset
    hyper: TrainingHyper
    rng: np.random.Generator
    last_u: float = 0.0
    last_rhat: float = 0.0
    sn_enabled: bool = True
    strict_sn: bool = False
    sn_tol: float = 1e-13
    scaler: Optional[RunningScaler] = None
    hooks: List[Callable[[HookEvent, "FridayState"], None]] = field(default_factory=list)
    last_loss: float = math.nan
    last_flags: frozenset = frozenset()
    fallback_count: int = 0

    def features(self, x, u: float) -> np.ndarray:
        raw = np.array([x[0], x[1], u], dtype=np.float64)
        return raw if self.scaler is None else self.scaler.transform(raw)

    def _emit(self, event: HookEvent) -> None:
        for hook in self.hooks:
            hook(event, self)


def friday_step(st: FridayState, x, ref: Reference, r_obs_prev: Optional[float]) -> float:
    """
    One FRIDAY iteration.

    Order: normalize (if enabled) -> predict R_hat(x_k, u_{k-1}) -> apply
    u_k = -K(x - x_r) + u_r - R_hat -> append ([p, pdot, u_k], r_obs) ->
    one momentum-SGD update on a sampled mini-batch.

    Returns:
        u_k; st.last_u, st.last_rhat, st.last_loss and st.last_flags are updated
    """
    flags = set()
    with np.errstate(over="ignore", invalid="ignore"):
        if st.sn_enabled:
            normalize_lipschitz(st.net, strict=st.strict_sn, tol=st.sn_tol)
            st._emit(HookEvent.NORMALIZED)

        r_hat = float(forward(st.net, st.features(x, st.last_u))[0])
        st._emit(HookEvent.PREDICTED)

        u_lqr = lqr_step(st.gain_k, x, ref)
        if math.isfinite(r_hat):
            u = u_lqr - r_hat
        else:
            u = u_lqr
            flags.add(StepFlag.FALLBACK)
            st.fallback_count += 1
            if st.fallback_count == 1:
                logger.warning("network_fallback_engaged", r_hat=str(r_hat))

        if r_obs_prev is not None:
            try:
                st.dataset.append(x, u, r_obs_prev)
                if st.scaler is not None:
                    st.scaler.update([x[0], x[1], u])
                st._emit(HookEvent.APPENDED)
            except NonFiniteValueError:
                flags.add(StepFlag.REJECTED_SAMPLE)

        loss = math.nan
        if len(st.dataset) > 0:
            xb, yb = st.dataset.sample_minibatch(st.hyper.batch_size, st.rng)
            if st.scaler is not None:
                xb = st.scaler.transform(xb)
            loss, grads = loss_and_gradients(st.net, xb, yb)
            if math.isfinite(loss) and all(np.all(np.isfinite(g)) for g in grads):
                sgd_momentum_step(st.net, grads, st.hyper)
                st._emit(HookEvent.TRAINED)
            else:
                flags.add(StepFlag.NONFINITE_LOSS)

    st.last_u = u
    st.last_rhat = r_hat
    st.last_loss = loss
    st.last_flags = frozenset(flags)
    return u


# ------------------------------------------------------------------ adaptive baseline


def default_basis(x, u: float) -> np.ndarray:
    """[1, p, pdot, p^2, pdot^2, u, pdot*u, pdot^2*u, |u|*pdot]"""
    p, pdot = float(x[0]), float(x[1])
    return np.array([1.0, p, pdot, p * p, pdot * pdot, u, pdot * u, pdot * pdot * u, abs(u) * pdot])


def multi_truth_basis(x, u: float) -> np.ndarray:
    """The exact additive terms of the multiplicative-input truth model"""
    p, pdot = float(x[0]), float(x[1])
    return np.array([p * p, pdot * pdot * u, pdot * abs(u)])


BASIS_FUNCTIONS: Dict[str, Callable] = {
    "default": default_basis,
    "multi_truth": multi_truth_basis,
}


@dataclass
class AdaptiveState:
    w_hat: np.ndarray
    gamma: float
    p: np.ndarray
    b: np.ndarray
    basis: Callable = default_basis
    last_u: float = 0.0
    last_rhat: float = 0.0

    @property
    def basis_dim(self) -> int:
        return self.w_hat.shape[1]


def make_adaptive_state(p, b, gamma: float, basis: str = "default") -> AdaptiveState:
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if basis not in BASIS_FUNCTIONS:
        raise ValueError(f"unknown basis '{basis}', choose from {sorted(BASIS_FUNCTIONS)}")
    fn = BASIS_FUNCTIONS[basis]
    dim = fn(np.zeros(2), 0.0).size
    return AdaptiveState(w_hat=np.zeros((1, dim)), gamma=gamma, p=as_matrix(p, "p"), b=as_matrix(b, "b"), basis=fn)


def adaptive_step(st: AdaptiveState, gain_k: np.ndarray, x, ref: Reference, dt: float) -> float:
    """
    u = -K(x - x_r) + u_r - W_hat sigma(x, u_prev), then
    W_hat <- W_hat + dt * gamma * (e^T P B) sigma^T with e = x - x_r.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=np.float64)
    sigma = st.basis(x, st.last_u)
    r_hat = float((st.w_hat @ sigma)[0])
    u = lqr_step(gain_k, x, ref) - r_hat

    e = x - ref.x_r
    epb = float((e @ st.p @ st.b)[0])
    st.w_hat = st.w_hat + dt * st.gamma * epb * sigma[np.newaxis, :]
    if not np.all(np.isfinite(st.w_hat)):
        raise AdaptationDivergenceError("adaptive weight estimate became non-finite")

    st.last_u = u
    st.last_rhat = r_hat
    return u


# ----------------------------------------------------------------- controller adapters


class ResidualEstimator(Protocol):
    name: str

    def predict(self, features: np.ndarray) -> float: ...


class LqrController:
    kind = ControllerKind.LQR
    estimates_residual = False

    def __init__(self, gain_k: np.ndarray):
        self.gain_k = gain_k

    def step(self, x, ref: Reference, r_obs_prev: Optional[float]) -> StepOutcome:
        return StepOutcome(lqr_step(self.gain_k, x, ref), math.nan, math.nan, frozenset())


class FridayController:
    estimates_residual = True

    def __init__(self, state: FridayState, kind: ControllerKind = ControllerKind.FRIDAY):
        self.state = state
        self.kind = kind

    def step(self, x, ref: Reference, r_obs_prev: Optional[float]) -> StepOutcome:
        u = friday_step(self.state, x, ref, r_obs_prev)
        return StepOutcome(u, self.state.last_rhat, self.state.last_loss, self.state.last_flags)


class AdaptiveController:
    kind = ControllerKind.ADAPTIVE
    estimates_residual = True

    def __init__(self, state: AdaptiveState, gain_k: np.ndarray, dt: float):
        self.state = state
        self.gain_k = gain_k
        self.dt = dt

    def step(self, x, ref: Reference, r_obs_prev: Optional[float]) -> StepOutcome:
        u = adaptive_step(self.state, self.gain_k, x, ref, self.dt)
        return StepOutcome(u, self.state.last_rhat, math.nan, frozenset())


class FrozenEstimatorController:
    """Residual cancellation with an offline-trained estimator and no online updates"""

    kind = ControllerKind.FRIDAY_WITH_PRETRAINED
    estimates_residual = True

    def __init__(self, gain_k: np.ndarray, estimator: ResidualEstimator):
        self.gain_k = gain_k
        self.estimator = estimator
        self.last_u = 0.0

    def step(self, x, ref: Reference, r_obs_prev: Optional[float]) -> StepOutcome:
        flags = set()
        r_hat = self.estimator.predict(np.array([x[0], x[1], self.last_u]))
        u = lqr_step(self.gain_k, x, ref)
        if math.isfinite(r_hat):
            u -= r_hat
        else:
            flags.add(StepFlag.FALLBACK)
        self.last_u = u
        return StepOutcome(u, r_hat, math.nan, frozenset(flags))


def make_friday_state(cfg: ExperimentConfig, gain_k: np.ndarray, seed: int, sn_enabled: bool = True) -> FridayState:
    """Network seeded with `seed`, mini-batch sampling seeded with `seed + 1`"""
    return FridayState(
        gain_k=gain_k,
        net=init_network(cfg.layer_sizes, seed=seed, zeta=cfg.network.zeta),
        dataset=ReplayDataset(capacity=cfg.dataset_capacity),
        hyper=cfg.training,
        rng=np.random.default_rng(seed + 1),
        sn_enabled=sn_enabled,
        strict_sn=cfg.network.strict_sn,
        sn_tol=cfg.network.sn_tol,
        scaler=RunningScaler(3) if cfg.network.input_scaling else None,
    )


def build_controller(
    cfg: ExperimentConfig,
    sol: RiccatiSolution,
    nominal: LtiModel,
    seed: int,
    estimator: Optional[ResidualEstimator] = None,
):
    """Instantiate the configured controller for one trial"""
    kind = cfg.controller.kind
    gain_k = sol.gain_k
    if kind == ControllerKind.LQR:
        return LqrController(gain_k)
    if kind in (ControllerKind.FRIDAY, ControllerKind.FRIDAY_NO_SN):
        state = make_friday_state(cfg, gain_k, seed, sn_enabled=kind == ControllerKind.FRIDAY)
        return FridayController(state, kind)
    if kind == ControllerKind.ADAPTIVE:
        state = make_adaptive_state(sol.p, nominal.b, cfg.controller.gamma, cfg.controller.basis)
        return AdaptiveController(state, gain_k, cfg.simulation.control_period)
    if kind == ControllerKind.FRIDAY_WITH_PRETRAINED:
        if estimator is None:
            raise ValueError("friday_with_pretrained needs a trained estimator")
        return FrozenEstimatorController(gain_k, estimator)
    raise ValueError(f"unknown controller kind {kind}")
