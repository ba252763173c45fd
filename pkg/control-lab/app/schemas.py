import math
from enum import Enum
from pathlib import Path
from typing import List, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, model_validator

SINE_OMEGA = 2.0 * math.pi / 50.0


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class TruthKind(str, Enum):
    PARAM = "param"
    MULTI = "multi"
    ENVIRO = "enviro"
    NOMINAL = "nominal"


class ControllerKind(str, Enum):
    FRIDAY = "friday"
    FRIDAY_NO_SN = "friday_no_sn"
    LQR = "lqr"
    ADAPTIVE = "adaptive"
    FRIDAY_WITH_PRETRAINED = "friday_with_pretrained"


class PretrainedKind(str, Enum):
    GP = "gp"
    DNN = "dnn"
    SN_DNN = "sn_dnn"


class ReferenceKind(str, Enum):
    SETPOINT = "setpoint"
    SINE = "sine"


class ObservationMode(str, Enum):
    ORACLE = "oracle"
    MEASURED = "measured"


class TrainingHyper(StrictModel):
    learning_rate: float = Field(1e-3, gt=0, description="SGD step size")
    momentum: float = Field(0.9, ge=0, lt=1, description="Momentum coefficient")
    batch_size: int = Field(32, ge=1, description="Mini-batch size n(N)")


class TruthSection(StrictModel):
    kind: TruthKind = TruthKind.ENVIRO
    mass: float = Field(1.5, gt=0, description="Nominal vehicle mass [kg]")
    a_load: float = 9.0
    t_period: Optional[float] = Field(None, gt=0, description="Defaults to the experiment duration")
    mu_icy: float = 0.6
    c_air: float = 0.6
    r1: float = 0.2
    r2: float = 0.1
    a_roll: float = 0.4
    k1: float = 0.5
    k2: float = 0.3
    g: float = 9.81

    @model_validator(mode="after")
    def _finite(self):
        for name, value in self.model_dump(exclude={"kind"}).items():
            if value is not None and not math.isfinite(value):
                raise ValueError(f"truth.{name} must be finite")
        return self


class NetworkSection(StrictModel):
    hidden_layers: List[int] = Field(default_factory=lambda: [50, 50, 50, 50])
    zeta: float = Field(1.0, gt=0, description="Lipschitz budget")
    strict_sn: bool = Field(False, description="Rescale every layer to exactly zeta^(1/L)")
    input_scaling: bool = Field(False, description="Running mean/std scaling of network inputs")
    sn_tol: float = Field(1e-13, gt=0)

    @model_validator(mode="after")
    def _positive_layers(self):
        if any(size <= 0 for size in self.hidden_layers):
            raise ValueError("network.hidden_layers entries must be positive")
        return self


class ControllerSection(StrictModel):
    kind: ControllerKind = ControllerKind.FRIDAY
    pretrained: Optional[PretrainedKind] = None
    checkpoint: Optional[str] = Field(None, description="Network checkpoint for pretrained dnn/sn_dnn")
    offline_data: Optional[str] = Field(None, description="Dataset CSV for pretrained estimators")
    q_diag: List[float] = Field(default_factory=lambda: [20.0, 5.0])
    r: float = Field(1.0, gt=0)
    gamma: float = Field(0.03, gt=0, description="Adaptive baseline learning rate")
    basis: str = "default"

    @model_validator(mode="after")
    def _pretrained_kind(self):
        needs = self.kind == ControllerKind.FRIDAY_WITH_PRETRAINED
        if needs and self.pretrained is None:
            raise ValueError("controller.pretrained is required for friday_with_pretrained")
        if not needs and self.pretrained is not None:
            raise ValueError("controller.pretrained only applies to friday_with_pretrained")
        return self


class ReferenceSection(StrictModel):
    kind: ReferenceKind = ReferenceKind.SINE
    target: float = 1.0
    omega: float = SINE_OMEGA


class SimulationSection(StrictModel):
    duration: float = Field(50.0, ge=0, description="Seconds; 0 yields an empty log")
    control_rate: float = Field(20.0, gt=0, description="Hz")
    sim_substep: float = Field(1e-3, gt=0, description="RK4 step [s]")
    initial_state: List[float] = Field(default_factory=lambda: [0.0, 0.0])
    observation: ObservationMode = ObservationMode.ORACLE
    noise_std: float = Field(0.0, ge=0, description="Measured-mode acceleration noise [m/s^2]")

    @property
    def control_period(self) -> float:
        return 1.0 / self.control_rate

    @property
    def substeps(self) -> int:
        return int(round(self.control_period / self.sim_substep))

    @property
    def n_steps(self) -> int:
        return int(round(self.duration * self.control_rate))

    @model_validator(mode="after")
    def _integer_substeps(self):
        ratio = self.control_period / self.sim_substep
        if ratio < 1 or abs(ratio - round(ratio)) > 1e-9 * ratio:
            raise ValueError("control period must be an integer multiple of sim_substep")
        if len(self.initial_state) != 2:
            raise ValueError("simulation.initial_state must be [p, pdot]")
        return self


class EstimatorComparisonSection(StrictModel):
    collection_duration: float = Field(200.0, gt=0)
    setpoint_period: float = Field(5.0, gt=0)
    setpoint_range: float = Field(1.0, gt=0)
    collection_seeds: List[int] = Field(default_factory=lambda: [0])
    offline_epochs: int = Field(5, ge=1)
    gp_lengthscale: float = Field(1.0, gt=0)
    gp_signal_var: float = Field(1.0, gt=0)
    gp_noise_var: float = Field(1e-2, gt=0)
    gp_jitter: float = Field(1e-8, ge=0)
    gp_grid_search: bool = False
    gp_lengthscale_grid: List[float] = Field(default_factory=lambda: [0.3, 1.0, 3.0])
    gp_signal_var_grid: List[float] = Field(default_factory=lambda: [0.3, 1.0, 3.0])
    gp_noise_var_grid: List[float] = Field(default_factory=lambda: [1e-3, 1e-2])


class DiagnosticsSection(StrictModel):
    contraction_zeta: float = Field(0.9, gt=0, lt=1)
    contraction_states: int = Field(5, ge=1)
    contraction_u0: List[float] = Field(default_factory=lambda: [-20.0, -5.0, 0.0, 5.0, 20.0])
    contraction_tol: float = Field(1e-10, gt=0)
    contraction_agreement: float = Field(1e-8, gt=0)
    lipschitz_pairs: int = Field(10000, ge=1)
    lipschitz_box: float = Field(5.0, gt=0, description="Half-width of the sampled input box")
    error_ball_zeta: Optional[float] = Field(
        None, gt=0, description="Lipschitz budget of the error-ball run; None reuses the audited run"
    )
    r_x: float = Field(10.0, gt=0, description="Feasible state-error radius")
    r_u: float = Field(100.0, gt=0, description="Feasible input radius")
    steady_state_fraction: float = Field(0.2, gt=0, le=1)


class SweepSection(StrictModel):
    truths: List[TruthKind] = Field(default_factory=lambda: [TruthKind.MULTI, TruthKind.ENVIRO, TruthKind.PARAM])
    controllers: List[ControllerKind] = Field(
        default_factory=lambda: [ControllerKind.FRIDAY, ControllerKind.ADAPTIVE, ControllerKind.LQR]
    )


class ExperimentConfig(StrictModel):
    name: str = "experiment"
    truth: TruthSection = Field(default_factory=TruthSection)
    controller: ControllerSection = Field(default_factory=ControllerSection)
    reference: ReferenceSection = Field(default_factory=ReferenceSection)
    simulation: SimulationSection = Field(default_factory=SimulationSection)
    network: NetworkSection = Field(default_factory=NetworkSection)
    training: TrainingHyper = Field(default_factory=TrainingHyper)
    dataset_capacity: Optional[int] = Field(None, ge=1)
    seeds: List[int] = Field(default_factory=lambda: list(range(10)))
    warmup: float = Field(0.0, ge=0, description="Seconds excluded from tracking metrics")
    output: str = "results"
    estimator_comparison: EstimatorComparisonSection = Field(default_factory=EstimatorComparisonSection)
    diagnostics: DiagnosticsSection = Field(default_factory=DiagnosticsSection)
    sweep: SweepSection = Field(default_factory=SweepSection)

    @property
    def layer_sizes(self) -> List[int]:
        return [3, *self.network.hidden_layers, 1]

    def echo(self) -> dict:
        """Effective configuration as plain data (for log headers)."""
        return self.model_dump(mode="json")

    def override(self, updates: dict) -> "ExperimentConfig":
        """Validated copy with nested sections merged from updates"""
        return ExperimentConfig.model_validate(_deep_merge(self.echo(), updates))


def _deep_merge(base: dict, updates: dict) -> dict:
    merged = dict(base)
    for key, value in updates.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


class MetricsReport(StrictModel):
    label: str = ""
    mean_tracking_error: float = Field(..., ge=0, description="[m]")
    mean_estimation_error: Optional[float] = Field(None, ge=0, description="[N]")
    final_offset: float = Field(..., ge=0, description="[m]")
    train_wall_time: float = Field(0.0, ge=0, description="[s]")
    diverged: bool = False


def load_config(path: str) -> ExperimentConfig:
    """Read and validate a YAML experiment config"""
    with open(Path(path), "r", encoding="utf-8") as f:
        data = yaml.safe_load(f) or {}
    return ExperimentConfig.model_validate(data)
