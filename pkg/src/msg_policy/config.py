from __future__ import annotations

from pathlib import Path
from typing import Any, Dict, Literal, Mapping, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import FlowPolicyError

Activation = Literal["tanh", "silu"]
PriorKind = Literal["standard", "pose-centric", "mixture"]
LogvarMode = Literal["none", "grouped", "full"]
Strategy = Literal["ensemble", "flow", "flow-mcmc"]
WeightingVariant = Literal[
    "constant",
    "threshold",
    "linear",
    "exponential",
    "logvar-full",
    "logvar-grouped",
    "particle-full",
    "particle-grouped",
]
Method = Literal["object-frame", "global", "oriented", "msg-ensemble", "msg-flow", "msg-flow-mcmc"]

SCHEDULE_VARIANTS = ("constant", "threshold", "linear", "exponential")
BASELINE_METHODS = ("object-frame", "global", "oriented")
MSG_METHODS = ("msg-ensemble", "msg-flow", "msg-flow-mcmc")
TOY_MIN_SEPARATION = 6.0


class _Frozen(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class TrainConfig(_Frozen):
    epochs: int = Field(default=2000, ge=1)
    batch_size: int = Field(default=256, ge=1)
    learning_rate: float = Field(default=1e-3, gt=0)
    seed: int = 0
    hidden: tuple[int, ...] = (128, 128, 128)
    activation: Activation = "silu"
    time_features: int = Field(default=16, ge=0, description="Sinusoidal time features (even)")
    prior: PriorKind = "pose-centric"
    sigma_pos: float = Field(default=0.3, gt=0)
    sigma_rot: float = Field(default=0.3, gt=0)
    mixture_sigma: float = Field(default=1.0, gt=0)
    conditioning: bool = True
    logvar: LogvarMode = Field(default="full", description="none=0, grouped=2, full=6 outputs on poses")
    gaussian_bins: int = Field(default=10, ge=2)
    velocity_weight: float = Field(default=1.0, ge=0)
    progress_weight: float = Field(default=0.1, ge=0)
    logvar_weight: float = Field(default=0.1, ge=0)

    @field_validator("hidden")
    @classmethod
    def _positive_widths(cls, value: tuple[int, ...]) -> tuple[int, ...]:
        if any(width < 1 for width in value):
            raise ValueError("hidden widths must be positive")
        return value

    @field_validator("time_features")
    @classmethod
    def _even_features(cls, value: int) -> int:
        if value % 2:
            raise ValueError("time_features must be even")
        return value


class WeightingStrategy(_Frozen):
    variant: WeightingVariant = "constant"
    particles: int = Field(default=8, ge=2)

    @property
    def is_schedule(self) -> bool:
        return self.variant in SCHEDULE_VARIANTS

    @property
    def is_logvar(self) -> bool:
        return self.variant.startswith("logvar")

    @property
    def is_particle(self) -> bool:
        return self.variant.startswith("particle")

    @property
    def grouped(self) -> bool:
        return self.variant.endswith("grouped")


class CompositionConfig(_Frozen):
    strategy: Strategy = "flow"
    flow_steps: int = Field(default=10, ge=1)
    mcmc_steps: Optional[int] = Field(default=None, ge=0, description="Defaults to 4 for flow-mcmc, else 0")
    mcmc_step_scale: float = Field(default=0.1, gt=0)
    mcmc_noise_scale: float = Field(default=0.1, ge=0)
    mcmc_matched_steps: int = Field(default=0, ge=0)
    sample_matching: bool = True
    virtual_poses: bool = True
    progress_threshold: float = Field(default=0.98, gt=0, le=1)
    weighting: WeightingStrategy = WeightingStrategy()

    @property
    def corrector_steps(self) -> int:
        if self.mcmc_steps is not None:
            return self.mcmc_steps
        return 4 if self.strategy == "flow-mcmc" else 0

    @property
    def effective_flow_steps(self) -> int:
        return self.flow_steps * (1 + self.mcmc_matched_steps)

    @model_validator(mode="after")
    def _corrector_matches_strategy(self) -> "CompositionConfig":
        if self.strategy == "flow-mcmc" and self.corrector_steps < 1:
            raise ValueError("flow-mcmc requires mcmc_steps >= 1")
        if self.strategy != "flow-mcmc" and self.corrector_steps > 0:
            raise ValueError("mcmc_steps > 0 is only valid for strategy flow-mcmc")
        return self


class EvalConfig(_Frozen):
    episodes: int = Field(default=50, ge=1)
    methods: tuple[Method, ...] = ("object-frame", "global", "oriented", "msg-ensemble", "msg-flow", "msg-flow-mcmc")
    weightings: tuple[WeightingVariant, ...] = ("constant", "logvar-full", "particle-full")
    max_steps: Optional[int] = Field(default=None, ge=1)


class ToyConfig(_Frozen):
    samples: int = Field(default=500, ge=1)
    oracle: bool = True
    mode_offset: float = Field(default=1.5, gt=0)
    mode_std: float = Field(default=0.2, gt=0)
    prior_sigma: float = Field(default=1.0, gt=0)
    far_prior_shift: float = Field(default=3.0, ge=0)
    epochs: int = Field(default=300, ge=1)

    @model_validator(mode="after")
    def _separated_modes(self) -> "ToyConfig":
        # modes sit at +-mode_offset
        if 2.0 * self.mode_offset < TOY_MIN_SEPARATION * self.mode_std:
            raise ValueError(f"mode separation must be at least {TOY_MIN_SEPARATION:g} mode stds")
        return self


class FrameSampler(_Frozen):
    position_low: tuple[float, float, float] = (0.0, 0.0, 0.0)
    position_high: tuple[float, float, float] = (0.0, 0.0, 0.0)
    yaw_range: tuple[float, float] = (0.0, 0.0)

    @model_validator(mode="after")
    def _ordered(self) -> "FrameSampler":
        if any(lo > hi for lo, hi in zip(self.position_low, self.position_high)):
            raise ValueError("position_low must not exceed position_high")
        if self.yaw_range[0] > self.yaw_range[1]:
            raise ValueError("yaw_range must be ordered")
        return self


class SkillSpec(_Frozen):
    frames: tuple[str, ...] = Field(min_length=1)
    target_frame: str
    target_offset: tuple[float, float, float] = (0.0, 0.0, 0.0)
    target_yaw: float = 0.0
    approach_offset: Optional[tuple[float, float, float]] = None
    gripper: float = Field(default=0.0, ge=0, le=1)
    steps: int = Field(default=12, ge=2)
    dwell: int = Field(default=2, ge=0)


class TaskSpec(_Frozen):
    name: str
    kind: Literal["toy", "kinematic"] = "kinematic"
    space: Literal["se2", "se3", "euclidean-2"] = "se2"
    start: FrameSampler = FrameSampler()
    frames: Dict[str, FrameSampler] = Field(default_factory=dict)
    skills: tuple[SkillSpec, ...] = ()
    tolerance_position: float = Field(default=0.05, gt=0)
    tolerance_rotation: float = Field(default=0.2, gt=0)
    via_tolerance: float = Field(default=0.1, gt=0)
    max_steps: int = Field(default=80, ge=1)
    demo_noise: float = Field(default=0.01, ge=0)

    @model_validator(mode="after")
    def _frames_resolvable(self) -> "TaskSpec":
        known = set(self.frames) | {"ee_start", "world"}
        for index, skill in enumerate(self.skills):
            missing = [f for f in (*skill.frames, skill.target_frame) if f not in known]
            if missing:
                raise ValueError(f"skill {index} references unknown frames: {missing}")
        if self.kind == "kinematic" and not self.skills:
            raise ValueError("kinematic tasks need at least one skill")
        return self


class RunConfig(_Frozen):
    task: str = "reach"
    demos: int = Field(default=5, ge=1)
    seeds: tuple[int, ...] = Field(default=(0, 1, 2), min_length=1)
    train: TrainConfig = TrainConfig()
    composition: CompositionConfig = CompositionConfig()
    evaluation: EvalConfig = EvalConfig()
    toy: ToyConfig = ToyConfig()
    tasks: Dict[str, TaskSpec] = Field(default_factory=dict)
    output_dir: Optional[str] = None


def _deep_merge(base: Mapping[str, Any], overrides: Mapping[str, Any]) -> Dict[str, Any]:
    merged: Dict[str, Any] = dict(base)
    for key, value in overrides.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), Mapping):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_run_config(path: Optional[Path], overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    raw: Dict[str, Any] = {}
    if path is not None:
        if not path.exists():
            raise FlowPolicyError("INVALID_CONFIG", f"Config file not found: {path}")
        try:
            loaded = yaml.safe_load(path.read_text(encoding="utf-8"))
        except yaml.YAMLError as e:
            raise FlowPolicyError("INVALID_CONFIG", f"Config file is not valid YAML: {path}", {"error": str(e)})
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise FlowPolicyError("INVALID_CONFIG", f"Config at {path} must be a mapping")
        raw = loaded

    merged = _deep_merge(raw, overrides or {})
    try:
        return RunConfig.model_validate(merged)
    except ValidationError as e:
        errors = [f"{'.'.join(str(part) for part in err['loc'])}: {err['msg']}" for err in e.errors()]
        raise FlowPolicyError("INVALID_CONFIG", "Invalid run configuration", {"errors": errors})
