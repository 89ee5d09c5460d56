"""Single-stream conditional flow matching on a state space.

Interpolant: ``z_t`` follows the geodesic from the prior sample ``z0`` (t=0) to the
data sample ``z1`` (t=1); the regression target is the constant geodesic
velocity ``log(z0 -> z1)``. Sampling integrates the learned field with explicit
Euler steps at ``t_k = k / N``.
"""

from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .config import TrainConfig
from .errors import FlowPolicyError
from .manifold import Frame, StateSpace, space_from_tag
from .nn import (
    NetAdjoint,
    NetOutput,
    Network,
    NetworkSpec,
    forward,
    gradient,
    init_network,
    init_optimizer,
    optimizer_step,
    read_checkpoint,
    save_network,
)
from .records import write_csv

logger = logging.getLogger(__name__)

PRIOR_KINDS = ("standard", "pose-centric", "mixture")


@dataclass(frozen=True, eq=False)
class Prior:
    kind: str
    sigma_pos: float = 1.0
    sigma_rot: float = 1.0
    components: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if self.kind not in PRIOR_KINDS:
            raise FlowPolicyError("INVALID", f"Unknown prior kind: {self.kind}", {"valid": PRIOR_KINDS})
        if self.sigma_pos <= 0 or self.sigma_rot <= 0:
            raise FlowPolicyError("INVALID", "prior sigmas must be positive")
        if self.kind != "mixture":
            return
        if self.components is None or len(self.components) == 0:
            raise FlowPolicyError("INVALID", "mixture prior needs at least one component")
        components = np.atleast_2d(np.asarray(self.components, dtype=float))
        weights = (
            np.full(len(components), 1.0 / len(components))
            if self.weights is None
            else np.asarray(self.weights, dtype=float).reshape(-1)
        )
        if weights.shape != (len(components),) or np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
            raise FlowPolicyError("INVALID", "mixture weights must be non-negative and sum to 1")
        object.__setattr__(self, "components", components)
        object.__setattr__(self, "weights", weights)

    def to_dict(self) -> dict[str, Any]:
        data: dict[str, Any] = {"kind": self.kind, "sigma_pos": self.sigma_pos, "sigma_rot": self.sigma_rot}
        if self.kind == "mixture":
            data["components"] = self.components.tolist()
            data["weights"] = self.weights.tolist()
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Prior":
        return cls(
            kind=str(data.get("kind", "standard")),
            sigma_pos=float(data.get("sigma_pos", 1.0)),
            sigma_rot=float(data.get("sigma_rot", 1.0)),
            components=np.asarray(data["components"]) if "components" in data else None,
            weights=np.asarray(data["weights"]) if "weights" in data else None,
        )


def standard_prior() -> Prior:
    return Prior("standard")


def pose_centric_prior(sigma_pos: float, sigma_rot: float) -> Prior:
    return Prior("pose-centric", sigma_pos=sigma_pos, sigma_rot=sigma_rot)


def mixture_prior(space: StateSpace, frames: Sequence[Frame], sigma: float) -> Prior:
    """Standard-Gaussian centre of the world frame seen from each demonstration's local frame."""
    if not frames:
        raise FlowPolicyError("MISSING_INPUT", "mixture prior needs at least one demonstration frame")
    components = np.stack([space.to_local(space.identity(), frame) for frame in frames])
    return Prior("mixture", sigma_pos=sigma, sigma_rot=sigma, components=components)


def prior_from_config(config: TrainConfig, space: StateSpace, frames: Sequence[Frame] = ()) -> Prior:
    if config.prior == "standard":
        return standard_prior()
    if config.prior == "pose-centric":
        return pose_centric_prior(config.sigma_pos, config.sigma_rot)
    return mixture_prior(space, frames, config.mixture_sigma)


def sample_prior(
    prior: Prior,
    space: StateSpace,
    rng: np.random.Generator,
    n: int,
    conditioning: Optional[np.ndarray] = None,
) -> np.ndarray:
    noise = rng.standard_normal((n, space.tangent_dim)) * space.noise_scale(prior.sigma_pos, prior.sigma_rot)
    if prior.kind == "standard":
        center = space.identity()
    elif prior.kind == "pose-centric":
        if conditioning is None:
            raise FlowPolicyError("MISSING_INPUT", "pose-centric prior requires a conditioning state")
        center = space.check_states(conditioning)
    else:
        picks = rng.choice(len(prior.components), size=n, p=prior.weights)
        center = prior.components[picks]
    return space.perturb(center, noise)


# --- fields -------------------------------------------------------------------


class FlowField(ABC):
    """Anything that reports velocity, progress and logvar heads on a state space."""

    space: StateSpace
    prior: Prior

    @property
    @abstractmethod
    def logvar_dim(self) -> int: ...

    @abstractmethod
    def evaluate(self, states: np.ndarray, conditions: np.ndarray, t: np.ndarray) -> NetOutput: ...


@dataclass(frozen=True, eq=False)
class FlowModel(FlowField):
    network: Network
    prior: Prior
    space: StateSpace
    conditioning: bool = True

    def __post_init__(self) -> None:
        if self.network.spec.velocity_dim != self.space.tangent_dim:
            raise FlowPolicyError(
                "DIMENSION_MISMATCH",
                "velocity head does not match the tangent dimension",
                {"velocity_dim": self.network.spec.velocity_dim, "tangent_dim": self.space.tangent_dim},
            )

    @property
    def logvar_dim(self) -> int:
        return self.network.spec.logvar_dim

    def evaluate(self, states: np.ndarray, conditions: np.ndarray, t: np.ndarray) -> NetOutput:
        out, _ = forward(self.network, states, conditions if self.conditioning else None, t)
        return out


def logvar_width(space: StateSpace, mode: str) -> int:
    if mode == "none":
        return 0
    if mode == "grouped":
        return len(space.groups)
    return space.tangent_dim


def build_model(space: StateSpace, prior: Prior, config: TrainConfig) -> FlowModel:
    spec = NetworkSpec(
        state_dim=space.state_dim,
        condition_dim=space.state_dim if config.conditioning else 0,
        time_features=config.time_features,
        velocity_dim=space.tangent_dim,
        logvar_dim=logvar_width(space, config.logvar),
        hidden=config.hidden,
        activation=config.activation,
    )
    network = init_network(spec, np.random.default_rng(config.seed))
    return FlowModel(network=network, prior=prior, space=space, conditioning=config.conditioning)


# --- training -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TrainingSet:
    targets: np.ndarray
    conditions: np.ndarray
    progress: np.ndarray
    logvar_targets: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        n = len(self.targets)
        sizes = {len(self.conditions), len(self.progress)}
        if self.logvar_targets is not None:
            sizes.add(len(self.logvar_targets))
        if sizes != {n}:
            raise FlowPolicyError("DIMENSION_MISMATCH", "training arrays must have equal length")

    def __len__(self) -> int:
        return len(self.targets)

    def subset(self, index: np.ndarray) -> "TrainingSet":
        return TrainingSet(
            targets=self.targets[index],
            conditions=self.conditions[index],
            progress=self.progress[index],
            logvar_targets=None if self.logvar_targets is None else self.logvar_targets[index],
        )


@dataclass(frozen=True)
class LossTerms:
    total: float
    velocity: float
    progress: float
    logvar: float


@dataclass(frozen=True)
class EpochLoss:
    epoch: int
    loss: float
    velocity: float
    progress: float
    logvar: float


def cfm_loss(
    model: FlowModel,
    batch: TrainingSet,
    rng: np.random.Generator,
    z0: Optional[np.ndarray] = None,
    t: Optional[np.ndarray] = None,
    weights: Tuple[float, float, float] = (1.0, 0.1, 0.1),
) -> Tuple[LossTerms, np.ndarray]:
    space = model.space
    size = len(batch)
    if z0 is None:
        z0 = sample_prior(model.prior, space, rng, size, conditioning=batch.conditions)
    if t is None:
        t = rng.uniform(0.0, 1.0, size)

    z_t = space.interpolate(z0, batch.targets, t)
    target_velocity = space.log_displacement(z0, batch.targets)
    out, cache = forward(model.network, z_t, batch.conditions if model.conditioning else None, t)

    w_velocity, w_progress, w_logvar = weights
    d_velocity = out.velocity - target_velocity
    d_progress = out.progress - batch.progress
    velocity_term = float(np.mean(np.sum(d_velocity**2, axis=1)))
    progress_term = float(np.mean(d_progress**2))

    d_logvar = np.zeros_like(out.logvar)
    logvar_term = 0.0
    if model.logvar_dim and batch.logvar_targets is not None:
        if batch.logvar_targets.shape[1] != model.logvar_dim:
            raise FlowPolicyError(
                "DIMENSION_MISMATCH",
                "logvar targets do not match the logvar head",
                {"targets": batch.logvar_targets.shape[1], "head": model.logvar_dim},
            )
        d_logvar = out.logvar - batch.logvar_targets
        logvar_term = float(np.mean(np.sum(d_logvar**2, axis=1)))

    total = w_velocity * velocity_term + w_progress * progress_term + w_logvar * logvar_term
    if not np.isfinite(total):
        raise FlowPolicyError("DIVERGED", "diverged", {"reason": "non-finite loss"})

    adjoint = NetAdjoint(
        velocity=w_velocity * 2.0 * d_velocity / size,
        progress=w_progress * 2.0 * d_progress / size,
        logvar=w_logvar * 2.0 * d_logvar / size,
    )
    grads = gradient(model.network, adjoint, cache)
    return LossTerms(total, velocity_term, progress_term, logvar_term), grads


def train(model: FlowModel, data: TrainingSet, config: TrainConfig) -> Tuple[FlowModel, List[EpochLoss]]:
    if len(data) == 0:
        raise FlowPolicyError("MISSING_INPUT", "training set is empty")

    rng = np.random.default_rng(config.seed)
    spec = model.network.spec
    params = model.network.params.copy()
    opt = init_optimizer(params, config.learning_rate)
    weights = (config.velocity_weight, config.progress_weight, config.logvar_weight)
    history: List[EpochLoss] = []

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(data))
        sums = np.zeros(4)
        for start in range(0, len(data), config.batch_size):
            index = order[start : start + config.batch_size]
            current = replace(model, network=Network(spec, params))
            try:
                terms, grads = cfm_loss(current, data.subset(index), rng, weights=weights)
                params, opt = optimizer_step(opt, params, grads)
            except FlowPolicyError as e:
                if e.code == "DIVERGED":
                    logger.warning("training diverged at epoch %d", epoch)
                    raise FlowPolicyError("DIVERGED", "diverged", {**e.details, "epoch": epoch}) from e
                raise
            sums += len(index) * np.array([terms.total, terms.velocity, terms.progress, terms.logvar])
        mean = sums / len(data)
        history.append(EpochLoss(epoch, *(float(v) for v in mean)))
        logger.debug("epoch %d loss=%.6f velocity=%.6f progress=%.6f logvar=%.6f", epoch, *mean)

    logger.info("trained %d epochs on %d records, final loss %.5f", config.epochs, len(data), history[-1].loss)
    return replace(model, network=Network(spec, params)), history


# --- sampling -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class IntegrationResult:
    state: np.ndarray
    progress: np.ndarray
    logvar: np.ndarray


def flow_time(k: int, steps: int) -> float:
    return k / steps


def euler_update(space: StateSpace, states: np.ndarray, velocity: np.ndarray, dt: float) -> np.ndarray:
    updated = space.step(states, velocity * dt)
    if not np.all(np.isfinite(updated)):
        raise FlowPolicyError("NON_FINITE", "non-finite state during integration")
    return updated


def integrate(field: FlowField, z0: np.ndarray, conditioning: np.ndarray, steps: int) -> IntegrationResult:
    if steps < 1:
        raise FlowPolicyError("INVALID", "integration needs at least one step", {"steps": steps})
    space = field.space
    z0 = space.check_states(z0)
    single = z0.ndim == 1
    z = np.atleast_2d(z0)
    conditions = np.broadcast_to(space.check_states(conditioning), z.shape)
    dt = 1.0 / steps

    out: Optional[NetOutput] = None
    for k in range(steps):
        t = np.full(len(z), flow_time(k, steps))
        out = field.evaluate(z, conditions, t)
        z = euler_update(space, z, out.velocity, dt)

    if single:
        return IntegrationResult(z[0], out.progress[0], out.logvar[0])
    return IntegrationResult(z, out.progress, out.logvar)


# --- persistence --------------------------------------------------------------


def save_model(model: FlowModel, path: Path) -> None:
    metadata = {"space": model.space.tag, "prior": model.prior.to_dict(), "conditioning": model.conditioning}
    save_network(model.network, path, metadata)


def load_model(path: Path) -> FlowModel:
    network, metadata = read_checkpoint(path)
    if "space" not in metadata or "prior" not in metadata:
        raise FlowPolicyError("CHECKPOINT", f"Checkpoint lacks flow metadata: {path}")
    return FlowModel(
        network=network,
        prior=Prior.from_dict(metadata["prior"]),
        space=space_from_tag(str(metadata["space"])),
        conditioning=bool(metadata.get("conditioning", True)),
    )


def write_loss_csv(path: Path, history: Sequence[EpochLoss]) -> None:
    rows = [
        (r.epoch, f"{r.loss:.8g}", f"{r.velocity:.8g}", f"{r.progress:.8g}", f"{r.logvar:.8g}") for r in history
    ]
    write_csv(path, ("epoch", "loss", "velocity", "progress", "logvar"), rows)
