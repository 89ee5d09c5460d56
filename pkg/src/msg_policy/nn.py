"""Small numpy MLP with hand-written reverse mode and an Adam optimizer.

The network maps ``[state, condition, time-embedding(t)]`` to
``[velocity, progress-logit, logvar]``. Parameters live in one flat float64
array; each layer stores ``W`` with shape ``(n_in, n_out)`` row-major followed by
its bias, and computes ``h @ W + b``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, List, Mapping, Optional, Tuple

import numpy as np

from .errors import FlowPolicyError
from .records import atomic_write_bytes

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "msg-policy-network"
CHECKPOINT_VERSION = 1
ACTIVATIONS = ("tanh", "silu")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _activate(name: str, a: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(a)
    return a * _sigmoid(a)


def _activation_grad(name: str, a: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return 1.0 - np.tanh(a) ** 2
    s = _sigmoid(a)
    return s * (1.0 + a * (1.0 - s))


@dataclass(frozen=True)
class NetworkSpec:
    state_dim: int
    condition_dim: int
    time_features: int
    velocity_dim: int
    logvar_dim: int = 0
    hidden: Tuple[int, ...] = (128, 128, 128)
    activation: str = "silu"

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.state_dim < 1 or self.velocity_dim < 1:
            raise FlowPolicyError("INVALID", "state and velocity dimensions must be positive")
        if self.condition_dim < 0 or self.logvar_dim < 0 or self.time_features < 0:
            raise FlowPolicyError("INVALID", "condition, logvar and time dimensions must be non-negative")
        if self.time_features % 2:
            raise FlowPolicyError("INVALID", "time_features must be even", {"time_features": self.time_features})
        if any(h < 1 for h in self.hidden):
            raise FlowPolicyError("INVALID", "hidden widths must be positive", {"hidden": self.hidden})
        if self.activation not in ACTIVATIONS:
            raise FlowPolicyError("INVALID", f"Unknown activation: {self.activation}", {"valid": ACTIVATIONS})

    @property
    def input_dim(self) -> int:
        return self.state_dim + self.condition_dim + self.time_features

    @property
    def output_dim(self) -> int:
        return self.velocity_dim + 1 + self.logvar_dim

    @property
    def layer_sizes(self) -> Tuple[int, ...]:
        return (self.input_dim, *self.hidden, self.output_dim)

    @property
    def param_count(self) -> int:
        sizes = self.layer_sizes
        return sum(n_in * n_out + n_out for n_in, n_out in zip(sizes[:-1], sizes[1:]))

    def to_dict(self) -> dict[str, Any]:
        return {
            "state_dim": self.state_dim,
            "condition_dim": self.condition_dim,
            "time_features": self.time_features,
            "velocity_dim": self.velocity_dim,
            "logvar_dim": self.logvar_dim,
            "hidden": list(self.hidden),
            "activation": self.activation,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "NetworkSpec":
        try:
            return cls(
                state_dim=int(data["state_dim"]),
                condition_dim=int(data["condition_dim"]),
                time_features=int(data["time_features"]),
                velocity_dim=int(data["velocity_dim"]),
                logvar_dim=int(data.get("logvar_dim", 0)),
                hidden=tuple(int(h) for h in data.get("hidden", ())),
                activation=str(data.get("activation", "silu")),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise FlowPolicyError("CHECKPOINT", "Invalid network spec in checkpoint", {"error": str(e)})


@dataclass(frozen=True, eq=False)
class Network:
    spec: NetworkSpec
    params: np.ndarray

    def __post_init__(self) -> None:
        params = np.array(self.params, dtype=np.float64).reshape(-1)
        if params.size != self.spec.param_count:
            raise FlowPolicyError(
                "DIMENSION_MISMATCH",
                "parameter count does not match architecture",
                {"expected": self.spec.param_count, "actual": params.size},
            )
        params.setflags(write=False)
        object.__setattr__(self, "params", params)

    def layers(self) -> List[Tuple[np.ndarray, np.ndarray]]:
        out = []
        offset = 0
        sizes = self.spec.layer_sizes
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            w = self.params[offset : offset + n_in * n_out].reshape(n_in, n_out)
            offset += n_in * n_out
            b = self.params[offset : offset + n_out]
            offset += n_out
            out.append((w, b))
        return out


def init_network(spec: NetworkSpec, rng: np.random.Generator, output_scale: float = 0.0) -> Network:
    """Hidden weights ~ N(0, 1/n_in); the output layer is scaled by ``output_scale`` (zero by default)."""
    chunks = []
    sizes = spec.layer_sizes
    last = len(sizes) - 2
    for index, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        w = rng.standard_normal((n_in, n_out)) / np.sqrt(n_in)
        if index == last:
            w = w * output_scale
        chunks.append(w.ravel())
        chunks.append(np.zeros(n_out))
    return Network(spec, np.concatenate(chunks))


def time_embedding(t: np.ndarray, features: int) -> np.ndarray:
    t = np.asarray(t, dtype=float).reshape(-1)
    if features == 0:
        return np.zeros((t.size, 0))
    half = features // 2
    freqs = np.pi * np.geomspace(1.0, 64.0, half)
    angles = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


@dataclass(frozen=True, eq=False)
class NetOutput:
    velocity: np.ndarray
    progress: np.ndarray
    logvar: np.ndarray


@dataclass(frozen=True, eq=False)
class ForwardCache:
    inputs: List[np.ndarray]
    pre_activations: List[np.ndarray]
    progress: np.ndarray

    @property
    def batch(self) -> int:
        return self.inputs[0].shape[0]


@dataclass(frozen=True, eq=False)
class NetAdjoint:
    """Cotangents of a scalar loss with respect to each head's output."""

    velocity: Optional[np.ndarray] = None
    progress: Optional[np.ndarray] = None
    logvar: Optional[np.ndarray] = None


def forward(
    net: Network,
    state: np.ndarray,
    condition: Optional[np.ndarray],
    t: np.ndarray | float,
) -> Tuple[NetOutput, ForwardCache]:
    spec = net.spec
    state = np.asarray(state, dtype=float)
    single = state.ndim == 1
    state = np.atleast_2d(state)
    batch = state.shape[0]
    if condition is None:
        condition = np.zeros((batch, 0))
    condition = np.atleast_2d(np.asarray(condition, dtype=float))
    if spec.condition_dim == 0:
        condition = np.zeros((batch, 0))
    if state.shape[1] != spec.state_dim or condition.shape[1] != spec.condition_dim:
        raise FlowPolicyError(
            "DIMENSION_MISMATCH",
            "network input dimensions do not match",
            {
                "state": state.shape[1],
                "expected_state": spec.state_dim,
                "condition": condition.shape[1],
                "expected_condition": spec.condition_dim,
            },
        )
    if condition.shape[0] != batch:
        condition = np.broadcast_to(condition, (batch, spec.condition_dim))
    t = np.broadcast_to(np.asarray(t, dtype=float).reshape(-1), (batch,))

    h = np.concatenate([state, condition, time_embedding(t, spec.time_features)], axis=1)
    inputs: List[np.ndarray] = []
    pre_activations: List[np.ndarray] = []
    layers = net.layers()
    for index, (w, b) in enumerate(layers):
        inputs.append(h)
        a = h @ w + b
        if index < len(layers) - 1:
            pre_activations.append(a)
            h = _activate(spec.activation, a)
        else:
            h = a

    vd = spec.velocity_dim
    velocity = h[:, :vd]
    progress = _sigmoid(h[:, vd])
    logvar = h[:, vd + 1 :]
    cache = ForwardCache(inputs=inputs, pre_activations=pre_activations, progress=progress)
    if single:
        return NetOutput(velocity[0], progress[0], logvar[0]), cache
    return NetOutput(velocity, progress, logvar), cache


def gradient(net: Network, adjoint: NetAdjoint, cache: ForwardCache) -> np.ndarray:
    """Parameter gradient of ``sum(adjoint * outputs)`` for the cached forward pass."""
    spec = net.spec
    batch = cache.batch

    def _cotangent(value: Optional[np.ndarray], width: int) -> np.ndarray:
        if value is None:
            return np.zeros((batch, width))
        return np.asarray(value, dtype=float).reshape(batch, width)

    d_velocity = _cotangent(adjoint.velocity, spec.velocity_dim)
    d_progress = _cotangent(adjoint.progress, 1)
    d_logvar = _cotangent(adjoint.logvar, spec.logvar_dim)
    p = cache.progress[:, None]
    delta = np.concatenate([d_velocity, d_progress * p * (1.0 - p), d_logvar], axis=1)

    layers = net.layers()
    pieces: List[np.ndarray] = []
    for index in range(len(layers) - 1, -1, -1):
        w, _ = layers[index]
        h = cache.inputs[index]
        pieces.append(delta.sum(axis=0))
        pieces.append((h.T @ delta).ravel())
        if index > 0:
            delta = (delta @ w.T) * _activation_grad(spec.activation, cache.pre_activations[index - 1])
    return np.concatenate(pieces[::-1])


@dataclass(frozen=True, eq=False)
class OptimizerState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0


def init_optimizer(params: np.ndarray, learning_rate: float, **kwargs: float) -> OptimizerState:
    zeros = np.zeros_like(np.asarray(params, dtype=float))
    return OptimizerState(first_moment=zeros, second_moment=zeros.copy(), learning_rate=learning_rate, **kwargs)


def optimizer_step(
    state: OptimizerState, params: np.ndarray, grads: np.ndarray
) -> Tuple[np.ndarray, OptimizerState]:
    grads = np.asarray(grads, dtype=float)
    if grads.shape != state.first_moment.shape or np.shape(params) != grads.shape:
        raise FlowPolicyError(
            "DIMENSION_MISMATCH",
            "gradient shape does not match parameters",
            {"grads": grads.shape, "params": np.shape(params)},
        )
    if not np.all(np.isfinite(grads)):
        raise FlowPolicyError("DIVERGED", "diverged", {"step": state.step + 1})

    step = state.step + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * grads
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * grads * grads
    m_hat = m / (1.0 - state.beta1**step)
    v_hat = v / (1.0 - state.beta2**step)
    updated = np.asarray(params, dtype=float) - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    new_state = OptimizerState(
        first_moment=m,
        second_moment=v,
        learning_rate=state.learning_rate,
        beta1=state.beta1,
        beta2=state.beta2,
        epsilon=state.epsilon,
        step=step,
    )
    return updated, new_state


# --- checkpoints --------------------------------------------------------------


def save_network(net: Network, path: Path, metadata: Optional[Mapping[str, Any]] = None) -> None:
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "spec": net.spec.to_dict(),
        "param_count": int(net.params.size),
        "dtype": "<f8",
        "metadata": dict(metadata or {}),
    }
    payload = json.dumps(header, sort_keys=True).encode("utf-8") + b"\n" + net.params.astype("<f8").tobytes()
    atomic_write_bytes(path, payload)
    logger.debug("wrote checkpoint %s (%d parameters)", path, net.params.size)


def read_checkpoint(path: Path) -> Tuple[Network, dict[str, Any]]:
    if not path.exists():
        raise FlowPolicyError("CHECKPOINT", f"Checkpoint not found: {path}")
    data = path.read_bytes()
    if not data:
        raise FlowPolicyError("CHECKPOINT", f"Checkpoint is empty: {path}")
    head, sep, payload = data.partition(b"\n")
    if not sep:
        raise FlowPolicyError("CHECKPOINT", f"Checkpoint has no header: {path}")
    try:
        header = json.loads(head.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FlowPolicyError("CHECKPOINT", f"Checkpoint header is corrupt: {path}", {"error": str(e)})
    if not isinstance(header, dict) or header.get("format") != CHECKPOINT_FORMAT:
        raise FlowPolicyError("CHECKPOINT", f"Not a network checkpoint: {path}")
    if header.get("version") != CHECKPOINT_VERSION:
        raise FlowPolicyError(
            "CHECKPOINT",
            "Checkpoint version mismatch",
            {"expected": CHECKPOINT_VERSION, "found": header.get("version")},
        )
    spec = NetworkSpec.from_dict(header.get("spec") or {})
    count = header.get("param_count")
    if count != spec.param_count or len(payload) != spec.param_count * 8:
        raise FlowPolicyError(
            "CHECKPOINT",
            f"Checkpoint payload length mismatch: {path}",
            {"expected_bytes": spec.param_count * 8, "found_bytes": len(payload)},
        )
    params = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    metadata = header.get("metadata")
    return Network(spec, params), dict(metadata) if isinstance(metadata, dict) else {}


def load_network(path: Path) -> Network:
    network, _ = read_checkpoint(path)
    return network
