"""Geometry of the pose manifold R^3 x S^3 and of plain Euclidean state spaces.

Poses are stored as 7 scalars ``[x, y, z, w, qx, qy, qz]`` with a scalar-first
unit quaternion canonicalized to ``w >= 0``. All array kernels are vectorized
over leading axes.

Tangent vectors are 6 scalars ``[linear(3), angular(3)]``. The angular part uses
world-aligned log coordinates: ``log_map(q_from, q_to) = log(q_to * q_from^-1)``
and ``exp_map(q, w) = exp(w) * q``. Under that convention a velocity expressed in
a local frame maps to the world frame by rotating both parts with the frame's
rotation, and geodesic velocities are constant along the geodesic.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import FlowPolicyError

ANTIPODAL_TOL = 1e-12
_IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])
IDENTITY_POSE = np.array([0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0])


# --- quaternion kernels -------------------------------------------------------


def quat_multiply(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    pw, px, py, pz = np.moveaxis(p, -1, 0)
    qw, qx, qy, qz = np.moveaxis(q, -1, 0)
    return np.stack(
        [
            pw * qw - px * qx - py * qy - pz * qz,
            pw * qx + px * qw + py * qz - pz * qy,
            pw * qy - px * qz + py * qw + pz * qx,
            pw * qz + px * qy - py * qx + pz * qw,
        ],
        axis=-1,
    )


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.asarray(q, dtype=float) * np.array([1.0, -1.0, -1.0, -1.0])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    """Unit-normalize and resolve the double cover to ``w >= 0``."""
    q = np.asarray(q, dtype=float)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norm < 1e-12):
        raise FlowPolicyError("INVALID", "quaternion has zero norm")
    q = q / norm
    return np.where(q[..., :1] < 0.0, -q, q)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    w, x, y, z = np.moveaxis(q, -1, 0)
    rows = [
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ]
    return np.stack([np.stack(row, axis=-1) for row in rows], axis=-2)


def quat_from_matrix(rotation: np.ndarray) -> np.ndarray:
    m = np.asarray(rotation, dtype=float)
    m00, m01, m02 = m[..., 0, 0], m[..., 0, 1], m[..., 0, 2]
    m10, m11, m12 = m[..., 1, 0], m[..., 1, 1], m[..., 1, 2]
    m20, m21, m22 = m[..., 2, 0], m[..., 2, 1], m[..., 2, 2]
    trace = m00 + m11 + m22

    # Shepperd: pick the numerically largest component as pivot.
    pivots = np.stack([trace, m00, m11, m22], axis=-1)
    choice = np.argmax(pivots, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        s0 = 0.5 * np.sqrt(np.maximum(1.0 + trace, 0.0))
        s1 = 0.5 * np.sqrt(np.maximum(1.0 + m00 - m11 - m22, 0.0))
        s2 = 0.5 * np.sqrt(np.maximum(1.0 - m00 + m11 - m22, 0.0))
        s3 = 0.5 * np.sqrt(np.maximum(1.0 - m00 - m11 + m22, 0.0))
        candidates = np.stack(
            [
                np.stack([s0, (m21 - m12) / (4 * s0), (m02 - m20) / (4 * s0), (m10 - m01) / (4 * s0)], axis=-1),
                np.stack([(m21 - m12) / (4 * s1), s1, (m01 + m10) / (4 * s1), (m02 + m20) / (4 * s1)], axis=-1),
                np.stack([(m02 - m20) / (4 * s2), (m01 + m10) / (4 * s2), s2, (m12 + m21) / (4 * s2)], axis=-1),
                np.stack([(m10 - m01) / (4 * s3), (m02 + m20) / (4 * s3), (m12 + m21) / (4 * s3), s3], axis=-1),
            ],
            axis=-2,
        )
    picked = np.take_along_axis(candidates, choice[..., None, None], axis=-2)[..., 0, :]
    return quat_normalize(picked)


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    return np.einsum("...ij,...j->...i", quat_to_matrix(q), np.asarray(v, dtype=float))


def quat_exp(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    angle = np.linalg.norm(w, axis=-1, keepdims=True)
    # sin(angle / 2) / angle, finite at zero
    scale = 0.5 * np.sinc(angle / (2.0 * np.pi))
    return np.concatenate([np.cos(0.5 * angle), scale * w], axis=-1)


def quat_log(q: np.ndarray) -> np.ndarray:
    q = quat_normalize(q)
    w = q[..., 0]
    if np.any(w < ANTIPODAL_TOL):
        raise FlowPolicyError("GEODESIC_UNDEFINED", "geodesic undefined", {"reason": "rotation angle is pi"})
    v = q[..., 1:]
    norm = np.linalg.norm(v, axis=-1)
    angle = 2.0 * np.arctan2(norm, w)
    safe = norm > 1e-15
    factor = np.where(safe, angle / np.where(safe, norm, 1.0), 2.0 / w)
    return factor[..., None] * v


def log_map(q_from: np.ndarray, q_to: np.ndarray) -> np.ndarray:
    """Spatial (world-aligned) log: ``log(q_to * q_from^-1)``.

    The result is expressed in world axes, not in the body axes of ``q_from``;
    the body-frame form would be ``log(q_from^-1 * q_to)``. The two differ by a
    rotation with ``q_from``, so norms and geodesic distances agree.
    """
    return quat_log(quat_multiply(q_to, quat_conjugate(q_from)))


def exp_map(q: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Inverse of :func:`log_map`: left-multiplies ``q`` by ``exp(w)`` with ``w`` in world axes."""
    return quat_normalize(quat_multiply(quat_exp(w), q))


def quat_from_axis_angle(axis: Sequence[float], angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    return quat_normalize(quat_exp(axis * angle))


def quat_from_yaw(yaw: np.ndarray | float) -> np.ndarray:
    half = 0.5 * np.asarray(yaw, dtype=float)
    zeros = np.zeros_like(half)
    return quat_normalize(np.stack([np.cos(half), zeros, zeros, np.sin(half)], axis=-1))


# --- pose array kernels -------------------------------------------------------


def compose_arrays(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    position = a[..., :3] + quat_rotate(a[..., 3:], b[..., :3])
    orientation = quat_normalize(quat_multiply(a[..., 3:], b[..., 3:]))
    return np.concatenate([position, orientation], axis=-1)


def inverse_arrays(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    q_inv = quat_conjugate(a[..., 3:])
    return np.concatenate([-quat_rotate(q_inv, a[..., :3]), quat_normalize(q_inv)], axis=-1)


def position_error(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.linalg.norm(np.asarray(a)[..., :3] - np.asarray(b)[..., :3], axis=-1)


def rotation_error(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Geodesic angle in radians between the orientations of two pose arrays."""
    dot = np.abs(np.sum(np.asarray(a)[..., 3:] * np.asarray(b)[..., 3:], axis=-1))
    return 2.0 * np.arccos(np.clip(dot, 0.0, 1.0))


def _normalized_weights(weights: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    weights = np.broadcast_to(np.asarray(weights, dtype=float), shape)
    if np.any(weights < 0.0) or not np.all(np.isfinite(weights)):
        raise FlowPolicyError("DEGENERATE_WEIGHTS", "degenerate weights", {"reason": "negative or non-finite"})
    totals = weights.sum(axis=0)
    if np.any(totals <= 0.0):
        raise FlowPolicyError("DEGENERATE_WEIGHTS", "degenerate weights", {"reason": "all-zero weights"})
    return weights / totals


def weighted_mean_arrays(states: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """One-shot weighted geodesic mean over axis 0.

    ``states`` is ``(F, ..., 7)`` and ``weights`` broadcasts to ``(F, ..., 6)``
    (one weight per tangent dimension). When the three orientation weights of
    every stream agree, orientations are combined as a sign-aligned weighted
    quaternion sum; otherwise per-axis weights are applied to log coordinates
    about the first stream's orientation.
    """
    states = np.asarray(states, dtype=float)
    count = states.shape[0]
    batch = states.shape[1:-1]
    weights = _normalized_weights(weights, states.shape[:-1] + (6,))
    if count == 1:
        return states[0]

    flat = states.reshape(count, -1, 7)
    w = weights.reshape(count, -1, 6)

    position = np.sum(w[..., :3] * flat[..., :3], axis=0)

    quats = flat[..., 3:]
    ref = quats[0]
    sign = np.where(np.sum(quats * ref, axis=-1, keepdims=True) < 0.0, -1.0, 1.0)
    aligned = quats * sign
    rot_w = w[..., 3:]
    orientation = np.sum(rot_w[..., :1] * aligned, axis=0)

    uniform = np.all(rot_w == rot_w[..., :1], axis=(0, 2))
    if not np.all(uniform):
        mask = ~uniform
        logs = log_map(ref[mask][None], aligned[:, mask])
        mean_log = np.sum(rot_w[:, mask] * logs, axis=0)
        orientation[mask] = quat_multiply(quat_exp(mean_log), ref[mask])

    out = np.concatenate([position, quat_normalize(orientation)], axis=-1)

    dominant = np.all(w == 1.0, axis=-1)
    if np.any(dominant):
        owner = np.argmax(dominant, axis=0)
        chosen = np.take_along_axis(flat, owner[None, :, None], axis=0)[0]
        out = np.where(np.any(dominant, axis=0)[:, None], chosen, out)

    return out.reshape(batch + (7,))


# --- value types --------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Pose:
    position: np.ndarray
    orientation: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3).copy())
        object.__setattr__(self, "orientation", quat_normalize(np.asarray(self.orientation, dtype=float).reshape(4)))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.zeros(3), _IDENTITY_QUAT)

    @classmethod
    def from_array(cls, values: Sequence[float] | np.ndarray) -> "Pose":
        values = np.asarray(values, dtype=float)
        if values.shape != (7,):
            raise FlowPolicyError("DIMENSION_MISMATCH", "pose arrays have 7 entries", {"shape": values.shape})
        return cls(values[:3], values[3:])

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.position, self.orientation])

    def __repr__(self) -> str:
        return f"Pose(position={self.position.tolist()}, orientation={self.orientation.tolist()})"


@dataclass(frozen=True, eq=False)
class Tangent:
    linear: np.ndarray
    angular: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "linear", np.asarray(self.linear, dtype=float).reshape(3).copy())
        object.__setattr__(self, "angular", np.asarray(self.angular, dtype=float).reshape(3).copy())
        if not (np.all(np.isfinite(self.linear)) and np.all(np.isfinite(self.angular))):
            raise FlowPolicyError("NON_FINITE", "tangent vector has non-finite components")

    @classmethod
    def from_array(cls, values: Sequence[float] | np.ndarray) -> "Tangent":
        values = np.asarray(values, dtype=float).reshape(6)
        return cls(values[:3], values[3:])

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.linear, self.angular])


WORLD = "world"


@dataclass(frozen=True, eq=False)
class Frame:
    pose: Pose
    id: str = WORLD

    @classmethod
    def from_array(cls, values: Sequence[float] | np.ndarray, frame_id: str) -> "Frame":
        return cls(Pose.from_array(values), frame_id)

    @classmethod
    def world(cls) -> "Frame":
        return cls(Pose.identity(), WORLD)

    @cached_property
    def array(self) -> np.ndarray:
        return self.pose.as_array()

    @cached_property
    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.pose.orientation)

    @cached_property
    def is_identity(self) -> bool:
        return bool(np.all(self.pose.position == 0.0) and np.all(self.pose.orientation == _IDENTITY_QUAT))


# --- pose-level operations ----------------------------------------------------


def compose(a: Pose, b: Pose) -> Pose:
    return Pose.from_array(compose_arrays(a.as_array(), b.as_array()))


def inverse(p: Pose) -> Pose:
    return Pose.from_array(inverse_arrays(p.as_array()))


def to_local(ee: Pose, f: Frame) -> Pose:
    return Pose.from_array(POSE_SPACE.to_local(ee.as_array(), f))


def to_global(local: Pose, f: Frame) -> Pose:
    return Pose.from_array(POSE_SPACE.to_global(local.as_array(), f))


def transform_tangent(v: Tangent, f: Frame) -> Tangent:
    return Tangent.from_array(POSE_SPACE.transform_tangent(v.as_array(), f))


def geodesic_interpolate(a: Pose, b: Pose, t: float) -> Pose:
    if not 0.0 <= t <= 1.0:
        raise FlowPolicyError("INVALID", "interpolation time must lie in [0, 1]", {"t": t})
    return Pose.from_array(POSE_SPACE.interpolate(a.as_array(), b.as_array(), np.asarray(t)))


def weighted_geodesic_mean(poses: Sequence[Pose], weights: Sequence[Sequence[float] | float]) -> Pose:
    if not poses:
        raise FlowPolicyError("INVALID", "weighted_geodesic_mean needs at least one pose")
    if len(weights) != len(poses):
        raise FlowPolicyError("DIMENSION_MISMATCH", "one weight vector per pose is required")
    states = np.stack([p.as_array() for p in poses])
    w = np.stack([np.broadcast_to(np.asarray(wf, dtype=float), (6,)) for wf in weights])
    return Pose.from_array(weighted_mean_arrays(states, w))


# --- state spaces -------------------------------------------------------------


class StateSpace(ABC):
    """A state manifold with frame actions, exp/log updates and tangent groups."""

    tag: str
    state_dim: int
    tangent_dim: int
    groups: tuple[tuple[int, int], ...]

    @abstractmethod
    def identity(self) -> np.ndarray: ...

    @abstractmethod
    def to_local(self, states: np.ndarray, frame: Frame) -> np.ndarray: ...

    @abstractmethod
    def to_global(self, states: np.ndarray, frame: Frame) -> np.ndarray: ...

    @abstractmethod
    def transform_tangent(self, v: np.ndarray, frame: Frame) -> np.ndarray: ...

    @abstractmethod
    def rotate_variance(self, variance: np.ndarray, frame: Frame) -> np.ndarray: ...

    @abstractmethod
    def interpolate(self, z0: np.ndarray, z1: np.ndarray, t: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def log_displacement(self, z0: np.ndarray, z1: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def step(self, states: np.ndarray, delta: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def perturb(self, center: np.ndarray, noise: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def weighted_mean(self, states: np.ndarray, weights: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def noise_scale(self, sigma_pos: float, sigma_rot: float) -> np.ndarray: ...

    def tangent_variance(self, samples: np.ndarray, mean: np.ndarray | None = None) -> np.ndarray:
        """Population (ddof=0) variance over axis 0 in tangent coordinates about ``mean``."""
        samples = np.asarray(samples, dtype=float)
        if mean is None:
            mean = self.weighted_mean(samples, np.ones(samples.shape[:-1] + (self.tangent_dim,)))
        offsets = self.log_displacement(np.broadcast_to(mean, samples.shape), samples)
        return np.mean(offsets**2, axis=0)

    def check_states(self, states: np.ndarray) -> np.ndarray:
        states = np.asarray(states, dtype=float)
        if states.shape[-1] != self.state_dim:
            raise FlowPolicyError(
                "DIMENSION_MISMATCH",
                f"{self.tag} states have {self.state_dim} entries",
                {"shape": states.shape},
            )
        return states


class PoseSpace(StateSpace):
    tag = "pose"
    state_dim = 7
    tangent_dim = 6
    groups = ((0, 3), (3, 6))

    def identity(self) -> np.ndarray:
        return IDENTITY_POSE.copy()

    def to_local(self, states: np.ndarray, frame: Frame) -> np.ndarray:
        if frame.is_identity:
            return states
        states = np.asarray(states, dtype=float)
        q_inv = quat_conjugate(frame.pose.orientation)
        position = (states[..., :3] - frame.pose.position) @ frame.rotation
        orientation = quat_normalize(quat_multiply(q_inv, states[..., 3:]))
        return np.concatenate([position, orientation], axis=-1)

    def to_global(self, states: np.ndarray, frame: Frame) -> np.ndarray:
        if frame.is_identity:
            return states
        states = np.asarray(states, dtype=float)
        position = states[..., :3] @ frame.rotation.T + frame.pose.position
        orientation = quat_normalize(quat_multiply(frame.pose.orientation, states[..., 3:]))
        return np.concatenate([position, orientation], axis=-1)

    def transform_tangent(self, v: np.ndarray, frame: Frame) -> np.ndarray:
        if frame.is_identity:
            return v
        v = np.asarray(v, dtype=float)
        r = frame.rotation
        return np.concatenate([v[..., :3] @ r.T, v[..., 3:] @ r.T], axis=-1)

    def rotate_variance(self, variance: np.ndarray, frame: Frame) -> np.ndarray:
        if frame.is_identity:
            return variance
        variance = np.asarray(variance, dtype=float)
        r2 = frame.rotation**2
        return np.concatenate([variance[..., :3] @ r2.T, variance[..., 3:] @ r2.T], axis=-1)

    def interpolate(self, z0: np.ndarray, z1: np.ndarray, t: np.ndarray) -> np.ndarray:
        z0 = np.asarray(z0, dtype=float)
        z1 = np.asarray(z1, dtype=float)
        t = np.asarray(t, dtype=float)[..., None]
        position = (1.0 - t) * z0[..., :3] + t * z1[..., :3]
        orientation = exp_map(z0[..., 3:], t * log_map(z0[..., 3:], z1[..., 3:]))
        return np.concatenate([position, orientation], axis=-1)

    def log_displacement(self, z0: np.ndarray, z1: np.ndarray) -> np.ndarray:
        z0 = np.asarray(z0, dtype=float)
        z1 = np.asarray(z1, dtype=float)
        return np.concatenate([z1[..., :3] - z0[..., :3], log_map(z0[..., 3:], z1[..., 3:])], axis=-1)

    def step(self, states: np.ndarray, delta: np.ndarray) -> np.ndarray:
        states = np.asarray(states, dtype=float)
        delta = np.asarray(delta, dtype=float)
        position = states[..., :3] + delta[..., :3]
        orientation = exp_map(states[..., 3:], delta[..., 3:])
        return np.concatenate([position, orientation], axis=-1)

    def perturb(self, center: np.ndarray, noise: np.ndarray) -> np.ndarray:
        # noise is expressed in the center's body axes
        center = np.broadcast_to(np.asarray(center, dtype=float), np.shape(noise)[:-1] + (7,))
        noise = np.asarray(noise, dtype=float)
        r = quat_to_matrix(center[..., 3:])
        linear = np.einsum("...ij,...j->...i", r, noise[..., :3])
        angular = np.einsum("...ij,...j->...i", r, noise[..., 3:])
        return np.concatenate([center[..., :3] + linear, exp_map(center[..., 3:], angular)], axis=-1)

    def weighted_mean(self, states: np.ndarray, weights: np.ndarray) -> np.ndarray:
        return weighted_mean_arrays(states, weights)

    def noise_scale(self, sigma_pos: float, sigma_rot: float) -> np.ndarray:
        return np.array([sigma_pos] * 3 + [sigma_rot] * 3, dtype=float)


class EuclideanSpace(StateSpace):
    """R^d with frames acting through their first ``d`` axes (planar frames for d=2)."""

    def __init__(self, dim: int) -> None:
        if dim < 1 or dim > 3:
            raise FlowPolicyError("INVALID", "euclidean spaces support 1 to 3 dimensions", {"dim": dim})
        self.tag = f"euclidean-{dim}"
        self.state_dim = dim
        self.tangent_dim = dim
        self.groups = ((0, dim),)
        self._dim = dim

    def _block(self, frame: Frame) -> tuple[np.ndarray, np.ndarray]:
        d = self._dim
        r = frame.rotation[:d, :d]
        if not np.allclose(r.T @ r, np.eye(d), atol=1e-9):
            raise FlowPolicyError("INVALID", f"frame '{frame.id}' rotates out of the first {d} axes")
        return r, frame.pose.position[:d]

    def identity(self) -> np.ndarray:
        return np.zeros(self._dim)

    def to_local(self, states: np.ndarray, frame: Frame) -> np.ndarray:
        if frame.is_identity:
            return states
        r, offset = self._block(frame)
        return (np.asarray(states, dtype=float) - offset) @ r

    def to_global(self, states: np.ndarray, frame: Frame) -> np.ndarray:
        if frame.is_identity:
            return states
        r, offset = self._block(frame)
        return np.asarray(states, dtype=float) @ r.T + offset

    def transform_tangent(self, v: np.ndarray, frame: Frame) -> np.ndarray:
        if frame.is_identity:
            return v
        r, _ = self._block(frame)
        return np.asarray(v, dtype=float) @ r.T

    def rotate_variance(self, variance: np.ndarray, frame: Frame) -> np.ndarray:
        if frame.is_identity:
            return variance
        r, _ = self._block(frame)
        return np.asarray(variance, dtype=float) @ (r**2).T

    def interpolate(self, z0: np.ndarray, z1: np.ndarray, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)[..., None]
        return (1.0 - t) * np.asarray(z0, dtype=float) + t * np.asarray(z1, dtype=float)

    def log_displacement(self, z0: np.ndarray, z1: np.ndarray) -> np.ndarray:
        return np.asarray(z1, dtype=float) - np.asarray(z0, dtype=float)

    def step(self, states: np.ndarray, delta: np.ndarray) -> np.ndarray:
        return np.asarray(states, dtype=float) + np.asarray(delta, dtype=float)

    def perturb(self, center: np.ndarray, noise: np.ndarray) -> np.ndarray:
        return np.asarray(center, dtype=float) + np.asarray(noise, dtype=float)

    def weighted_mean(self, states: np.ndarray, weights: np.ndarray) -> np.ndarray:
        states = np.asarray(states, dtype=float)
        weights = _normalized_weights(weights, states.shape)
        if states.shape[0] == 1:
            return states[0]
        return np.sum(weights * states, axis=0)

    def noise_scale(self, sigma_pos: float, sigma_rot: float) -> np.ndarray:
        return np.full(self._dim, sigma_pos, dtype=float)


POSE_SPACE = PoseSpace()


def space_from_tag(tag: str) -> StateSpace:
    if tag == "pose":
        return POSE_SPACE
    if tag.startswith("euclidean-"):
        try:
            return EuclideanSpace(int(tag.split("-", 1)[1]))
        except ValueError:
            pass
    raise FlowPolicyError("INVALID", f"Unknown state space tag: {tag}")
