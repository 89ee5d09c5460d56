"""Closed-form Gaussian references: products, frame transforms, sampling and oracle flow fields."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import FlowPolicyError
from .flowmatch import FlowField, Prior
from .manifold import POSE_SPACE, EuclideanSpace, Frame, StateSpace
from .nn import NetOutput


@dataclass(frozen=True, eq=False)
class DiagGaussian:
    """Diagonal Gaussian over a vector, or over a pose (7-d mean, 6-d tangent variance)."""

    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self) -> None:
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        variance = np.asarray(self.variance, dtype=float).reshape(-1)
        if not (variance.size == mean.size or (mean.size == 7 and variance.size == 6)):
            raise FlowPolicyError("DIMENSION_MISMATCH", "variance does not match mean", {"mean": mean.size})
        if np.any(variance < 0) or not np.all(np.isfinite(variance)):
            raise FlowPolicyError("INVALID", "variances must be finite and non-negative")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variance", variance)

    @property
    def space(self) -> StateSpace:
        if self.mean.size == 7 and self.variance.size == 6:
            return POSE_SPACE
        return EuclideanSpace(self.mean.size)


def product(gs: Sequence[DiagGaussian]) -> DiagGaussian:
    if not gs:
        raise FlowPolicyError("INVALID", "product needs at least one Gaussian")
    if len({(g.mean.size, g.variance.size) for g in gs}) != 1:
        raise FlowPolicyError("DIMENSION_MISMATCH", "all factors must share dimensions")
    if len(gs) == 1:
        return gs[0]
    variances = np.stack([g.variance for g in gs])
    if np.any(variances <= 0):
        raise FlowPolicyError("INVALID", "product requires strictly positive variances")
    precision = 1.0 / variances
    variance = 1.0 / precision.sum(axis=0)
    space = gs[0].space
    if isinstance(space, EuclideanSpace):
        mean = variance * np.sum(precision * np.stack([g.mean for g in gs]), axis=0)
    else:
        mean = space.weighted_mean(np.stack([g.mean for g in gs]), precision * variance)
    return DiagGaussian(mean, variance)


def transform(g: DiagGaussian, frame: Frame) -> DiagGaussian:
    """Map a local Gaussian to the world; the rotated covariance keeps only its diagonal."""
    space = g.space
    return DiagGaussian(space.to_global(g.mean, frame), space.rotate_variance(g.variance, frame))


def sample(g: DiagGaussian, rng: np.random.Generator, n: int) -> np.ndarray:
    noise = rng.standard_normal((n, g.variance.size)) * np.sqrt(g.variance)
    return g.space.step(np.broadcast_to(g.mean, (n, g.mean.size)), noise)


class GaussianMixtureField(FlowField):
    """Exact marginal velocity of straight-line flow matching to a diagonal Gaussian mixture.

    The prior is isotropic with scale ``prior.sigma_pos`` centred on the conditioning
    input (pose-centric prior) or on the origin (standard prior). With
    ``anchored=True`` component means are offsets from the conditioning input.
    Progress reports ``t``; logvar reports the responsibility-weighted component
    variance.
    """

    def __init__(
        self,
        means: np.ndarray,
        variances: np.ndarray,
        prior: Prior,
        weights: Optional[np.ndarray] = None,
        anchored: bool = False,
        grouped_logvar: bool = False,
    ) -> None:
        means = np.atleast_2d(np.asarray(means, dtype=float))
        variances = np.broadcast_to(np.asarray(variances, dtype=float), means.shape).copy()
        if np.any(variances <= 0):
            raise FlowPolicyError("INVALID", "oracle component variances must be positive")
        if prior.kind == "mixture":
            raise FlowPolicyError("INVALID", "oracle fields support standard and pose-centric priors")
        count = len(means)
        weights = np.full(count, 1.0 / count) if weights is None else np.asarray(weights, dtype=float)
        if weights.shape != (count,) or abs(weights.sum() - 1.0) > 1e-9:
            raise FlowPolicyError("INVALID", "mixture weights must sum to 1")
        self.means = means
        self.variances = variances
        self.weights = weights
        self.prior = prior
        self.anchored = anchored
        self.grouped_logvar = grouped_logvar
        self.space = EuclideanSpace(means.shape[1])

    @property
    def logvar_dim(self) -> int:
        return 1 if self.grouped_logvar else self.space.tangent_dim

    def evaluate(self, states: np.ndarray, conditions: np.ndarray, t: np.ndarray) -> NetOutput:
        z = np.atleast_2d(np.asarray(states, dtype=float))
        cond = np.broadcast_to(np.asarray(conditions, dtype=float), z.shape)
        t = np.broadcast_to(np.asarray(t, dtype=float).reshape(-1), (len(z),))[:, None, None]

        prior_var = self.prior.sigma_pos**2
        m0 = cond if self.prior.kind == "pose-centric" else np.zeros_like(z)
        m1 = self.means[None] + (cond[:, None] if self.anchored else 0.0)
        s2 = self.variances[None]

        mu_t = (1.0 - t) * m0[:, None] + t * m1
        var_t = (1.0 - t) ** 2 * prior_var + t**2 * s2
        gain = (t * s2 - (1.0 - t) * prior_var) / var_t
        component_velocity = (m1 - m0[:, None]) + gain * (z[:, None] - mu_t)

        log_density = -0.5 * np.sum((z[:, None] - mu_t) ** 2 / var_t + np.log(var_t), axis=-1)
        log_density = log_density + np.log(self.weights)[None]
        log_density -= log_density.max(axis=1, keepdims=True)
        resp = np.exp(log_density)
        resp /= resp.sum(axis=1, keepdims=True)

        velocity = np.sum(resp[..., None] * component_velocity, axis=1)
        variance = np.sum(resp[..., None] * s2, axis=1)
        logvar = np.log(variance.mean(axis=1, keepdims=True) if self.grouped_logvar else variance)
        return NetOutput(velocity=velocity, progress=t[:, 0, 0].copy(), logvar=logvar)
