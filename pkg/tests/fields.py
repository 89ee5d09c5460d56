"""Closed-form flow fields used as stand-in streams in tests."""

from __future__ import annotations

from typing import Optional

import numpy as np

from msg_policy.flowmatch import FlowField, Prior
from msg_policy.manifold import StateSpace
from msg_policy.nn import NetOutput


class ConstantField(FlowField):
    """Same local velocity, progress and logvar everywhere."""

    def __init__(
        self,
        space: StateSpace,
        velocity: np.ndarray,
        prior: Prior,
        progress: float = 0.5,
        logvar: Optional[np.ndarray] = None,
    ) -> None:
        self.space = space
        self.prior = prior
        self.velocity = np.asarray(velocity, dtype=float)
        self.progress = progress
        self.logvar = None if logvar is None else np.asarray(logvar, dtype=float)

    @property
    def logvar_dim(self) -> int:
        return 0 if self.logvar is None else self.logvar.shape[-1]

    def evaluate(self, states: np.ndarray, conditions: np.ndarray, t: np.ndarray) -> NetOutput:
        z = np.atleast_2d(states)
        n = len(z)
        logvar = np.zeros((n, 0)) if self.logvar is None else np.broadcast_to(self.logvar, (n, self.logvar.shape[-1]))
        return NetOutput(
            velocity=np.broadcast_to(self.velocity, (n, self.space.tangent_dim)).copy(),
            progress=np.full(n, self.progress),
            logvar=logvar.copy(),
        )


class AttractorField(FlowField):
    """Velocity towards a fixed local goal that reaches it exactly at t = 1 under Euler steps."""

    def __init__(self, space: StateSpace, goal: np.ndarray, prior: Prior) -> None:
        self.space = space
        self.prior = prior
        self.goal = np.asarray(goal, dtype=float)

    @property
    def logvar_dim(self) -> int:
        return 0

    def evaluate(self, states: np.ndarray, conditions: np.ndarray, t: np.ndarray) -> NetOutput:
        z = np.atleast_2d(states)
        t = np.broadcast_to(np.asarray(t, dtype=float).reshape(-1), (len(z),))
        remaining = np.maximum(1.0 - t, 1e-9)[:, None]
        velocity = self.space.log_displacement(z, np.broadcast_to(self.goal, z.shape)) / remaining
        return NetOutput(velocity=velocity, progress=t.copy(), logvar=np.zeros((len(z), 0)))
