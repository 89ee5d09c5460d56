"""Scripted task suite: a 2D multimodal toy plus kinematic pose tasks with randomized frames."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence

import numpy as np

from .compose import Policy, RolloutResult, Stream, rollout
from .config import CompositionConfig, FrameSampler, SkillSpec, TaskSpec, ToyConfig
from .errors import FlowPolicyError
from .flowmatch import FlowField, Prior
from .gaussref import GaussianMixtureField
from .manifold import (
    POSE_SPACE,
    WORLD,
    EuclideanSpace,
    Frame,
    Pose,
    StateSpace,
    compose_arrays,
    position_error,
    quat_from_axis_angle,
    quat_from_yaw,
    quat_multiply,
    quat_rotate,
    rotation_error,
)
from .streams import Demonstration, orient_frame

logger = logging.getLogger(__name__)

EE_START = "ee_start"

_FIXED_PLANE = FrameSampler(position_low=(0.0, 0.0, 0.0), position_high=(0.0, 0.0, 0.0))

BUILTIN_TASKS: Dict[str, TaskSpec] = {
    "bimodal-2d": TaskSpec(
        name="bimodal-2d",
        kind="toy",
        space="euclidean-2",
        frames={
            "frame_a": _FIXED_PLANE,
            "frame_b": FrameSampler(
                position_low=(1.5, -1.5, 0.0), position_high=(1.5, -1.5, 0.0), yaw_range=(np.pi / 2, np.pi / 2)
            ),
        },
    ),
    "reach": TaskSpec(
        name="reach",
        space="se2",
        start=FrameSampler(position_low=(-0.1, -0.1, 0.0), position_high=(0.1, 0.1, 0.0), yaw_range=(-0.3, 0.3)),
        frames={
            "goal": FrameSampler(position_low=(0.3, -0.3, 0.0), position_high=(0.6, 0.3, 0.0), yaw_range=(-1.0, 1.0)),
        },
        skills=(
            SkillSpec(frames=(EE_START, "goal"), target_frame="goal", target_offset=(-0.12, 0.0, 0.0)),
            SkillSpec(frames=(EE_START, "goal"), target_frame="goal", gripper=1.0, steps=6),
        ),
    ),
    "drawer": TaskSpec(
        name="drawer",
        space="se2",
        start=FrameSampler(position_low=(-0.1, -0.1, 0.0), position_high=(0.1, 0.1, 0.0), yaw_range=(-0.3, 0.3)),
        frames={
            "drawer": FrameSampler(position_low=(0.4, -0.2, 0.0), position_high=(0.6, 0.2, 0.0), yaw_range=(-0.8, 0.8)),
        },
        skills=(
            SkillSpec(
                frames=(EE_START, "drawer"),
                target_frame="drawer",
                approach_offset=(-0.1, 0.0, 0.0),
                gripper=1.0,
            ),
            SkillSpec(frames=("drawer", WORLD), target_frame="drawer", target_offset=(-0.2, 0.0, 0.0), gripper=1.0),
        ),
    ),
    "place": TaskSpec(
        name="place",
        space="se3",
        start=FrameSampler(position_low=(-0.1, -0.1, 0.3), position_high=(0.1, 0.1, 0.3), yaw_range=(-0.3, 0.3)),
        frames={
            "cube": FrameSampler(position_low=(0.3, -0.3, 0.0), position_high=(0.5, -0.1, 0.0), yaw_range=(-0.8, 0.8)),
            "target": FrameSampler(position_low=(0.3, 0.1, 0.0), position_high=(0.5, 0.3, 0.0), yaw_range=(-0.8, 0.8)),
        },
        skills=(
            SkillSpec(
                frames=(EE_START, "cube"),
                target_frame="cube",
                target_offset=(0.0, 0.0, 0.02),
                approach_offset=(0.0, 0.0, 0.12),
                gripper=1.0,
            ),
            SkillSpec(
                frames=("cube", "target"),
                target_frame="target",
                target_offset=(0.0, 0.0, 0.05),
                approach_offset=(0.0, 0.0, 0.12),
            ),
        ),
    ),
}


def resolve_task(name: str, custom: Optional[Mapping[str, TaskSpec]] = None) -> TaskSpec:
    known = {**BUILTIN_TASKS, **(custom or {})}
    spec = known.get(name)
    if spec is None:
        raise FlowPolicyError("UNKNOWN_TASK", f"Unknown task: {name}", {"valid": sorted(known)})
    return spec


def space_for_task(spec: TaskSpec) -> StateSpace:
    if spec.space == "euclidean-2":
        return EuclideanSpace(2)
    return POSE_SPACE


# --- instances and demonstrations ---------------------------------------------


def _sample_pose(sampler: FrameSampler, rng: np.random.Generator) -> np.ndarray:
    position = rng.uniform(sampler.position_low, sampler.position_high)
    yaw = rng.uniform(*sampler.yaw_range)
    return np.concatenate([position, quat_from_yaw(yaw)])


@dataclass(frozen=True, eq=False)
class TaskInstance:
    """One episode's randomized frames; ``frames`` includes ``ee_start``."""

    frames: Mapping[str, np.ndarray]
    start: np.ndarray

    def frame(self, frame_id: str, oriented: bool = False) -> Frame:
        if frame_id == WORLD:
            return Frame.world()
        if frame_id not in self.frames:
            raise FlowPolicyError("MISSING_FRAME", f"Frame '{frame_id}' is not part of the task", {"available": sorted(self.frames)})
        frame = Frame.from_array(self.frames[frame_id], frame_id)
        if oriented and frame_id != EE_START:
            frame = orient_frame(frame, Pose.from_array(self.start))
        return frame


def sample_instance(spec: TaskSpec, rng: np.random.Generator) -> TaskInstance:
    start = _sample_pose(spec.start, rng)
    frames = {name: _sample_pose(spec.frames[name], rng) for name in sorted(spec.frames)}
    frames[EE_START] = start
    return TaskInstance(frames=frames, start=start)


def _grasp_orientation(spec: TaskSpec) -> np.ndarray:
    if spec.space == "se3":
        return quat_from_axis_angle((1.0, 0.0, 0.0), np.pi)
    return np.array([1.0, 0.0, 0.0, 0.0])


def _frame_pose(instance: TaskInstance, frame_id: str) -> np.ndarray:
    return Frame.world().array if frame_id == WORLD else np.asarray(instance.frames[frame_id])


def skill_targets(spec: TaskSpec, instance: TaskInstance) -> List[np.ndarray]:
    """World-frame goal pose of every skill."""
    targets = []
    for skill in spec.skills:
        local = np.concatenate(
            [skill.target_offset, quat_multiply(quat_from_yaw(skill.target_yaw), _grasp_orientation(spec))]
        )
        targets.append(compose_arrays(_frame_pose(instance, skill.target_frame), local))
    return targets


def _approach_pose(skill: SkillSpec, target: np.ndarray, frame_pose: np.ndarray) -> Optional[np.ndarray]:
    if skill.approach_offset is None:
        return None
    # offset is measured in the object frame axes, not the grasp axes
    waypoint = target.copy()
    waypoint[:3] += quat_rotate(frame_pose[3:], np.asarray(skill.approach_offset, dtype=float))
    return waypoint


def scripted_demo(
    spec: TaskSpec,
    instance: TaskInstance,
    rng: Optional[np.random.Generator] = None,
    noise: Optional[float] = None,
) -> Demonstration:
    """Geodesic segments through the approach waypoint, ending exactly on each skill target."""
    if not spec.skills:
        raise FlowPolicyError("INVALID", f"Task '{spec.name}' has no scripted skills")
    amplitude = spec.demo_noise if noise is None else noise
    current = np.asarray(instance.start, dtype=float)
    poses = [current]
    gripper = [0.0]
    splits: List[int] = []

    for index, (skill, target) in enumerate(zip(spec.skills, skill_targets(spec, instance))):
        if index:
            splits.append(len(poses))
        waypoint = _approach_pose(skill, target, _frame_pose(instance, skill.target_frame))
        bump = rng.standard_normal(3) * amplitude if rng is not None and amplitude > 0 else np.zeros(3)
        if spec.space == "se2":
            bump[2] = 0.0
        for s in range(1, skill.steps + 1):
            u = s / skill.steps
            if waypoint is None:
                pose = POSE_SPACE.interpolate(current, target, u)
            elif u <= 0.5:
                pose = POSE_SPACE.interpolate(current, waypoint, 2.0 * u)
            else:
                pose = POSE_SPACE.interpolate(waypoint, target, 2.0 * u - 1.0)
            pose = pose.copy()
            pose[:3] += bump * np.sin(np.pi * u)
            poses.append(pose)
            gripper.append(skill.gripper)
        poses.extend([target.copy()] * skill.dwell)
        gripper.extend([skill.gripper] * skill.dwell)
        current = target

    frames = {name: np.asarray(pose) for name, pose in instance.frames.items()}
    return Demonstration(np.stack(poses), np.asarray(gripper), frames, tuple(splits))


def generate_demos(spec: TaskSpec, n: int, rng: np.random.Generator) -> List[Demonstration]:
    if n < 1:
        raise FlowPolicyError("INVALID", "at least one demonstration is required", {"demos": n})
    return [scripted_demo(spec, sample_instance(spec, rng), rng) for _ in range(n)]


# --- bimodal toy ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BimodalToy:
    """Two planar streams whose local targets are the same two-mode mixture.

    Only one world mode is shared by both streams; composition should land there.
    """

    frames: tuple[Frame, Frame]
    local_modes: np.ndarray
    mode_std: float
    conditioning: np.ndarray

    @property
    def space(self) -> EuclideanSpace:
        return EuclideanSpace(2)

    def world_modes(self, stream: int) -> np.ndarray:
        return self.space.to_global(self.local_modes, self.frames[stream])

    @property
    def common_mode(self) -> np.ndarray:
        a, b = self.world_modes(0), self.world_modes(1)
        gaps = np.linalg.norm(a[:, None] - b[None], axis=-1)
        i, j = np.unravel_index(np.argmin(gaps), gaps.shape)
        return 0.5 * (a[i] + b[j])

    def sample_local(self, rng: np.random.Generator, n: int) -> np.ndarray:
        picks = rng.integers(0, len(self.local_modes), size=n)
        return self.local_modes[picks] + self.mode_std * rng.standard_normal((n, 2))

    def oracle_fields(self, prior: Prior) -> List[FlowField]:
        return [GaussianMixtureField(self.local_modes, self.mode_std**2, prior) for _ in self.frames]

    def streams(self, fields: Sequence[FlowField]) -> List[Stream]:
        return [Stream(frame, f, frame.id) for frame, f in zip(self.frames, fields)]

    def common_mode_rate(self, samples: np.ndarray, radius: Optional[float] = None) -> float:
        radius = 3.0 * self.mode_std if radius is None else radius
        hits = np.linalg.norm(np.atleast_2d(samples) - self.common_mode, axis=-1) <= radius
        return float(np.mean(hits))


def bimodal_toy(spec: TaskSpec, toy: Optional[ToyConfig] = None) -> BimodalToy:
    if spec.space != "euclidean-2" or len(spec.frames) != 2:
        raise FlowPolicyError("INVALID", f"Task '{spec.name}' is not a two-frame planar toy")
    toy = toy or ToyConfig()
    instance = sample_instance(spec, np.random.default_rng(0))
    frames = tuple(instance.frame(name) for name in sorted(spec.frames))
    offset = toy.mode_offset
    local_modes = np.array([[offset, 0.0], [-offset, 0.0]])
    space = EuclideanSpace(2)
    toy_model = BimodalToy(frames=frames, local_modes=local_modes, mode_std=toy.mode_std, conditioning=np.zeros(2))
    # centroid of the distinct world modes; the shared one counts once
    world = np.concatenate([space.to_global(local_modes, f) for f in frames])
    centre = (world.sum(axis=0) - toy_model.common_mode) / (len(world) - 1)
    return BimodalToy(frames=frames, local_modes=local_modes, mode_std=toy.mode_std, conditioning=centre)


# --- evaluation -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EpisodeResult:
    episode: int
    success: bool
    position_error: float
    rotation_error: float
    steps: int
    completed: bool
    via_reached: bool
    weights: List[Optional[np.ndarray]] = field(default_factory=list)


@dataclass(frozen=True, eq=False)
class EvaluationResult:
    episodes: List[EpisodeResult]
    rollouts: List[RolloutResult]

    @property
    def success_rate(self) -> float:
        if not self.episodes:
            return 0.0
        return float(np.mean([e.success for e in self.episodes]))


def success_from_errors(
    position_err: float,
    rotation_err: float,
    tolerance_position: float,
    tolerance_rotation: float,
    via_reached: bool = True,
) -> bool:
    return bool(via_reached and position_err <= tolerance_position and rotation_err <= tolerance_rotation)


PolicyFactory = Callable[[TaskInstance, int], Policy]


def evaluate(
    spec: TaskSpec,
    policy_factory: PolicyFactory,
    config: CompositionConfig,
    episodes: int,
    seed: int,
    max_steps: Optional[int] = None,
) -> EvaluationResult:
    """Fresh frames per episode; episode ``e`` draws from ``default_rng([seed, e])``."""
    if not spec.skills:
        raise FlowPolicyError("INVALID", f"Task '{spec.name}' has no skills to evaluate")
    cap = max_steps or spec.max_steps
    results: List[EpisodeResult] = []
    rollouts: List[RolloutResult] = []

    for episode in range(episodes):
        rng = np.random.default_rng([seed, episode])
        instance = sample_instance(spec, rng)
        policy = policy_factory(instance, episode)
        trace = rollout(policy, instance.start, config, rng, cap)
        targets = skill_targets(spec, instance)

        final = trace.states[-1]
        p_err = float(position_error(final, targets[-1]))
        r_err = float(rotation_error(final, targets[-1]))
        via = True
        if len(targets) > 1:
            via = bool(np.min(position_error(trace.states, targets[0])) <= spec.via_tolerance)
        success = success_from_errors(p_err, r_err, spec.tolerance_position, spec.tolerance_rotation, via)
        results.append(
            EpisodeResult(
                episode=episode,
                success=success,
                position_error=p_err,
                rotation_error=r_err,
                steps=trace.steps,
                completed=trace.completed,
                via_reached=via,
                weights=trace.weights,
            )
        )
        rollouts.append(trace)

    outcome = EvaluationResult(results, rollouts)
    logger.info("task %s: %d episodes, success rate %.3f", spec.name, episodes, outcome.success_rate)
    return outcome
