from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence

import numpy as np

from .errors import FlowPolicyError
from .flowmatch import TrainingSet
from .manifold import POSE_SPACE, WORLD, Frame, Pose, quat_from_matrix, quat_normalize
from .records import read_jsonl, write_jsonl

VARIANCE_FLOOR = 1e-6


def _pose_rows(values: Any, what: str) -> np.ndarray:
    rows = np.atleast_2d(np.asarray(values, dtype=float))
    if rows.shape[-1] != 7:
        raise FlowPolicyError("DIMENSION_MISMATCH", f"{what} must be 7-scalar poses", {"shape": rows.shape})
    return np.concatenate([rows[:, :3], quat_normalize(rows[:, 3:])], axis=1)


@dataclass(frozen=True, eq=False)
class Demonstration:
    ee_poses: np.ndarray
    gripper: np.ndarray
    frames: Mapping[str, np.ndarray]
    skill_splits: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        poses = _pose_rows(self.ee_poses, "ee_poses")
        gripper = np.asarray(self.gripper, dtype=float).reshape(-1)
        if len(poses) < 2:
            raise FlowPolicyError("INVALID", "a demonstration needs at least 2 steps")
        if gripper.shape != (len(poses),) or np.any(gripper < 0) or np.any(gripper > 1):
            raise FlowPolicyError("INVALID", "gripper must hold one value in [0, 1] per step")
        splits = tuple(int(s) for s in self.skill_splits)
        if any(b <= a for a, b in zip(splits, splits[1:])) or any(s <= 0 or s >= len(poses) for s in splits):
            raise FlowPolicyError("INVALID", "skill_splits must be strictly increasing inside the demo", {"splits": splits})
        frames = {str(k): _pose_rows(v, f"frame '{k}'")[0] for k, v in self.frames.items()}
        object.__setattr__(self, "ee_poses", poses)
        object.__setattr__(self, "gripper", gripper)
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "skill_splits", splits)

    @property
    def steps(self) -> int:
        return len(self.ee_poses)

    @property
    def skill_count(self) -> int:
        return len(self.skill_splits) + 1

    def frame(self, frame_id: str) -> Frame:
        if frame_id == WORLD:
            return Frame.world()
        if frame_id not in self.frames:
            raise FlowPolicyError(
                "MISSING_FRAME",
                f"Frame '{frame_id}' is not present in the demonstration",
                {"available": sorted(self.frames)},
            )
        return Frame.from_array(self.frames[frame_id], frame_id)

    def skill_bounds(self) -> List[tuple[int, int]]:
        edges = [0, *self.skill_splits, self.steps]
        return list(zip(edges[:-1], edges[1:]))

    def to_record(self) -> Dict[str, Any]:
        return {
            "steps": [
                {"pose": pose.tolist(), "gripper": float(g)} for pose, g in zip(self.ee_poses, self.gripper)
            ],
            "frames": {k: v.tolist() for k, v in sorted(self.frames.items())},
            "skill_splits": list(self.skill_splits),
        }

    @classmethod
    def from_record(cls, record: Mapping[str, Any]) -> "Demonstration":
        steps = record.get("steps")
        frames = record.get("frames")
        if not isinstance(steps, list) or not isinstance(frames, Mapping):
            raise FlowPolicyError("INVALID", "demo records need 'steps' and 'frames'")
        try:
            poses = [step["pose"] for step in steps]
            gripper = [step.get("gripper", 0.0) for step in steps]
        except (KeyError, TypeError) as e:
            raise FlowPolicyError("INVALID", "malformed demo step", {"error": str(e)})
        return cls(np.asarray(poses), np.asarray(gripper), dict(frames), tuple(record.get("skill_splits") or ()))


def write_demos(path: Path, demos: Sequence[Demonstration]) -> None:
    write_jsonl(path, [demo.to_record() for demo in demos])


def read_demos(path: Path) -> List[Demonstration]:
    if not path.exists():
        raise FlowPolicyError("MISSING_INPUT", f"Demonstration file not found: {path}")
    try:
        records = read_jsonl(path)
    except ValueError as e:
        raise FlowPolicyError("INVALID", str(e))
    return [Demonstration.from_record(record) for record in records]


def annotate_progress(demo: Demonstration) -> np.ndarray:
    """Progress ``s / S`` with ``s`` counted from 1 inside each skill of length ``S``."""
    labels = np.empty(demo.steps)
    for start, end in demo.skill_bounds():
        length = end - start
        labels[start:end] = np.arange(1, length + 1) / length
    return labels


def skill_labels(demo: Demonstration) -> np.ndarray:
    labels = np.empty(demo.steps, dtype=int)
    for index, (start, end) in enumerate(demo.skill_bounds()):
        labels[start:end] = index
    return labels


def segment_by_gripper(demo: Demonstration, threshold: float = 0.5) -> tuple[int, ...]:
    closed = demo.gripper >= threshold
    return tuple(int(i) for i in np.flatnonzero(closed[1:] != closed[:-1]) + 1)


def orient_frame(f: Frame, ee: Pose) -> Frame:
    """Same origin, x-axis towards the end-effector, z from world-z (world-y if parallel)."""
    direction = ee.position - f.pose.position
    distance = np.linalg.norm(direction)
    if distance < 1e-9:
        raise FlowPolicyError("DEGENERATE_ORIENTATION", "degenerate orientation", {"frame": f.id})
    x_axis = direction / distance
    z_axis = np.array([0.0, 0.0, 1.0]) - x_axis[2] * x_axis
    if np.linalg.norm(z_axis) < 1e-6:
        z_axis = np.array([0.0, 1.0, 0.0]) - x_axis[1] * x_axis
    z_axis /= np.linalg.norm(z_axis)
    y_axis = np.cross(z_axis, x_axis)
    rotation = np.stack([x_axis, y_axis, z_axis], axis=1)
    return Frame(Pose(f.pose.position, quat_from_matrix(rotation)), f.id)


@dataclass(frozen=True, eq=False)
class LocalDataset:
    """Records ``(target pose s, condition pose s-1)`` for steps s >= 1, in one local frame."""

    frame_id: str
    targets: np.ndarray
    conditions: np.ndarray
    progress: np.ndarray
    skills: np.ndarray
    demo_index: np.ndarray
    step_index: np.ndarray
    frames: tuple[Frame, ...]

    def __len__(self) -> int:
        return len(self.targets)

    def to_global(self, demo: int) -> np.ndarray:
        rows = np.flatnonzero(self.demo_index == demo)
        if rows.size == 0:
            raise FlowPolicyError("INVALID", f"No records for demo {demo}")
        rows = rows[np.argsort(self.step_index[rows])]
        local = np.concatenate([self.conditions[rows[:1]], self.targets[rows]])
        return POSE_SPACE.to_global(local, self.frames[demo])

    def initial_conditions(self) -> np.ndarray:
        """First conditioning pose of every demo, in local coordinates."""
        firsts = []
        for demo in range(len(self.frames)):
            rows = np.flatnonzero(self.demo_index == demo)
            if rows.size:
                firsts.append(self.conditions[rows[np.argmin(self.step_index[rows])]])
        return np.stack(firsts) if firsts else np.zeros((0, 7))


def to_local_dataset(
    demos: Sequence[Demonstration],
    frame_id: str,
    oriented: bool = False,
    skill: Optional[int] = None,
) -> LocalDataset:
    targets, conditions, progress, skills, demo_index, step_index = [], [], [], [], [], []
    frames: List[Frame] = []
    for index, demo in enumerate(demos):
        frame = demo.frame(frame_id)
        if oriented:
            frame = orient_frame(frame, Pose.from_array(demo.ee_poses[0]))
        frames.append(frame)
        local = POSE_SPACE.to_local(demo.ee_poses, frame)
        labels = annotate_progress(demo)
        skill_ids = skill_labels(demo)
        keep = np.arange(1, demo.steps)
        if skill is not None:
            keep = keep[skill_ids[keep] == skill]
        targets.append(local[keep])
        conditions.append(local[keep - 1])
        progress.append(labels[keep])
        skills.append(skill_ids[keep])
        demo_index.append(np.full(keep.size, index))
        step_index.append(keep)

    if not demos:
        raise FlowPolicyError("MISSING_INPUT", "no demonstrations given")
    return LocalDataset(
        frame_id=frame_id,
        targets=np.concatenate(targets),
        conditions=np.concatenate(conditions),
        progress=np.concatenate(progress),
        skills=np.concatenate(skills),
        demo_index=np.concatenate(demo_index),
        step_index=np.concatenate(step_index),
        frames=tuple(frames),
    )


@dataclass(frozen=True, eq=False)
class GaussianTrajectoryModel:
    frame_id: str
    means: np.ndarray
    variances: np.ndarray

    @property
    def bins(self) -> int:
        return len(self.means)

    def bin_index(self, progress: np.ndarray) -> np.ndarray:
        return bin_index(progress, self.bins)

    def logvar_targets(self, progress: np.ndarray, mode: str) -> np.ndarray:
        variance = self.variances[self.bin_index(progress)]
        if mode == "grouped":
            variance = np.stack([variance[:, a:b].mean(axis=1) for a, b in POSE_SPACE.groups], axis=1)
        return np.log(variance)


def bin_index(progress: np.ndarray, bins: int) -> np.ndarray:
    """Bin ``b`` covers progress in ``(b/B, (b+1)/B]``; progress 0 falls in bin 0."""
    raw = np.floor(np.asarray(progress, dtype=float) * bins - 1e-9).astype(int)
    return np.clip(raw, 0, bins - 1)


def fit_gaussian_trajectory(ds: LocalDataset, bins: int) -> GaussianTrajectoryModel:
    if bins < 2:
        raise FlowPolicyError("INVALID", "at least 2 bins are required", {"bins": bins})
    if len(ds) == 0:
        raise FlowPolicyError("MISSING_INPUT", "cannot fit a trajectory model to an empty dataset")

    index = bin_index(ds.progress, bins)
    means = np.zeros((bins, POSE_SPACE.state_dim))
    variances = np.full((bins, POSE_SPACE.tangent_dim), VARIANCE_FLOOR)
    filled = np.zeros(bins, dtype=bool)
    for b in range(bins):
        members = ds.targets[index == b]
        if len(members) == 0:
            continue
        mean = POSE_SPACE.weighted_mean(members, np.ones((len(members), POSE_SPACE.tangent_dim)))
        means[b] = mean
        variances[b] = np.maximum(POSE_SPACE.tangent_variance(members, mean), VARIANCE_FLOOR)
        filled[b] = True

    present = np.flatnonzero(filled)
    for b in np.flatnonzero(~filled):
        nearest = present[np.argmin(np.abs(present - b))]
        means[b] = means[nearest]
        variances[b] = variances[nearest]
    return GaussianTrajectoryModel(frame_id=ds.frame_id, means=means, variances=variances)


def training_set(ds: LocalDataset, trajectory: Optional[GaussianTrajectoryModel], logvar_mode: str) -> TrainingSet:
    logvar_targets = None
    if logvar_mode != "none":
        if trajectory is None:
            raise FlowPolicyError("MISSING_INPUT", "logvar supervision needs a Gaussian trajectory model")
        logvar_targets = trajectory.logvar_targets(ds.progress, logvar_mode)
    return TrainingSet(
        targets=ds.targets,
        conditions=ds.conditions,
        progress=ds.progress,
        logvar_targets=logvar_targets,
    )
