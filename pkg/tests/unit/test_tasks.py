"""
Unit tests for builtin tasks, scripted demonstrations and the bimodal toy.
"""
import numpy as np
import pytest

from msg_policy.errors import FlowPolicyError
from msg_policy.manifold import Frame
from msg_policy.tasks import (
    BUILTIN_TASKS,
    EE_START,
    bimodal_toy,
    evaluate,
    generate_demos,
    resolve_task,
    sample_instance,
    scripted_demo,
    skill_targets,
    space_for_task,
)


@pytest.mark.unit
class TestTaskResolution:
    """Lookup of builtin and config-defined tasks."""

    def test_unknown_task_lists_valid_names(self):
        """UNKNOWN_TASK carries every known task name."""
        with pytest.raises(FlowPolicyError) as exc:
            resolve_task("stack-blocks")
        assert exc.value.code == "UNKNOWN_TASK"
        assert exc.value.details["valid"] == sorted(BUILTIN_TASKS)

    def test_custom_tasks_shadow_nothing_but_extend(self):
        """Config tasks are resolvable next to the builtins."""
        custom = {"reach-far": BUILTIN_TASKS["reach"].model_copy(update={"name": "reach-far"})}
        assert resolve_task("reach-far", custom).name == "reach-far"
        assert resolve_task("reach", custom) is BUILTIN_TASKS["reach"]

    def test_state_spaces(self):
        """The toy lives in the plane, kinematic tasks on poses."""
        assert space_for_task(resolve_task("bimodal-2d")).tag == "euclidean-2"
        assert space_for_task(resolve_task("place")).tag == "pose"


@pytest.mark.unit
class TestInstances:
    """Randomized frames per episode."""

    def test_sampling_is_deterministic(self):
        """Equal seeds give equal frames."""
        spec = resolve_task("place")
        a = sample_instance(spec, np.random.default_rng(3))
        b = sample_instance(spec, np.random.default_rng(3))
        assert sorted(a.frames) == ["cube", EE_START, "target"]
        for name in a.frames:
            assert np.array_equal(a.frames[name], b.frames[name])

    def test_start_frame_is_the_start_pose(self, rng):
        """`ee_start` is the initial end-effector pose."""
        instance = sample_instance(resolve_task("reach"), rng)
        assert np.array_equal(instance.frame(EE_START).array, instance.start)

    def test_missing_frame(self, rng):
        """Unknown frames raise MISSING_FRAME listing the available ones."""
        instance = sample_instance(resolve_task("reach"), rng)
        with pytest.raises(FlowPolicyError) as exc:
            instance.frame("cube")
        assert exc.value.code == "MISSING_FRAME"
        assert exc.value.details["available"] == [EE_START, "goal"]

    def test_world_frame_always_resolves(self, rng):
        """The world frame is the identity for every task."""
        instance = sample_instance(resolve_task("reach"), rng)
        assert instance.frame("world").is_identity


@pytest.mark.unit
class TestScriptedDemos:
    """Scripted demonstrations of the kinematic tasks."""

    @pytest.mark.parametrize("task", ["reach", "drawer", "place"])
    def test_demo_ends_on_last_target(self, task, rng):
        """The final pose is the last skill target and every skill but the first opens a split."""
        spec = resolve_task(task)
        instance = sample_instance(spec, rng)
        demo = scripted_demo(spec, instance, rng)
        targets = skill_targets(spec, instance)
        assert np.array_equal(demo.ee_poses[-1], targets[-1])
        assert len(demo.skill_splits) == len(spec.skills) - 1
        assert demo.skill_count == len(spec.skills)

    def test_skill_end_reaches_first_target(self, rng):
        """The step before the split sits on the first skill's target."""
        spec = resolve_task("drawer")
        instance = sample_instance(spec, rng)
        demo = scripted_demo(spec, instance, rng)
        split = demo.skill_splits[0]
        assert np.array_equal(demo.ee_poses[split - 1], skill_targets(spec, instance)[0])

    def test_planar_demos_stay_planar(self, rng):
        """se2 demos keep z fixed and rotate about z only."""
        spec = resolve_task("reach")
        for demo in generate_demos(spec, 3, rng):
            assert np.allclose(demo.ee_poses[:, 2], 0.0, atol=1e-12)
            assert np.allclose(demo.ee_poses[:, 4:6], 0.0, atol=1e-12)

    def test_gripper_follows_skills(self, rng):
        """The reach task closes the gripper in its second skill."""
        spec = resolve_task("reach")
        demo = scripted_demo(spec, sample_instance(spec, rng), rng)
        split = demo.skill_splits[0]
        assert np.all(demo.gripper[:split] == 0.0)
        assert np.all(demo.gripper[split:] == 1.0)

    def test_generation_is_deterministic(self):
        """Same seed, same demonstrations."""
        spec = resolve_task("place")
        a = generate_demos(spec, 2, np.random.default_rng(9))
        b = generate_demos(spec, 2, np.random.default_rng(9))
        for x, y in zip(a, b):
            assert np.array_equal(x.ee_poses, y.ee_poses)

    def test_generate_rejects_zero_demos(self, rng):
        """At least one demonstration is required."""
        with pytest.raises(FlowPolicyError) as exc:
            generate_demos(resolve_task("reach"), 0, rng)
        assert exc.value.code == "INVALID"

    def test_toy_has_no_script(self, rng):
        """The toy task neither scripts demos nor evaluates rollouts."""
        spec = resolve_task("bimodal-2d")
        with pytest.raises(FlowPolicyError):
            generate_demos(spec, 1, rng)
        with pytest.raises(FlowPolicyError):
            evaluate(spec, lambda instance, episode: None, None, 1, 0)


@pytest.mark.unit
class TestBimodalToy:
    """Geometry of the two-frame toy."""

    def test_common_mode_and_conditioning(self):
        """Only (1.5, 0) is shared; the conditioning is the centroid of the three distinct modes."""
        toy = bimodal_toy(resolve_task("bimodal-2d"))
        assert np.allclose(toy.common_mode, [1.5, 0.0], atol=1e-9)
        assert np.allclose(toy.conditioning, [0.5, -1.0], atol=1e-9)
        assert np.allclose(toy.world_modes(1), [[1.5, 0.0], [1.5, -3.0]], atol=1e-9)

    def test_modes_are_well_separated(self):
        """Local modes lie at least six mode stds apart."""
        toy = bimodal_toy(resolve_task("bimodal-2d"))
        separation = np.linalg.norm(toy.local_modes[0] - toy.local_modes[1])
        assert separation / toy.mode_std >= 6.0

    def test_common_mode_rate(self):
        """Points within three mode deviations count as hits."""
        toy = bimodal_toy(resolve_task("bimodal-2d"))
        samples = np.array([[1.5, 0.0], [1.9, 0.0], [-1.5, 0.0], [1.5, -3.0]])
        assert toy.common_mode_rate(samples) == pytest.approx(0.5)

    def test_non_toy_rejected(self):
        """Only two-frame planar tasks build a toy."""
        with pytest.raises(FlowPolicyError):
            bimodal_toy(resolve_task("reach"))

    def test_frames_are_planar(self):
        """Toy frames are Frame objects named after the task frames."""
        toy = bimodal_toy(resolve_task("bimodal-2d"))
        assert all(isinstance(f, Frame) for f in toy.frames)
        assert [f.id for f in toy.frames] == ["frame_a", "frame_b"]
