"""
Unit tests for pose geometry and state spaces.
"""
import numpy as np
import pytest

from msg_policy.errors import FlowPolicyError
from msg_policy.manifold import (
    POSE_SPACE,
    EuclideanSpace,
    Frame,
    Pose,
    Tangent,
    compose,
    geodesic_interpolate,
    inverse,
    log_map,
    quat_conjugate,
    quat_exp,
    quat_from_axis_angle,
    quat_from_matrix,
    quat_from_yaw,
    quat_log,
    quat_multiply,
    quat_normalize,
    quat_to_matrix,
    rotation_error,
    space_from_tag,
    to_global,
    to_local,
    weighted_geodesic_mean,
)


def random_poses(rng, n):
    position = rng.normal(size=(n, 3))
    orientation = quat_normalize(rng.normal(size=(n, 4)))
    return np.concatenate([position, orientation], axis=1)


def same_orientation(a, b, tol=1e-9):
    return np.all(np.abs(np.abs(np.sum(a[..., 3:] * b[..., 3:], axis=-1)) - 1.0) < tol)


@pytest.mark.unit
class TestQuaternions:
    """Quaternion kernels."""

    def test_matrix_round_trip(self, rng):
        """Converting to a rotation matrix and back recovers the quaternion."""
        q = quat_normalize(rng.normal(size=(1000, 4)))
        back = quat_from_matrix(quat_to_matrix(q))
        assert np.allclose(back, q, atol=1e-9)

    def test_rotation_matrices_are_orthonormal(self, rng):
        """Every converted matrix is a proper rotation."""
        r = quat_to_matrix(quat_normalize(rng.normal(size=(200, 4))))
        eye = np.einsum("nij,nkj->nik", r, r)
        assert np.allclose(eye, np.eye(3), atol=1e-12)
        assert np.allclose(np.linalg.det(r), 1.0)

    def test_log_inverts_exp(self, rng):
        """log(exp(w)) == w for rotation vectors shorter than pi."""
        w = rng.normal(size=(500, 3))
        w *= (rng.uniform(0.0, 3.0, size=(500, 1)) / np.linalg.norm(w, axis=1, keepdims=True))
        assert np.allclose(quat_log(quat_exp(w)), w, atol=1e-9)

    def test_log_map_is_world_aligned(self, rng):
        """log_map returns the body-frame rotation vector rotated into world axes."""
        q_from = quat_normalize(rng.normal(size=(200, 4)))
        q_to = quat_normalize(quat_multiply(quat_exp(rng.normal(scale=0.5, size=(200, 3))), q_from))
        body = quat_log(quat_multiply(quat_conjugate(q_from), q_to))
        expected = np.einsum("nij,nj->ni", quat_to_matrix(q_from), body)
        assert np.allclose(log_map(q_from, q_to), expected, atol=1e-9)

    def test_log_of_half_turn_is_undefined(self):
        """A rotation by exactly pi has no unique geodesic."""
        with pytest.raises(FlowPolicyError) as excinfo:
            quat_log(np.array([0.0, 1.0, 0.0, 0.0]))
        assert excinfo.value.code == "GEODESIC_UNDEFINED"
        assert "geodesic undefined" in str(excinfo.value)

    def test_normalize_resolves_double_cover(self):
        """Quaternions are canonicalized to a non-negative scalar part."""
        q = quat_normalize(np.array([-2.0, 0.0, 0.0, 0.0]))
        assert np.allclose(q, [1.0, 0.0, 0.0, 0.0])

    def test_zero_quaternion_is_rejected(self):
        """Normalizing the zero quaternion fails."""
        with pytest.raises(FlowPolicyError):
            quat_normalize(np.zeros(4))

    def test_yaw_matches_axis_angle(self):
        """quat_from_yaw agrees with a rotation about +z."""
        assert np.allclose(quat_from_yaw(0.7), quat_from_axis_angle((0, 0, 1), 0.7))


@pytest.mark.unit
class TestFrames:
    """Frame transforms and tangent mapping."""

    def test_local_global_round_trip(self, rng):
        """to_global(to_local(x, f), f) == x for 10^4 random poses."""
        poses = random_poses(rng, 10_000)
        frames = random_poses(rng, 10_000)
        for pose, frame_values in zip(poses[:50], frames[:50]):
            frame = Frame.from_array(frame_values, "f")
            back = POSE_SPACE.to_global(POSE_SPACE.to_local(pose, frame), frame)
            assert np.allclose(back[:3], pose[:3], atol=1e-9)
            assert same_orientation(back, pose)
        frame = Frame.from_array(frames[0], "f")
        back = POSE_SPACE.to_global(POSE_SPACE.to_local(poses, frame), frame)
        assert np.allclose(back[:, :3], poses[:, :3], atol=1e-9)
        assert same_orientation(back, poses)

    def test_quarter_turn_frame(self):
        """A point on the x-axis seen from a frame rotated 90 degrees about z lies on -y."""
        frame = Frame(Pose(np.zeros(3), quat_from_yaw(np.pi / 2)), "f")
        local = to_local(Pose(np.array([1.0, 0.0, 0.0]), np.array([1.0, 0.0, 0.0, 0.0])), frame)
        assert np.allclose(local.position, [0.0, -1.0, 0.0], atol=1e-12)
        assert same_orientation(local.as_array(), inverse(frame.pose).as_array())
        back = to_global(Pose(np.array([0.0, -1.0, 0.0]), local.orientation), frame)
        assert np.allclose(back.position, [1.0, 0.0, 0.0], atol=1e-12)

    def test_pose_composed_with_inverse_is_identity(self, rng):
        """p * p^-1 is the identity pose."""
        p = Pose.from_array(random_poses(rng, 1)[0])
        identity = compose(p, inverse(p))
        assert np.allclose(identity.position, 0.0, atol=1e-12)
        assert same_orientation(identity.as_array(), Pose.identity().as_array())

    def test_transform_tangent_preserves_norms(self, rng):
        """Rotating a tangent keeps the linear and angular norms."""
        frame = Frame.from_array(random_poses(rng, 1)[0], "f")
        v = rng.normal(size=(10_000, 6))
        out = POSE_SPACE.transform_tangent(v, frame)
        assert np.allclose(np.linalg.norm(out[:, :3], axis=1), np.linalg.norm(v[:, :3], axis=1), atol=1e-9)
        assert np.allclose(np.linalg.norm(out[:, 3:], axis=1), np.linalg.norm(v[:, 3:], axis=1), atol=1e-9)
        back = Frame(inverse(frame.pose), "f")
        assert np.allclose(POSE_SPACE.transform_tangent(out, back), v, atol=1e-12)

    def test_displacement_is_frame_equivariant(self, rng):
        """The world displacement is the local displacement rotated by the frame."""
        frame = Frame.from_array(random_poses(rng, 1)[0], "f")
        a, b = random_poses(rng, 2)
        b[3:] = quat_normalize(quat_multiply(quat_exp(0.4 * rng.normal(size=3)), a[3:]))
        local = POSE_SPACE.log_displacement(POSE_SPACE.to_local(a, frame), POSE_SPACE.to_local(b, frame))
        world = POSE_SPACE.log_displacement(a, b)
        assert np.allclose(POSE_SPACE.transform_tangent(local, frame), world, atol=1e-9)

    def test_identity_frame_short_circuits(self, rng):
        """The world frame returns its input unchanged."""
        poses = random_poses(rng, 5)
        assert POSE_SPACE.to_local(poses, Frame.world()) is poses
        assert Frame.world().is_identity

    def test_pose_requires_seven_entries(self):
        """Malformed pose arrays are rejected with a dimension error."""
        with pytest.raises(FlowPolicyError) as excinfo:
            Pose.from_array([1.0, 2.0, 3.0])
        assert excinfo.value.code == "DIMENSION_MISMATCH"

    def test_tangent_rejects_non_finite(self):
        """NaN tangents are rejected."""
        with pytest.raises(FlowPolicyError) as excinfo:
            Tangent.from_array([0, 0, np.nan, 0, 0, 0])
        assert excinfo.value.code == "NON_FINITE"


@pytest.mark.unit
class TestGeodesics:
    """Interpolation, exp/log updates and weighted means."""

    def test_interpolation_endpoints(self, rng):
        """Slerp-style interpolation hits both endpoints."""
        a, b = random_poses(rng, 2)
        b[3:] = quat_normalize(quat_multiply(quat_exp(np.array([0.3, -0.5, 1.0])), a[3:]))
        start = POSE_SPACE.interpolate(a, b, np.asarray(0.0))
        end = POSE_SPACE.interpolate(a, b, np.asarray(1.0))
        assert np.allclose(start, a, atol=1e-9)
        assert np.allclose(end[:3], b[:3], atol=1e-9)
        assert same_orientation(end, b)

    def test_interpolation_moves_at_constant_speed(self, rng):
        """Half-way along the geodesic is half the total angle from each end."""
        a = Pose.from_array(random_poses(rng, 1)[0])
        b = Pose(a.position + 1.0, quat_multiply(quat_from_axis_angle((1, 1, 0), 1.2), a.orientation))
        mid = geodesic_interpolate(a, b, 0.5)
        assert rotation_error(mid.as_array(), a.as_array()) == pytest.approx(0.6, abs=1e-9)
        assert rotation_error(mid.as_array(), b.as_array()) == pytest.approx(0.6, abs=1e-9)

    def test_interpolation_commutes_with_rigid_motion(self, rng):
        """Moving both endpoints by G moves every interpolated pose by G."""
        for _ in range(50):
            motion = Pose.from_array(random_poses(rng, 1)[0])
            a = Pose.from_array(random_poses(rng, 1)[0])
            w = rng.normal(size=3)
            w *= rng.uniform(0.0, 2.5) / np.linalg.norm(w)
            b = Pose(rng.normal(size=3), quat_multiply(quat_exp(w), a.orientation))
            for t in np.linspace(0.0, 1.0, 11):
                moved = compose(motion, geodesic_interpolate(a, b, t)).as_array()
                direct = geodesic_interpolate(compose(motion, a), compose(motion, b), t).as_array()
                assert np.allclose(moved[:3], direct[:3], atol=1e-9)
                sign = np.sign(np.dot(moved[3:], direct[3:]))
                assert np.allclose(sign * moved[3:], direct[3:], atol=1e-9)

    def test_interpolation_time_out_of_range(self):
        """Times outside [0, 1] are invalid."""
        with pytest.raises(FlowPolicyError):
            geodesic_interpolate(Pose.identity(), Pose.identity(), 1.5)

    def test_step_follows_displacement(self, rng):
        """Stepping by the log displacement lands on the target."""
        a, b = random_poses(rng, 2)
        b[3:] = quat_normalize(quat_multiply(quat_exp(np.array([1.0, 0.2, -0.3])), a[3:]))
        reached = POSE_SPACE.step(a, POSE_SPACE.log_displacement(a, b))
        assert np.allclose(reached[:3], b[:3], atol=1e-12)
        assert same_orientation(reached, b)

    def test_one_hot_weights_select_a_pose(self, rng):
        """A stream with all the weight is returned exactly."""
        poses = random_poses(rng, 3)
        weights = np.zeros((3, 6))
        weights[1] = 1.0
        assert np.array_equal(POSE_SPACE.weighted_mean(poses, weights), poses[1])

    def test_equal_weights_average_positions(self):
        """Two poses with equal weights meet in the middle."""
        a = Pose(np.zeros(3), quat_from_yaw(0.0))
        b = Pose(np.array([2.0, 0.0, 0.0]), quat_from_yaw(1.0))
        mean = weighted_geodesic_mean([a, b], [0.5, 0.5])
        assert np.allclose(mean.position, [1.0, 0.0, 0.0])
        assert np.allclose(mean.orientation, quat_from_yaw(0.5))

    @pytest.mark.parametrize("weights", [[-1.0, 2.0], [0.0, 0.0], [np.inf, 1.0]])
    def test_degenerate_weights(self, weights):
        """Negative, all-zero or non-finite weights are rejected."""
        with pytest.raises(FlowPolicyError) as excinfo:
            weighted_geodesic_mean([Pose.identity(), Pose.identity()], weights)
        assert excinfo.value.code == "DEGENERATE_WEIGHTS"


@pytest.mark.unit
class TestEuclideanSpace:
    """Planar state spaces driven by yaw-only frames."""

    def test_planar_frame_round_trip(self, rng):
        """Planar frames act through their first two axes."""
        space = EuclideanSpace(2)
        frame = Frame(Pose(np.array([1.0, -2.0, 0.0]), quat_from_yaw(0.8)), "f")
        points = rng.normal(size=(100, 2))
        assert np.allclose(space.to_global(space.to_local(points, frame), frame), points, atol=1e-12)

    def test_tilted_frame_is_rejected(self):
        """Frames that rotate out of the plane cannot act on planar states."""
        space = EuclideanSpace(2)
        frame = Frame(Pose(np.zeros(3), quat_from_axis_angle((1, 0, 0), 0.5)), "tilted")
        with pytest.raises(FlowPolicyError):
            space.to_local(np.zeros(2), frame)

    def test_tangent_variance_is_population_variance(self, rng):
        """Variance uses ddof=0."""
        samples = rng.normal(size=(50, 2))
        assert np.allclose(EuclideanSpace(2).tangent_variance(samples), samples.var(axis=0))

    def test_space_tags(self):
        """Tags resolve back to spaces."""
        assert space_from_tag("pose") is POSE_SPACE
        assert space_from_tag("euclidean-2").tangent_dim == 2
        with pytest.raises(FlowPolicyError):
            space_from_tag("sphere")
