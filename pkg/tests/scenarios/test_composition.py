"""
Scenario tests: composition strategies checked against closed-form references.

Streams here are exact Gaussian-mixture flow fields, so every expectation
follows from the composition rule alone and not from training quality.
"""
import numpy as np
import pytest

from msg_policy.compose import (
    MatchedPriors,
    Stream,
    compose,
    ensemble_compose,
    flow_compose,
    init_population,
    particle_rollout_step,
)
from msg_policy.config import CompositionConfig, WeightingStrategy
from msg_policy.flowmatch import FlowModel, integrate, pose_centric_prior, sample_prior
from msg_policy.gaussref import DiagGaussian, GaussianMixtureField, product
from msg_policy.manifold import POSE_SPACE, EuclideanSpace, Frame, Pose, quat_from_axis_angle, quat_from_yaw
from msg_policy.nn import NetworkSpec, init_network
from msg_policy.tasks import bimodal_toy, resolve_task
from tests.fields import AttractorField

PLANE = EuclideanSpace(2)
FRAME_A = Frame(Pose(np.zeros(3), quat_from_yaw(0.0)), "a")
FRAME_B = Frame(Pose(np.array([1.0, -1.0, 0.0]), quat_from_yaw(0.7)), "b")


def config(strategy, variant="constant", **extra):
    return CompositionConfig(strategy=strategy, weighting=WeightingStrategy(variant=variant), **extra)


def gaussian_streams(world_means, stds, prior_sigma=1.0):
    prior = pose_centric_prior(prior_sigma, prior_sigma)
    streams = []
    for frame, mean, std in zip((FRAME_A, FRAME_B), world_means, stds):
        local = PLANE.to_local(np.asarray(mean, dtype=float), frame)
        streams.append(Stream(frame, GaussianMixtureField(local[None], std**2, prior), frame.id))
    return streams


def random_flow_model(space, seed):
    spec = NetworkSpec(
        state_dim=space.state_dim,
        condition_dim=space.state_dim,
        time_features=4,
        velocity_dim=space.tangent_dim,
        logvar_dim=space.tangent_dim,
        hidden=(8, 8),
    )
    network = init_network(spec, np.random.default_rng(seed), output_scale=0.5)
    return FlowModel(network=network, prior=pose_centric_prior(0.3, 0.3), space=space)


@pytest.mark.scenario
class TestProductOfGaussians:
    """Composite samples against the product of the stream Gaussians."""

    def test_ensemble_matches_product_mean(self, rng):
        """Inverse-variance ensemble weights centre the samples on the product mean."""
        means, stds = [(1.0, 0.5), (-0.5, 1.0)], [0.2, 0.4]
        streams = gaussian_streams(means, stds)
        target = product([DiagGaussian(m, np.full(2, s**2)) for m, s in zip(means, stds)])
        result = ensemble_compose(streams, np.zeros(2), config("ensemble", "logvar-full"), rng, n=2000)
        composite_std = float(np.sqrt(target.variance[0]))
        assert np.all(np.abs(result.states.mean(axis=0) - target.mean) <= 0.15 * composite_std)
        assert np.allclose(result.weights[:, 0, 0], [0.8, 0.2])

    @pytest.mark.parametrize("stds", [(0.3, 0.3), (0.2, 0.4), (0.4, 0.2)])
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_flow_matches_product_mean(self, stds, seed):
        """Flow composition is centred on the product mean, also when the streams disagree on their spread."""
        means = [(1.0, 0.5), (-0.5, 1.0)]
        streams = gaussian_streams(means, stds)
        target = product([DiagGaussian(m, np.full(2, s**2)) for m, s in zip(means, stds)])
        rng = np.random.default_rng(seed)
        result = flow_compose(streams, np.zeros(2), config("flow", "logvar-full"), rng, n=2000)
        composite_std = float(np.sqrt(target.variance[0]))
        assert np.all(np.abs(result.states.mean(axis=0) - target.mean) <= 0.15 * composite_std)

    def test_flow_weights_start_at_inverse_variance(self, rng):
        """At flow time 0 the velocity weights are the normalized stream precisions."""
        streams = gaussian_streams([(1.0, 0.5), (-0.5, 1.0)], [0.2, 0.4])
        comp = CompositionConfig(strategy="flow", flow_steps=1, weighting=WeightingStrategy(variant="logvar-full"))
        result = flow_compose(streams, np.zeros(2), comp, rng, n=4)
        assert np.allclose(result.weights[:, :, 0], [[0.8] * 4, [0.2] * 4])

    def test_one_hot_weights_return_the_first_stream(self, rng):
        """Weights (1, 0) make the ensemble output the first stream's sample exactly."""
        streams = gaussian_streams([(1.0, 0.5), (-0.5, 1.0)], [0.2, 0.4])
        z0 = sample_prior(streams[0].model.prior, PLANE, np.random.default_rng(7), 5, np.zeros(2))
        priors = MatchedPriors(local=[PLANE.to_local(z0, s.frame) for s in streams], global_states=z0)
        weights = np.zeros((2, 5, 2))
        weights[0] = 1.0
        result = ensemble_compose(streams, np.zeros(2), config("ensemble"), rng, n=5, priors=priors, fixed_weights=weights)
        alone = integrate(streams[0].model, priors.local[0], np.zeros(2), 10)
        assert np.array_equal(result.states, PLANE.to_global(alone.state, FRAME_A))


@pytest.mark.scenario
class TestModeAgreement:
    """Two bimodal streams that agree on a single world mode."""

    def test_flow_finds_the_common_mode(self):
        """Flow composition lands on the shared mode far more often than the ensemble, and MCMC at least as often as flow."""
        toy = bimodal_toy(resolve_task("bimodal-2d"))
        streams = toy.streams(toy.oracle_fields(pose_centric_prior(1.0, 1.0)))
        rates = {"ensemble": [], "flow": [], "flow-mcmc": []}
        for seed in range(3):
            for strategy in rates:
                rng = np.random.default_rng([seed, 11])
                samples = compose(streams, toy.conditioning, config(strategy), rng, 500).states
                rates[strategy].append(toy.common_mode_rate(samples))
        ensemble, flow, mcmc = (float(np.mean(rates[k])) for k in ("ensemble", "flow", "flow-mcmc"))
        assert flow - ensemble >= 0.20
        assert ensemble < flow <= mcmc

    def test_common_mode_location(self):
        """The shared world mode sits where both frames put one of their local modes."""
        toy = bimodal_toy(resolve_task("bimodal-2d"))
        assert np.allclose(toy.common_mode, [1.5, 0.0])
        assert np.allclose(toy.conditioning, [0.5, -1.0])


@pytest.mark.scenario
class TestMcmcContraction:
    """The annealed corrector sharpens a unimodal composite."""

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_mcmc_std_not_larger_than_flow(self, seed):
        """Per-dimension spread of flow-MCMC samples does not exceed plain flow composition."""
        streams = gaussian_streams([(0.5, 0.5), (0.5, 0.5)], [0.5, 0.5])
        flow = compose(streams, np.zeros(2), config("flow"), np.random.default_rng(seed), 2000).states
        mcmc = compose(streams, np.zeros(2), config("flow-mcmc"), np.random.default_rng(seed), 2000).states
        assert np.all(mcmc.std(axis=0) <= flow.std(axis=0))


@pytest.mark.scenario
class TestParticleRetention:
    """Virtual poses keep the particle population spread out across rollout steps."""

    def run_population(self, virtual_poses, steps=10):
        prior = pose_centric_prior(0.3, 0.3)
        fields = [GaussianMixtureField(np.zeros((1, 2)), 1e-8, prior, anchored=True) for _ in range(2)]
        streams = [Stream(FRAME_A, fields[0], "a"), Stream(FRAME_B, fields[1], "b")]
        rng = np.random.default_rng(5)
        world = rng.normal(size=(32, 2))
        pools = [PLANE.to_local(world, s.frame) for s in streams]
        comp = config("flow", "particle-full", virtual_poses=virtual_poses)
        population = init_population(streams, np.zeros(2), 16, rng, pools)
        initial = np.sqrt(PLANE.tangent_variance(population.virtual[0]))
        state = np.zeros(2)
        for _ in range(steps):
            step = particle_rollout_step(population, streams, comp, rng, state)
            population, state = step.population, step.state
        return np.sqrt(PLANE.tangent_variance(population.virtual[0])) / initial

    def test_virtual_poses_retain_diversity(self):
        """Each particle conditioned on its own previous pose keeps its spread."""
        assert np.all(self.run_population(virtual_poses=True) >= 0.10)

    def test_true_pose_conditioning_collapses(self):
        """Conditioning every particle on the composed pose collapses the population."""
        assert np.all(self.run_population(virtual_poses=False) < 0.01)


@pytest.mark.scenario
class TestFrameEquivariance:
    """Composition does not depend on how the object frames are placed."""

    def attractor_streams(self, goal, frames):
        prior = pose_centric_prior(0.3, 0.3)
        return [Stream(f, AttractorField(POSE_SPACE, POSE_SPACE.to_local(goal, f), prior), f.id) for f in frames]

    @pytest.mark.parametrize("strategy", ["ensemble", "flow"])
    def test_streams_agree_on_world_goal(self, strategy, rng):
        """Streams that all point at one world pose reach it for any frame placement."""
        goal = np.array([0.4, -0.2, 0.3, *quat_from_yaw(0.5)])
        frames = [
            Frame(Pose(np.array([1.0, 2.0, 0.0]), quat_from_axis_angle((0, 1, 1), 0.8)), "f1"),
            Frame(Pose(np.array([-1.0, 0.5, 0.2]), quat_from_axis_angle((1, 0, 0), -1.1)), "f2"),
        ]
        conditioning = POSE_SPACE.identity()
        result = compose(self.attractor_streams(goal, frames), conditioning, config(strategy), rng, 20)
        assert np.allclose(result.states[:, :3], goal[:3], atol=1e-9)
        assert np.allclose(np.abs(result.states[:, 3:] @ goal[3:]), 1.0, atol=1e-9)

    def test_relabelled_frames_give_same_samples(self):
        """Moving every frame leaves the composed samples unchanged when streams follow the frames."""
        goal = np.array([0.1, 0.1, 0.0, *quat_from_yaw(-0.3)])
        frames_one = [FRAME_A, FRAME_B]
        frames_two = [
            Frame(Pose(np.array([3.0, 0.0, 1.0]), quat_from_axis_angle((0, 0, 1), 2.0)), "a"),
            Frame(Pose(np.array([0.0, -2.0, 0.5]), quat_from_axis_angle((1, 1, 0), 0.4)), "b"),
        ]
        conditioning = np.array([0.2, 0.0, 0.1, *quat_from_yaw(0.1)])
        runs = [
            flow_compose(self.attractor_streams(goal, frames), conditioning, config("flow"), np.random.default_rng(3), 8).states
            for frames in (frames_one, frames_two)
        ]
        assert np.allclose(runs[0], runs[1], atol=1e-9)


@pytest.mark.scenario
class TestRigidMotionEquivariance:
    """Moving every frame and the conditioning pose by one rigid motion moves the output by it."""

    MOTION = Frame(Pose(np.array([0.3, -1.2, 0.8]), quat_from_axis_angle((1, 2, 0.5), 1.3)), "motion")
    FRAMES = (
        Frame(Pose(np.array([0.5, 0.2, 0.0]), quat_from_axis_angle((0, 0, 1), 0.6)), "f1"),
        Frame(Pose(np.array([-0.4, 0.7, 0.3]), quat_from_axis_angle((1, -1, 0), 0.9)), "f2"),
    )
    CONDITIONING = np.array([0.1, -0.2, 0.3, *quat_from_axis_angle((0, 1, 0), 0.4)])

    def streams(self, moved):
        streams = []
        for seed, frame in enumerate(self.FRAMES):
            if moved:
                frame = Frame.from_array(POSE_SPACE.to_global(frame.array, self.MOTION), frame.id)
            streams.append(Stream(frame, random_flow_model(POSE_SPACE, seed=seed), frame.id))
        return streams

    def conditioning(self, moved):
        return POSE_SPACE.to_global(self.CONDITIONING, self.MOTION) if moved else self.CONDITIONING

    def assert_moved(self, base, moved):
        expected = POSE_SPACE.to_global(base, self.MOTION)
        assert np.allclose(moved[..., :3], expected[..., :3], atol=1e-6)
        assert np.allclose(np.abs(np.sum(moved[..., 3:] * expected[..., 3:], axis=-1)), 1.0, atol=1e-6)

    @pytest.mark.parametrize("strategy", ["ensemble", "flow"])
    @pytest.mark.parametrize(
        "variant", ["constant", "threshold", "linear", "exponential", "logvar-full", "logvar-grouped"]
    )
    def test_composition(self, strategy, variant):
        """Schedule and logvar weightings on random network streams."""
        runs = [
            compose(
                self.streams(moved),
                self.conditioning(moved),
                config(strategy, variant),
                np.random.default_rng(0),
                16,
                progress=np.full(16, 0.3),
            ).states
            for moved in (False, True)
        ]
        self.assert_moved(runs[0], runs[1])

    @pytest.mark.parametrize("strategy", ["ensemble", "flow"])
    @pytest.mark.parametrize("variant", ["particle-full", "particle-grouped"])
    def test_particle_step(self, strategy, variant):
        """Particle weightings through one rollout step."""
        comp = config(strategy, variant)
        states = []
        for moved in (False, True):
            streams = self.streams(moved)
            conditioning = self.conditioning(moved)
            rng = np.random.default_rng(0)
            population = init_population(streams, conditioning, 8, rng)
            states.append(particle_rollout_step(population, streams, comp, rng, conditioning).state)
        self.assert_moved(states[0], states[1])


@pytest.mark.scenario
class TestReductions:
    """Degenerate stream sets reduce to single-stream sampling."""

    @pytest.mark.parametrize("strategy", ["ensemble", "flow"])
    def test_single_world_stream_matches_integration(self, strategy):
        """One stream in the world frame reproduces plain integration bit for bit."""
        model = random_flow_model(POSE_SPACE, seed=4)
        streams = [Stream(Frame.world(), model, "world")]
        conditioning = np.array([0.1, 0.2, 0.3, *quat_from_yaw(0.4)])
        z0 = sample_prior(model.prior, POSE_SPACE, np.random.default_rng(9), 6, conditioning)
        priors = MatchedPriors(local=[z0], global_states=z0)
        composed = compose(streams, conditioning, config(strategy), np.random.default_rng(0), 6, priors=priors)
        alone = integrate(model, z0, conditioning, 10)
        assert np.array_equal(composed.states, alone.state)

    def test_identical_streams_match_one_stream(self):
        """Two copies of one stream with equal weights behave like the stream alone."""
        model = random_flow_model(PLANE, seed=2)
        single = [Stream(FRAME_B, model, "b")]
        double = [Stream(FRAME_B, model, "b"), Stream(FRAME_B, model, "b")]
        conditioning = np.array([0.3, -0.1])
        z0 = sample_prior(model.prior, PLANE, np.random.default_rng(1), 10, conditioning)
        priors_one = MatchedPriors(local=[PLANE.to_local(z0, FRAME_B)], global_states=z0)
        priors_two = MatchedPriors(local=[PLANE.to_local(z0, FRAME_B)] * 2, global_states=z0)
        one = flow_compose(single, conditioning, config("flow"), np.random.default_rng(0), 10, priors=priors_one)
        two = flow_compose(double, conditioning, config("flow"), np.random.default_rng(0), 10, priors=priors_two)
        assert np.allclose(one.states, two.states, atol=1e-12)
