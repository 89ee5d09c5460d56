"""Inference-time composition of object-centric streams.

Weights always have shape ``(F, ..., tangent_dim)`` and sum to one over the
stream axis in every tangent dimension.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Protocol, Sequence

import numpy as np

from .config import CompositionConfig, WeightingStrategy
from .errors import FlowPolicyError
from .flowmatch import FlowField, Prior, euler_update, flow_time, integrate, sample_prior
from .manifold import Frame, PoseSpace, StateSpace, inverse
from .manifold import compose as compose_poses
from .streams import Demonstration, annotate_progress

logger = logging.getLogger(__name__)

LOGVAR_CLAMP = (-10.0, 4.0)
ZERO_VARIANCE = 1e-12


@dataclass(frozen=True, eq=False)
class Stream:
    frame: Frame
    model: FlowField
    name: str = ""


def stream_space(streams: Sequence[Stream]) -> StateSpace:
    if not streams:
        raise FlowPolicyError("INVALID", "composition needs at least one stream")
    space = streams[0].model.space
    if any(s.model.space.tag != space.tag for s in streams):
        raise FlowPolicyError("DIMENSION_MISMATCH", "streams live on different state spaces")
    return space


# --- weighting ----------------------------------------------------------------


def schedule_weight(variant: str, progress: np.ndarray) -> np.ndarray:
    """Weight of the first stream under a progress schedule."""
    p = np.clip(np.asarray(progress, dtype=float), 0.0, 1.0)
    if variant == "constant":
        return np.full_like(p, 0.5)
    if variant == "threshold":
        return np.where(p < 0.5, 1.0, 0.0)
    if variant == "linear":
        return p
    if variant == "exponential":
        return (1.0 - p) ** 4
    raise FlowPolicyError("INVALID", f"Unknown schedule: {variant}")


def _expand_groups(values: np.ndarray, space: StateSpace) -> np.ndarray:
    out = np.empty(values.shape[:-1] + (space.tangent_dim,))
    for g, (a, b) in enumerate(space.groups):
        out[..., a:b] = values[..., g : g + 1]
    return out


def _group_mean(values: np.ndarray, space: StateSpace) -> np.ndarray:
    return np.stack([values[..., a:b].mean(axis=-1) for a, b in space.groups], axis=-1)


def _per_dimension_variance(variance: np.ndarray, space: StateSpace, grouped: bool) -> np.ndarray:
    width = variance.shape[-1]
    if width == len(space.groups) and width != space.tangent_dim:
        return _expand_groups(variance, space)
    if width != space.tangent_dim:
        raise FlowPolicyError(
            "DIMENSION_MISMATCH",
            "variance inputs need one value per tangent dimension or per group",
            {"width": width, "tangent_dim": space.tangent_dim},
        )
    if grouped:
        return _expand_groups(_group_mean(variance, space), space)
    return variance


def compute_weights(
    strategy: WeightingStrategy,
    space: StateSpace,
    n_streams: int,
    progress: Optional[np.ndarray] = None,
    logvars: Optional[np.ndarray] = None,
    particle_vars: Optional[np.ndarray] = None,
    extra_precision: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Per-stream weights of shape ``(F, ..., tangent_dim)``.

    ``extra_precision`` is added to ``exp(-logvar)`` before normalizing; see
    :func:`flow_precision`.
    """
    td = space.tangent_dim
    if n_streams < 1:
        raise FlowPolicyError("INVALID", "at least one stream is required")
    if n_streams == 1:
        for source in (progress, logvars, particle_vars):
            if source is not None:
                shape = np.shape(source) if source is progress else np.shape(source)[1:-1]
                return np.ones((1, *shape, td))
        return np.ones((1, td))

    if strategy.is_schedule:
        if progress is None:
            raise FlowPolicyError("MISSING_INPUT", "schedule weighting needs the skill progress")
        if n_streams != 2:
            raise FlowPolicyError(
                "INVALID", "schedule weightings combine exactly two streams", {"streams": n_streams}
            )
        first = schedule_weight(strategy.variant, progress)
        weights = np.stack([first, 1.0 - first])
        return np.broadcast_to(weights[..., None], weights.shape + (td,)).copy()

    if strategy.is_logvar:
        if logvars is None:
            raise FlowPolicyError("MISSING_INPUT", "logvar weighting needs predicted log variances")
        psi = np.clip(np.asarray(logvars, dtype=float), *LOGVAR_CLAMP)
        if psi.shape[0] != n_streams:
            raise FlowPolicyError("DIMENSION_MISMATCH", "one logvar vector per stream is required")
        if strategy.grouped and psi.shape[-1] == td:
            psi = np.log(_per_dimension_variance(np.exp(psi), space, grouped=True))
        elif psi.shape[-1] != td:
            psi = _per_dimension_variance(psi, space, grouped=False)
        if extra_precision is not None:
            precision = np.exp(-psi) + np.asarray(extra_precision, dtype=float).reshape(
                (n_streams,) + (1,) * (psi.ndim - 2) + (td,)
            )
            return precision / precision.sum(axis=0, keepdims=True)
        shifted = psi - psi.min(axis=0, keepdims=True)
        scores = np.exp(-shifted)
        return scores / scores.sum(axis=0, keepdims=True)

    if particle_vars is None:
        raise FlowPolicyError("MISSING_INPUT", "particle weighting needs per-stream particle variances")
    variance = np.asarray(particle_vars, dtype=float)
    if variance.shape[0] != n_streams:
        raise FlowPolicyError("DIMENSION_MISMATCH", "one variance vector per stream is required")
    variance = _per_dimension_variance(variance, space, strategy.grouped)
    precision = 1.0 / np.maximum(variance, ZERO_VARIANCE)
    weights = precision / precision.sum(axis=0, keepdims=True)
    collapsed = np.all(variance < ZERO_VARIANCE, axis=0, keepdims=True)
    return np.where(collapsed, 1.0 / n_streams, weights)


def rotate_logvar(logvar: np.ndarray, frame: Frame, space: StateSpace) -> np.ndarray:
    """Rotate per-dimension log variances by ``frame`` (diagonal kept)."""
    logvar = np.asarray(logvar, dtype=float)
    if frame.is_identity or logvar.shape[-1] != space.tangent_dim:
        return logvar
    variance = np.exp(np.clip(logvar, *LOGVAR_CLAMP))
    return np.log(space.rotate_variance(variance, frame))


def flow_precision(streams: Sequence[Stream], space: StateSpace, t: float) -> np.ndarray:
    """Precision a stream gains about its endpoint from the flow state at time ``t``.

    For straight-line flows from a prior of per-dimension variance ``s0^2`` to a
    target of variance ``s^2``, the endpoint posterior given ``z_t`` has
    precision ``1/s^2 + t^2 / ((1 - t)^2 s0^2)``; this returns the second term.
    Adding it to ``exp(-logvar)`` makes flow composition of Gaussian streams
    follow the flow of their product. It is zero at ``t = 0``.
    """
    remaining = max(1.0 - t, 1e-6)
    prior_var = np.stack([space.noise_scale(s.model.prior.sigma_pos, s.model.prior.sigma_rot) ** 2 for s in streams])
    return t**2 / (remaining**2 * prior_var)


def weighting_frame(streams: Sequence[Stream], conditioning: np.ndarray, config: CompositionConfig) -> Frame:
    """Axes in which per-dimension weights are taken.

    Full logvar and particle weights depend on the axes, so they are taken in
    a frame that moves with the scene: the conditioning pose, or the first
    stream's frame when the conditioning carries no orientation. Schedules and
    grouped variants are rotation invariant and use the world frame.
    """
    weighting = config.weighting
    if len(streams) < 2 or weighting.grouped or weighting.is_schedule:
        return Frame.world()
    space = stream_space(streams)
    conditioning = np.asarray(conditioning, dtype=float)
    if isinstance(space, PoseSpace) and conditioning.ndim == 1:
        return Frame.from_array(conditioning, "weighting")
    return streams[0].frame


def _relative_frames(streams: Sequence[Stream], reference: Frame) -> List[Frame]:
    if reference.is_identity:
        return [s.frame for s in streams]
    back = inverse(reference.pose)
    return [Frame(compose_poses(back, s.frame.pose), s.frame.id) for s in streams]


def _weighted_mean_in(space: StateSpace, states: np.ndarray, weights: np.ndarray, reference: Frame) -> np.ndarray:
    local = space.weighted_mean(space.to_local(states, reference), weights)
    return space.to_global(local, reference)


def _blend_progress(weights: np.ndarray, progress: np.ndarray) -> np.ndarray:
    return np.sum(weights.mean(axis=-1) * progress, axis=0)


# --- priors -------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MatchedPriors:
    """Initial samples per stream in local coordinates; ``global_states`` is set when matched."""

    local: List[np.ndarray]
    global_states: Optional[np.ndarray] = None


def sample_matched_priors(
    streams: Sequence[Stream],
    conditioning: np.ndarray,
    rng: np.random.Generator,
    n: int = 1,
    matched: bool = True,
) -> MatchedPriors:
    space = stream_space(streams)
    conditioning = space.check_states(conditioning)
    if not matched:
        local = [
            sample_prior(s.model.prior, space, rng, n, conditioning=space.to_local(conditioning, s.frame))
            for s in streams
        ]
        return MatchedPriors(local=local)

    prior = streams[0].model.prior
    if prior.kind == "pose-centric":
        draw = sample_prior(prior, space, rng, n, conditioning=conditioning)
    else:
        # world-centred Gaussian; the mixture scale keeps each stream's local draw on its own components
        draw = sample_prior(Prior("standard", prior.sigma_pos, prior.sigma_rot), space, rng, n)
    return MatchedPriors(local=[space.to_local(draw, s.frame) for s in streams], global_states=draw)


# --- composition strategies ---------------------------------------------------


@dataclass(frozen=True, eq=False)
class CompositionResult:
    states: np.ndarray
    progress: np.ndarray
    weights: np.ndarray


def _local_conditions(
    streams: Sequence[Stream], space: StateSpace, conditioning: np.ndarray, conditions: Optional[Sequence[np.ndarray]]
) -> List[np.ndarray]:
    if conditions is not None:
        if len(conditions) != len(streams):
            raise FlowPolicyError("DIMENSION_MISMATCH", "one condition array per stream is required")
        return list(conditions)
    return [space.to_local(conditioning, s.frame) for s in streams]


def _stream_logvars(
    streams: Sequence[Stream], logvars: Sequence[np.ndarray], space: StateSpace, frames: Sequence[Frame]
) -> Optional[np.ndarray]:
    if any(s.model.logvar_dim == 0 for s in streams):
        return None
    return np.stack([rotate_logvar(lv, f, space) for lv, f in zip(logvars, frames)])


def ensemble_compose(
    streams: Sequence[Stream],
    conditioning: np.ndarray,
    config: CompositionConfig,
    rng: np.random.Generator,
    n: int = 1,
    progress: Optional[np.ndarray] = None,
    conditions: Optional[Sequence[np.ndarray]] = None,
    priors: Optional[MatchedPriors] = None,
    fixed_weights: Optional[np.ndarray] = None,
) -> CompositionResult:
    """Integrate every stream on its own and take a weighted geodesic mean of the results.

    Weights are expressed in :func:`weighting_frame` axes, ``fixed_weights`` included.
    """
    space = stream_space(streams)
    conditioning = space.check_states(conditioning)
    local_conditions = _local_conditions(streams, space, conditioning, conditions)
    if priors is None:
        priors = sample_matched_priors(streams, conditioning, rng, n, config.sample_matching)
    reference = weighting_frame(streams, conditioning, config)

    steps = config.effective_flow_steps
    results = [integrate(s.model, z0, c, steps) for s, z0, c in zip(streams, priors.local, local_conditions)]
    world = np.stack([space.to_global(r.state, s.frame) for r, s in zip(results, streams)])
    heads = np.stack([r.progress for r in results])

    if fixed_weights is not None:
        weights = np.broadcast_to(fixed_weights, world.shape[:-1] + (space.tangent_dim,))
    else:
        schedule_progress = heads.mean(axis=0) if progress is None else np.broadcast_to(progress, heads.shape[1:])
        weights = compute_weights(
            config.weighting,
            space,
            len(streams),
            progress=schedule_progress,
            logvars=_stream_logvars(streams, [r.logvar for r in results], space, _relative_frames(streams, reference)),
        )
    states = _weighted_mean_in(space, world, weights, reference)
    return CompositionResult(states=states, progress=_blend_progress(weights, heads), weights=np.asarray(weights))


def flow_compose(
    streams: Sequence[Stream],
    conditioning: np.ndarray,
    config: CompositionConfig,
    rng: np.random.Generator,
    n: int = 1,
    progress: Optional[np.ndarray] = None,
    conditions: Optional[Sequence[np.ndarray]] = None,
    priors: Optional[MatchedPriors] = None,
    fixed_weights: Optional[np.ndarray] = None,
) -> CompositionResult:
    """Combine the velocities of all streams at every Euler step.

    Velocities are mapped into :func:`weighting_frame` axes, weighted there and
    mapped to the world. Logvar weights add :func:`flow_precision` at the
    current flow time. With sample matching a single world state is advanced.
    Without it every stream keeps its own world state, evaluated at that state,
    all states are advanced with the combined velocity and averaged at the end.
    With ``flow-mcmc`` each step is followed by corrector moves
    ``z <- z + eta * dt * v + eps0 * (1 - t) * xi``.
    """
    space = stream_space(streams)
    conditioning = space.check_states(conditioning)
    local_conditions = _local_conditions(streams, space, conditioning, conditions)
    if priors is None:
        priors = sample_matched_priors(streams, conditioning, rng, n, config.sample_matching)
    reference = weighting_frame(streams, conditioning, config)
    relative = _relative_frames(streams, reference)

    matched = priors.global_states is not None
    if matched:
        states = [np.atleast_2d(priors.global_states)]
    else:
        states = [np.atleast_2d(space.to_global(z, s.frame)) for z, s in zip(priors.local, streams)]
    count = len(states[0])
    steps = config.effective_flow_steps
    dt = 1.0 / steps
    schedule_progress = None if progress is None else np.broadcast_to(progress, (count,))

    def combined(current: List[np.ndarray], t: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        nonlocal schedule_progress
        velocities, heads, logvars = [], [], []
        for f, s in enumerate(streams):
            z = current[0] if matched else current[f]
            out = s.model.evaluate(space.to_local(z, s.frame), local_conditions[f], np.full(count, t))
            velocities.append(space.transform_tangent(out.velocity, relative[f]))
            heads.append(out.progress)
            logvars.append(out.logvar)
        heads_arr = np.stack(heads)
        if fixed_weights is not None:
            weights = np.broadcast_to(fixed_weights, (len(streams), count, space.tangent_dim))
        else:
            if schedule_progress is None:
                schedule_progress = heads_arr.mean(axis=0)
            weights = compute_weights(
                config.weighting,
                space,
                len(streams),
                progress=schedule_progress,
                logvars=_stream_logvars(streams, logvars, space, relative),
                extra_precision=flow_precision(streams, space, t) if config.weighting.is_logvar else None,
            )
        velocity = space.transform_tangent(np.sum(weights * np.stack(velocities), axis=0), reference)
        return velocity, weights, heads_arr

    corrector_steps = config.corrector_steps
    weights = heads = None
    for k in range(steps):
        velocity, weights, heads = combined(states, flow_time(k, steps))
        states = [euler_update(space, z, velocity, dt) for z in states]
        if not corrector_steps:
            continue
        t_next = flow_time(k + 1, steps)
        noise_scale = config.mcmc_noise_scale * (1.0 - t_next)
        for _ in range(corrector_steps):
            drift, _, _ = combined(states, t_next)
            states = [
                euler_update(
                    space,
                    z,
                    config.mcmc_step_scale * drift + (noise_scale / dt) * rng.standard_normal(z.shape[:-1] + (space.tangent_dim,)),
                    dt,
                )
                for z in states
            ]

    final = states[0] if matched else _weighted_mean_in(space, np.stack(states), weights, reference)
    return CompositionResult(states=final, progress=_blend_progress(weights, heads), weights=np.asarray(weights))


def compose(
    streams: Sequence[Stream],
    conditioning: np.ndarray,
    config: CompositionConfig,
    rng: np.random.Generator,
    n: int = 1,
    **kwargs: Any,
) -> CompositionResult:
    if config.strategy == "ensemble":
        return ensemble_compose(streams, conditioning, config, rng, n, **kwargs)
    return flow_compose(streams, conditioning, config, rng, n, **kwargs)


# --- particle weighting -------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ParticlePopulation:
    """Per-stream virtual conditioning poses (local coordinates), one row per particle."""

    virtual: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        virtual = tuple(np.atleast_2d(np.asarray(v, dtype=float)) for v in self.virtual)
        if not virtual or len({len(v) for v in virtual}) != 1:
            raise FlowPolicyError("INVALID", "every stream needs the same number of particles")
        object.__setattr__(self, "virtual", virtual)

    @property
    def size(self) -> int:
        return len(self.virtual[0])


def init_population(
    streams: Sequence[Stream],
    conditioning: np.ndarray,
    count: int,
    rng: np.random.Generator,
    pools: Optional[Sequence[np.ndarray]] = None,
) -> ParticlePopulation:
    """Start from training-set initial poses when ``pools`` is given, else from the conditioning pose."""
    if count < 2:
        raise FlowPolicyError("INVALID", "particle weighting needs K >= 2", {"particles": count})
    space = stream_space(streams)
    if pools is not None and len(pools) == len(streams) and all(len(p) for p in pools):
        size = min(len(p) for p in pools)
        picks = rng.choice(size, size=count, replace=size < count)
        return ParticlePopulation(tuple(np.asarray(p)[picks] for p in pools))
    conditioning = space.check_states(conditioning)
    return ParticlePopulation(
        tuple(np.repeat(np.atleast_2d(space.to_local(conditioning, s.frame)), count, axis=0) for s in streams)
    )


@dataclass(frozen=True, eq=False)
class ParticleStep:
    population: ParticlePopulation
    variances: np.ndarray
    weights: np.ndarray
    state: np.ndarray
    progress: float
    particles: np.ndarray


def particle_rollout_step(
    population: ParticlePopulation,
    streams: Sequence[Stream],
    config: CompositionConfig,
    rng: np.random.Generator,
    conditioning: np.ndarray,
) -> ParticleStep:
    space = stream_space(streams)
    count = population.size
    if count < 2:
        raise FlowPolicyError("INVALID", "particle weighting needs K >= 2", {"particles": count})
    if len(population.virtual) != len(streams):
        raise FlowPolicyError("DIMENSION_MISMATCH", "population does not match the stream set")
    conditioning = space.check_states(conditioning)

    if config.virtual_poses:
        conditions = list(population.virtual)
    else:
        conditions = [np.repeat(np.atleast_2d(space.to_local(conditioning, s.frame)), count, axis=0) for s in streams]

    prior = streams[0].model.prior
    if config.sample_matching and prior.kind == "pose-centric":
        noise = rng.standard_normal((count, space.tangent_dim))
        local = [
            space.perturb(c, noise * space.noise_scale(s.model.prior.sigma_pos, s.model.prior.sigma_rot))
            for s, c in zip(streams, conditions)
        ]
        priors = MatchedPriors(local=local, global_states=space.to_global(local[0], streams[0].frame))
    elif config.sample_matching:
        priors = sample_matched_priors(streams, conditioning, rng, count, matched=True)
    else:
        local = [sample_prior(s.model.prior, space, rng, count, conditioning=c) for s, c in zip(streams, conditions)]
        priors = MatchedPriors(local=local)

    steps = config.effective_flow_steps
    finals = [integrate(s.model, z0, c, steps) for s, z0, c in zip(streams, priors.local, conditions)]
    world = np.stack([space.to_global(r.state, s.frame) for r, s in zip(finals, streams)])
    reference = weighting_frame(streams, conditioning, config)
    variances = np.stack([space.tangent_variance(space.to_local(w, reference)) for w in world])
    weights = compute_weights(config.weighting, space, len(streams), particle_vars=variances)
    per_particle = np.broadcast_to(weights[:, None, :], world.shape[:-1] + (space.tangent_dim,))

    if config.strategy == "ensemble":
        composed = _weighted_mean_in(space, world, per_particle, reference)
    else:
        composed = flow_compose(
            streams, conditioning, config, rng, count, conditions=conditions, priors=priors, fixed_weights=per_particle
        ).states

    state = space.weighted_mean(composed, np.ones((count, space.tangent_dim)))
    heads = np.stack([r.progress for r in finals]).mean(axis=1)
    progress = float(np.sum(weights.mean(axis=-1) * heads))
    next_population = ParticlePopulation(tuple(r.state for r in finals))
    return ParticleStep(
        population=next_population,
        variances=variances,
        weights=weights,
        state=state,
        progress=progress,
        particles=composed,
    )


# --- policies and rollout -----------------------------------------------------


@dataclass(frozen=True, eq=False)
class PolicyStep:
    state: np.ndarray
    progress: float
    weights: Optional[np.ndarray] = None


class Policy(Protocol):
    @property
    def skill_count(self) -> int: ...

    def reset(self) -> None: ...

    def act(self, skill: int, state: np.ndarray, progress: float, rng: np.random.Generator) -> PolicyStep: ...


class StreamPolicy:
    """Multi-stream composition per skill; particle populations are kept per skill."""

    def __init__(
        self,
        skills: Sequence[Sequence[Stream]],
        config: CompositionConfig,
        pools: Optional[Sequence[Optional[Sequence[np.ndarray]]]] = None,
    ) -> None:
        if not skills:
            raise FlowPolicyError("INVALID", "a policy needs at least one skill")
        self._skills = [list(streams) for streams in skills]
        self._config = config
        self._pools = list(pools) if pools is not None else [None] * len(self._skills)
        self._populations: Dict[int, ParticlePopulation] = {}

    @property
    def skill_count(self) -> int:
        return len(self._skills)

    def reset(self) -> None:
        self._populations.clear()

    def act(self, skill: int, state: np.ndarray, progress: float, rng: np.random.Generator) -> PolicyStep:
        streams = self._skills[skill]
        config = self._config
        if config.weighting.is_particle and len(streams) > 1:
            population = self._populations.get(skill)
            if population is None:
                population = init_population(streams, state, config.weighting.particles, rng, self._pools[skill])
            step = particle_rollout_step(population, streams, config, rng, state)
            self._populations[skill] = step.population
            return PolicyStep(step.state, step.progress, step.weights)

        result = compose(streams, state, config, rng, 1, progress=np.array([progress]))
        return PolicyStep(result.states[0], float(result.progress[0]), result.weights[:, 0])


class ReplayPolicy:
    """Replays a demonstration, reporting its progress labels.

    A skill switch jumps the cursor to the first step of the new skill.
    """

    def __init__(self, demo: Demonstration) -> None:
        self._demo = demo
        self._labels = annotate_progress(demo)
        self._bounds = demo.skill_bounds()
        self._cursor = 1
        self._skill = 0

    @property
    def skill_count(self) -> int:
        return self._demo.skill_count

    def reset(self) -> None:
        self._cursor = 1
        self._skill = 0

    def act(self, skill: int, state: np.ndarray, progress: float, rng: np.random.Generator) -> PolicyStep:
        if skill != self._skill:
            self._skill = skill
            self._cursor = max(self._cursor, self._bounds[skill][0])
        index = min(self._cursor, self._demo.steps - 1)
        self._cursor += 1
        return PolicyStep(self._demo.ee_poses[index].copy(), float(self._labels[index]))


@dataclass(frozen=True, eq=False)
class RolloutResult:
    states: np.ndarray
    progress: np.ndarray
    skills: np.ndarray
    weights: List[Optional[np.ndarray]] = field(default_factory=list)
    switch_steps: tuple[int, ...] = ()
    completed: bool = False

    @property
    def steps(self) -> int:
        return len(self.progress)


def rollout(
    policy: Policy,
    start: np.ndarray,
    config: CompositionConfig,
    rng: np.random.Generator,
    max_steps: int,
) -> RolloutResult:
    """Receding-horizon loop; the end-effector teleports to each composed state."""
    policy.reset()
    state = np.asarray(start, dtype=float)
    states = [state]
    progress_log: List[float] = []
    skill_log: List[int] = []
    weight_log: List[Optional[np.ndarray]] = []
    switches: List[int] = []
    skill = 0
    progress = 0.0
    completed = False

    for _ in range(max_steps):
        step = policy.act(skill, state, progress, rng)
        state = np.asarray(step.state, dtype=float)
        progress = float(step.progress)
        states.append(state)
        progress_log.append(progress)
        skill_log.append(skill)
        weight_log.append(step.weights)
        if progress > config.progress_threshold:
            if skill == policy.skill_count - 1:
                completed = True
                break
            skill += 1
            switches.append(len(states) - 1)
            progress = 0.0

    if not completed:
        logger.debug("rollout hit the step cap of %d in skill %d", max_steps, skill)
    return RolloutResult(
        states=np.stack(states),
        progress=np.asarray(progress_log),
        skills=np.asarray(skill_log, dtype=int),
        weights=weight_log,
        switch_steps=tuple(switches),
        completed=completed,
    )


def trajectory_records(result: RolloutResult, episode: int) -> List[Dict[str, Any]]:
    records = []
    for step in range(result.steps):
        weights = result.weights[step] if step < len(result.weights) else None
        records.append(
            {
                "episode": episode,
                "step": step + 1,
                "skill": int(result.skills[step]),
                "pose": result.states[step + 1].tolist(),
                "progress": float(result.progress[step]),
                "weights": None if weights is None else np.asarray(weights).tolist(),
            }
        )
    return records
