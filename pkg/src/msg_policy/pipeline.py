"""Experiment pipeline behind the CLI: demos, stream training, evaluation, ablations and toys.

Every function takes a validated ``RunConfig`` plus an output root and returns
the paths it wrote. Layout under ``<out>/<task>/``::

    seed-<seed>/demos.jsonl
    seed-<seed>/manifest.json
    seed-<seed>/streams/<variant>/skill-<k>-<frame>.ckpt
    seed-<seed>/loss/<variant>/skill-<k>-<frame>.csv
    results.csv, ablation.csv, episodes/*.jsonl, plots/*.svg
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .compose import Stream, StreamPolicy, compose, trajectory_records
from .config import MSG_METHODS, CompositionConfig, RunConfig, TaskSpec, TrainConfig
from .errors import FlowPolicyError
from .flowmatch import (
    FlowField,
    Prior,
    TrainingSet,
    build_model,
    pose_centric_prior,
    prior_from_config,
    save_model,
    train,
    write_loss_csv,
)
from .manifest import StreamEntry
from .manifold import WORLD
from .plots import scatter_panels, success_bar_plot, trajectory_plot, weight_progress_plot
from .records import fmt, read_csv, write_csv, write_jsonl
from .registry import MANIFEST_NAME, StreamRegistry, update_manifest
from .streams import (
    Demonstration,
    fit_gaussian_trajectory,
    read_demos,
    to_local_dataset,
    training_set,
    write_demos,
)
from .tasks import (
    BimodalToy,
    EvaluationResult,
    TaskInstance,
    bimodal_toy,
    evaluate,
    generate_demos,
    resolve_task,
    sample_instance,
    space_for_task,
)

logger = logging.getLogger(__name__)

DEMOS_NAME = "demos.jsonl"
RESULTS_HEADER = ("task", "method", "weighting", "seed", "success_rate", "success_std")
ABLATION_HEADER = ("strategy", "ablation", "weighting", "seeds", "success_rate", "success_std")
TOY_HEADER = ("seed", "prior", "strategy", "common_mode_rate", "mean_x", "mean_y", "std_x", "std_y")

METHOD_STRATEGY = {"msg-ensemble": "ensemble", "msg-flow": "flow", "msg-flow-mcmc": "flow-mcmc"}


@dataclass(frozen=True)
class Variant:
    """How one family of streams is trained: config overrides and which frames it uses."""

    name: str
    train_overrides: Tuple[Tuple[str, object], ...] = ()
    frames: str = "skill"  # skill | world | target
    oriented: bool = False


VARIANTS: Dict[str, Variant] = {
    "default": Variant("default"),
    "prior-standard": Variant("prior-standard", (("prior", "standard"),)),
    "prior-mixture": Variant("prior-mixture", (("prior", "mixture"),)),
    "no-conditioning": Variant("no-conditioning", (("conditioning", False),)),
    "global": Variant("global", frames="world"),
    "oriented": Variant("oriented", frames="target", oriented=True),
}

BASELINE_VARIANTS = {"object-frame": "default", "global": "global", "oriented": "oriented"}

# (strategy, label, stream variant, composition overrides)
ABLATIONS: Tuple[Tuple[str, str, str, Tuple[Tuple[str, object], ...]], ...] = (
    ("flow", "base", "default", ()),
    ("flow", "w/o custom prior", "prior-standard", ()),
    ("flow", "w/o sample matching", "default", (("sample_matching", False),)),
    ("flow", "w/o conditioning", "no-conditioning", ()),
    ("flow", "with MCMC-matched steps", "default", (("mcmc_matched_steps", 4),)),
    ("flow", "with mixture prior", "prior-mixture", ()),
    ("flow-mcmc", "base", "default", ()),
    ("flow-mcmc", "w/o custom prior", "prior-standard", ()),
    ("flow-mcmc", "w/o conditioning", "no-conditioning", ()),
    ("flow-mcmc", "with mixture prior", "prior-mixture", ()),
)


def task_dir(out: Path, task: str) -> Path:
    return out / task


def run_dir(out: Path, task: str, seed: int) -> Path:
    return task_dir(out, task) / f"seed-{seed}"


def _kinematic_task(config: RunConfig) -> TaskSpec:
    spec = resolve_task(config.task, config.tasks)
    if spec.kind != "kinematic":
        raise FlowPolicyError("INVALID", f"Task '{spec.name}' is a toy; use the 'toy' command")
    return spec


def stream_frames(spec: TaskSpec, skill: int, variant: Variant) -> Tuple[str, ...]:
    skill_spec = spec.skills[skill]
    if variant.frames == "world":
        return (WORLD,)
    if variant.frames == "target":
        return (skill_spec.target_frame,)
    frames = list(skill_spec.frames)
    if skill_spec.target_frame not in frames:
        frames.append(skill_spec.target_frame)
    return tuple(frames)


def composition_for(base: CompositionConfig, strategy: str, weighting: str, **overrides: object) -> CompositionConfig:
    data = base.model_dump()
    data.update(strategy=strategy, **overrides)
    data["weighting"] = {**data["weighting"], "variant": weighting}
    if strategy != "flow-mcmc":
        data["mcmc_steps"] = None
    return CompositionConfig.model_validate(data)


# --- gen ------------------------------------------------------------------------


def generate(config: RunConfig, out: Path, seed: int) -> Path:
    spec = _kinematic_task(config)
    demos = generate_demos(spec, config.demos, np.random.default_rng(seed))
    path = run_dir(out, spec.name, seed) / DEMOS_NAME
    write_demos(path, demos)
    logger.info("wrote %d demos for %s (seed %d) to %s", len(demos), spec.name, seed, path)
    return path


def load_demos(out: Path, task: str, seed: int) -> List[Demonstration]:
    return read_demos(run_dir(out, task, seed) / DEMOS_NAME)


# --- train ----------------------------------------------------------------------


def _train_config(base: TrainConfig, variant: Variant, seed: int, skill: int, frame_index: int) -> TrainConfig:
    update = dict(variant.train_overrides)
    update["seed"] = base.seed + 1000 * seed + 10 * skill + frame_index
    return TrainConfig.model_validate({**base.model_dump(), **update})


def _final_loss(path: Path) -> str:
    rows = read_csv(path) if path.exists() else []
    return rows[-1]["loss"] if rows else "n/a"


def train_streams(
    config: RunConfig,
    out: Path,
    seed: int,
    variants: Sequence[str] = ("default",),
    overwrite: bool = False,
) -> List[Path]:
    """Train one stream per (variant, skill, frame); existing checkpoints need ``overwrite``."""
    spec = _kinematic_task(config)
    space = space_for_task(spec)
    root = run_dir(out, spec.name, seed)
    demos = load_demos(out, spec.name, seed)
    written: List[Path] = []
    entries: List[StreamEntry] = []

    for variant_name in variants:
        variant = VARIANTS.get(variant_name)
        if variant is None:
            raise FlowPolicyError("INVALID", f"Unknown stream variant: {variant_name}", {"valid": sorted(VARIANTS)})
        for skill in range(len(spec.skills)):
            for frame_index, frame in enumerate(stream_frames(spec, skill, variant)):
                stem = f"skill-{skill}-{frame}"
                checkpoint = Path("streams") / variant.name / f"{stem}.ckpt"
                loss_csv = Path("loss") / variant.name / f"{stem}.csv"
                entries.append(StreamEntry(variant.name, skill, frame, checkpoint.as_posix(), loss_csv.as_posix()))
                if (root / checkpoint).exists() and not overwrite:
                    logger.info(
                        "keeping existing stream %s/%s, final loss %s (use --overwrite to retrain)",
                        variant.name, stem, _final_loss(root / loss_csv),
                    )
                    continue

                train_cfg = _train_config(config.train, variant, seed, skill, frame_index)
                dataset = to_local_dataset(demos, frame, oriented=variant.oriented, skill=skill)
                trajectory = None if train_cfg.logvar == "none" else fit_gaussian_trajectory(dataset, train_cfg.gaussian_bins)
                prior = prior_from_config(train_cfg, space, dataset.frames)
                model = build_model(space, prior, train_cfg)
                model, history = train(model, training_set(dataset, trajectory, train_cfg.logvar), train_cfg)
                save_model(model, root / checkpoint)
                write_loss_csv(root / loss_csv, history)
                written.extend([root / checkpoint, root / loss_csv])
                logger.info("trained stream %s/%s on %d records", variant.name, stem, len(dataset))

    manifest = update_manifest(root, spec.name, seed, space.tag, entries)
    logger.info("manifest for %s seed %d lists %d streams", spec.name, seed, len(manifest.entries))
    return written + [root / MANIFEST_NAME]


# --- eval -----------------------------------------------------------------------


@dataclass(frozen=True)
class MethodSpec:
    method: str
    weighting: str
    variant: str
    composition: CompositionConfig

    @property
    def label(self) -> str:
        return self.method if self.weighting == "-" else f"{self.method}/{self.weighting}"


def method_specs(config: RunConfig, methods: Optional[Sequence[str]] = None, weightings: Optional[Sequence[str]] = None) -> List[MethodSpec]:
    methods = tuple(methods or config.evaluation.methods)
    weightings = tuple(weightings or config.evaluation.weightings)
    specs: List[MethodSpec] = []
    for method in methods:
        if method in BASELINE_VARIANTS:
            specs.append(MethodSpec(method, "-", BASELINE_VARIANTS[method], composition_for(config.composition, "flow", "constant")))
        elif method in MSG_METHODS:
            for weighting in weightings:
                comp = composition_for(config.composition, METHOD_STRATEGY[method], weighting)
                specs.append(MethodSpec(method, weighting, "default", comp))
        else:
            raise FlowPolicyError("INVALID", f"Unknown method: {method}")
    return specs


class PolicyBuilder:
    """Binds registry streams to an episode's frames; pools hold training initial poses per stream."""

    def __init__(self, spec: TaskSpec, registry: StreamRegistry, demos: Sequence[Demonstration]) -> None:
        self._spec = spec
        self._registry = registry
        self._demos = list(demos)
        self._pools: Dict[Tuple[str, int, bool], np.ndarray] = {}

    def _frames(self, method: str, skill: int, variant: str) -> Tuple[str, ...]:
        if method in ("object-frame", "oriented"):
            return (self._spec.skills[skill].target_frame,)
        return stream_frames(self._spec, skill, VARIANTS[variant])

    def _pool(self, frame: str, skill: int, oriented: bool) -> np.ndarray:
        key = (frame, skill, oriented)
        if key not in self._pools:
            self._pools[key] = to_local_dataset(self._demos, frame, oriented=oriented, skill=skill).initial_conditions()
        return self._pools[key]

    def factory(self, method: MethodSpec):
        trained = self._registry.variants()
        if method.variant not in trained:
            hint = "; run 'train --baselines'" if method.method in BASELINE_VARIANTS else ""
            raise FlowPolicyError(
                "MISSING_STREAM",
                f"No '{method.variant}' streams for {method.label}{hint}",
                {"variant": method.variant, "trained": trained},
            )
        oriented = VARIANTS[method.variant].oriented
        frames_per_skill = [self._frames(method.method, k, method.variant) for k in range(len(self._spec.skills))]
        models = [self._registry.models(method.variant, k, frames) for k, frames in enumerate(frames_per_skill)]
        pools = [[self._pool(f, k, oriented) for f in frames] for k, frames in enumerate(frames_per_skill)]

        def build(instance: TaskInstance, episode: int) -> StreamPolicy:
            skills = [
                [Stream(instance.frame(f, oriented), model, f) for f, model in zip(frames, skill_models)]
                for frames, skill_models in zip(frames_per_skill, models)
            ]
            return StreamPolicy(skills, method.composition, pools)

        return build


def _episode_records(outcome: EvaluationResult) -> List[dict]:
    records = []
    for episode, trace in zip(outcome.episodes, outcome.rollouts):
        records.append(
            {
                "episode": episode.episode,
                "success": episode.success,
                "position_error": round(episode.position_error, 9),
                "rotation_error": round(episode.rotation_error, 9),
                "steps": episode.steps,
                "completed": episode.completed,
                "via_reached": episode.via_reached,
                "trajectory": trajectory_records(trace, episode.episode),
            }
        )
    return records


def _yaw(quaternion: np.ndarray) -> float:
    return float(2.0 * np.arctan2(quaternion[3], quaternion[0]))


def evaluate_seed(
    config: RunConfig,
    out: Path,
    seed: int,
    specs: Sequence[MethodSpec],
) -> Tuple[Dict[MethodSpec, EvaluationResult], List[Path]]:
    spec = _kinematic_task(config)
    registry = StreamRegistry(run_dir(out, spec.name, seed))
    registry.load()
    builder = PolicyBuilder(spec, registry, load_demos(out, spec.name, seed))
    episodes = config.evaluation.episodes
    outcomes: Dict[MethodSpec, EvaluationResult] = {}
    written: List[Path] = []

    for method in specs:
        factory = builder.factory(method)
        outcome = evaluate(spec, factory, method.composition, episodes, seed, config.evaluation.max_steps)
        outcomes[method] = outcome
        name = method.label.replace("/", "-")
        path = task_dir(out, spec.name) / "episodes" / f"{name}-seed-{seed}.jsonl"
        write_jsonl(path, _episode_records(outcome))
        written.append(path)
    return outcomes, written


def _plot_seed(spec: TaskSpec, out: Path, seed: int, outcomes: Dict[MethodSpec, EvaluationResult]) -> List[Path]:
    plots = task_dir(out, spec.name) / "plots"
    instance = sample_instance(spec, np.random.default_rng([seed, 0]))
    frames = [(float(p[0]), float(p[1]), _yaw(p[3:]), name) for name, p in sorted(instance.frames.items())]
    trajectories = {m.label: [o.rollouts[0].states] for m, o in outcomes.items() if o.rollouts}
    written = [trajectory_plot(plots / f"trajectories-seed-{seed}.svg", f"{spec.name}: episode 0, seed {seed}", trajectories, frames)]

    series = {}
    for method, outcome in outcomes.items():
        if method.method not in MSG_METHODS:
            continue
        progress, weight = [], []
        for trace in outcome.rollouts:
            for p, w in zip(trace.progress, trace.weights):
                if w is not None and np.ndim(w) == 2 and len(w) >= 2:
                    progress.append(p)
                    weight.append(float(np.mean(w[0])))
        if progress:
            series[method.label] = (np.asarray(progress), np.asarray(weight))
    written.append(weight_progress_plot(plots / f"weights-seed-{seed}.svg", f"{spec.name}: stream weights, seed {seed}", series))
    return written


def evaluate_streams(
    config: RunConfig,
    out: Path,
    seeds: Sequence[int],
    methods: Optional[Sequence[str]] = None,
    weightings: Optional[Sequence[str]] = None,
) -> List[Path]:
    """Success-rate table with one row per (method, weighting, seed) plus a summary row each."""
    spec = _kinematic_task(config)
    specs = method_specs(config, methods, weightings)
    per_seed: Dict[MethodSpec, List[float]] = {m: [] for m in specs}
    rows = []
    written: List[Path] = []

    for seed in seeds:
        outcomes, paths = evaluate_seed(config, out, seed, specs)
        written.extend(paths)
        for method in specs:
            outcome = outcomes[method]
            successes = [float(e.success) for e in outcome.episodes]
            per_seed[method].append(outcome.success_rate)
            rows.append((spec.name, method.method, method.weighting, seed, fmt(outcome.success_rate), fmt(float(np.std(successes)))))
        written.extend(_plot_seed(spec, out, seed, outcomes))

    summary = []
    for method in specs:
        rates = np.asarray(per_seed[method])
        rows.append((spec.name, method.method, method.weighting, "all", fmt(float(rates.mean())), fmt(float(rates.std()))))
        summary.append((method.label, float(rates.mean())))

    results = task_dir(out, spec.name) / "results.csv"
    write_csv(results, RESULTS_HEADER, rows)
    written.append(success_bar_plot(task_dir(out, spec.name) / "plots" / "success.svg", f"{spec.name}: mean success", summary))
    logger.info("wrote %s", results)
    return [results, *written]


# --- ablate ---------------------------------------------------------------------


def ablate(config: RunConfig, out: Path, seeds: Sequence[int], weightings: Optional[Sequence[str]] = None) -> Path:
    """Ablation grid (flags x weightings); prior and conditioning rows train their stream variants on demand."""
    spec = _kinematic_task(config)
    weightings = tuple(weightings or config.evaluation.weightings)
    needed = sorted({variant for _, _, variant, _ in ABLATIONS})
    rows = []
    rates: Dict[Tuple[str, str, str], List[float]] = {}

    for seed in seeds:
        registry = StreamRegistry(run_dir(out, spec.name, seed))
        missing = [v for v in needed if not all(
            registry.has(v, k, f) for k in range(len(spec.skills)) for f in stream_frames(spec, k, VARIANTS[v])
        )] if registry.manifest_path.exists() else needed
        if missing:
            logger.info("training ablation variants %s for seed %d", ", ".join(missing), seed)
            train_streams(config, out, seed, missing)
            registry.load(force=True)

        specs = []
        keys = []
        for strategy, label, variant, overrides in ABLATIONS:
            for weighting in weightings:
                comp = composition_for(config.composition, strategy, weighting, **dict(overrides))
                method = next(m for m, s in METHOD_STRATEGY.items() if s == strategy)
                specs.append(MethodSpec(method, weighting, variant, comp))
                keys.append((strategy, label, weighting))
        builder = PolicyBuilder(spec, registry, load_demos(out, spec.name, seed))
        for key, method in zip(keys, specs):
            outcome = evaluate(spec, builder.factory(method), method.composition, config.evaluation.episodes, seed, config.evaluation.max_steps)
            rates.setdefault(key, []).append(outcome.success_rate)

    for (strategy, label, weighting), values in rates.items():
        values_arr = np.asarray(values)
        rows.append((strategy, label, weighting, len(values), fmt(float(values_arr.mean())), fmt(float(values_arr.std()))))

    path = task_dir(out, spec.name) / "ablation.csv"
    write_csv(path, ABLATION_HEADER, rows)
    logger.info("wrote %s with %d rows", path, len(rows))
    return path


# --- toy ------------------------------------------------------------------------


def _toy_fields(config: RunConfig, toy: BimodalToy, seed: int, prior: Prior) -> List[FlowField]:
    if config.toy.oracle:
        return toy.oracle_fields(prior)
    space = toy.space
    train_cfg = config.train.model_copy(update={"epochs": config.toy.epochs, "logvar": "full"})
    rng = np.random.default_rng(seed)
    fields: List[FlowField] = []
    for index, frame in enumerate(toy.frames):
        targets = toy.sample_local(rng, config.toy.samples)
        condition = space.to_local(toy.conditioning, frame)
        data = TrainingSet(
            targets=targets,
            conditions=np.repeat(condition[None], len(targets), axis=0),
            progress=np.ones(len(targets)),
            logvar_targets=np.full((len(targets), 2), np.log(toy.mode_std**2)),
        )
        cfg = train_cfg.model_copy(update={"seed": config.train.seed + 1000 * seed + index})
        model, _ = train(build_model(space, prior, cfg), data, cfg)
        fields.append(model)
    return fields


def run_toy(config: RunConfig, out: Path, seeds: Sequence[int]) -> List[Path]:
    """Common-mode rates of ensemble, flow and flow-MCMC composition on the bimodal toy."""
    spec = resolve_task(config.task, config.tasks)
    if spec.kind != "toy":
        spec = resolve_task("bimodal-2d", config.tasks)
    toy_dir = out / "toy"
    rows = []
    rates: Dict[Tuple[str, str], List[float]] = {}
    written: List[Path] = []
    prior = pose_centric_prior(config.toy.prior_sigma, config.toy.prior_sigma)
    toy = bimodal_toy(spec, config.toy)
    centres = {"near": toy.conditioning, "far": toy.conditioning + np.array([config.toy.far_prior_shift, 0.0])}

    for seed in seeds:
        streams = toy.streams(_toy_fields(config, toy, seed, prior))
        panels = []
        for prior_name, centre in centres.items():
            for strategy in ("ensemble", "flow", "flow-mcmc"):
                comp = composition_for(config.composition, strategy, "constant")
                rng = np.random.default_rng([seed, len(rows)])
                samples = compose(streams, centre, comp, rng, config.toy.samples).states
                rate = toy.common_mode_rate(samples)
                mean, std = samples.mean(axis=0), samples.std(axis=0)
                rows.append((seed, prior_name, strategy, fmt(rate), *(fmt(float(v)) for v in (*mean, *std))))
                rates.setdefault((prior_name, strategy), []).append(rate)
                if prior_name == "near":
                    panels.append((strategy, samples))
        common = toy.common_mode
        written.append(
            scatter_panels(toy_dir / f"toy-seed-{seed}.svg", f"bimodal toy, seed {seed}", panels, (common[0], common[1], 3 * toy.mode_std))
        )

    for (prior_name, strategy), values in rates.items():
        rows.append(("all", prior_name, strategy, fmt(float(np.mean(values))), "", "", "", ""))
    path = toy_dir / "toy.csv"
    write_csv(path, TOY_HEADER, rows)
    logger.info("wrote %s", path)
    return [path, *written]
