from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from .config import BASELINE_METHODS, RunConfig, load_run_config
from .errors import FlowPolicyError
from .pipeline import VARIANTS, ablate, evaluate_streams, generate, run_toy, train_streams
from .settings import Settings, load_settings

STRATEGY_METHOD = {"ensemble": "msg-ensemble", "flow": "msg-flow", "flow-mcmc": "msg-flow-mcmc"}


def _die(message: str, exit_code: int = 2) -> None:
    print(f"Error: {message}", file=sys.stderr)
    raise SystemExit(exit_code)


def _configure_logging(settings: Settings) -> None:
    level = getattr(logging, settings.log_level, None)
    logging.basicConfig(
        level=level if isinstance(level, int) else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    overrides: Dict[str, Any] = {}
    if getattr(args, "task", None):
        overrides["task"] = args.task
    if getattr(args, "demos", None) is not None:
        overrides["demos"] = args.demos
    if getattr(args, "seed", None) is not None:
        overrides["seeds"] = [args.seed]
    if getattr(args, "epochs", None) is not None:
        overrides.setdefault("train", {})["epochs"] = args.epochs
        overrides.setdefault("toy", {})["epochs"] = args.epochs
    if getattr(args, "strategy", None):
        composition = overrides.setdefault("composition", {})
        composition["strategy"] = args.strategy
        if args.strategy != "flow-mcmc":
            composition["mcmc_steps"] = None
    if getattr(args, "weighting", None):
        overrides.setdefault("composition", {})["weighting"] = {"variant": args.weighting}
        overrides.setdefault("evaluation", {})["weightings"] = [args.weighting]
    if getattr(args, "episodes", None) is not None:
        overrides.setdefault("evaluation", {})["episodes"] = args.episodes
    if getattr(args, "oracle", None) is not None:
        overrides.setdefault("toy", {})["oracle"] = args.oracle
    return overrides


def _load(args: argparse.Namespace, settings: Settings) -> tuple[RunConfig, Path]:
    config_path = Path(args.config) if args.config else settings.config_path
    config = load_run_config(config_path, _overrides(args))
    out = Path(args.out) if args.out else Path(config.output_dir) if config.output_dir else settings.output_root
    return config, out


def _report(paths: List[Path]) -> None:
    for path in paths:
        print(path)


def cmd_gen(args: argparse.Namespace, settings: Settings) -> None:
    config, out = _load(args, settings)
    _report([generate(config, out, seed) for seed in config.seeds])


def cmd_train(args: argparse.Namespace, settings: Settings) -> None:
    config, out = _load(args, settings)
    variants = ["default"]
    if args.baselines:
        variants += ["global", "oriented"]
    variants += [v for v in args.variant or [] if v not in variants]
    for seed in config.seeds:
        _report(train_streams(config, out, seed, variants, overwrite=args.overwrite))


def _methods(args: argparse.Namespace, config: RunConfig) -> Optional[List[str]]:
    methods = list(args.methods) if args.methods else list(config.evaluation.methods)
    if args.strategy:
        methods = [m for m in methods if m in BASELINE_METHODS or m == STRATEGY_METHOD[args.strategy]]
    return methods


def cmd_eval(args: argparse.Namespace, settings: Settings) -> None:
    config, out = _load(args, settings)
    _report(evaluate_streams(config, out, config.seeds, _methods(args, config)))


def cmd_ablate(args: argparse.Namespace, settings: Settings) -> None:
    config, out = _load(args, settings)
    _report([ablate(config, out, config.seeds)])


def cmd_toy(args: argparse.Namespace, settings: Settings) -> None:
    config, out = _load(args, settings)
    _report(run_toy(config, out, config.seeds))


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="Run config YAML (defaults to $MSG_POLICY_CONFIG)")
    parser.add_argument("--out", help="Output root (defaults to config output_dir, then $MSG_POLICY_OUTPUT_ROOT)")
    parser.add_argument("--task", help="Task name (builtin or defined in the config)")
    parser.add_argument("--seed", type=int, help="Run a single seed instead of the configured list")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="msg-policy", description="Multi-stream generative policies")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p_gen = sub.add_parser("gen", help="Write scripted demonstrations for a task")
    _common(p_gen)
    p_gen.add_argument("--demos", type=int, help="Number of demonstrations")
    p_gen.set_defaults(func=cmd_gen)

    p_train = sub.add_parser("train", help="Train one stream per (skill, frame)")
    _common(p_train)
    p_train.add_argument("--epochs", type=int)
    p_train.add_argument("--baselines", action="store_true", help="Also train global and oriented streams")
    p_train.add_argument("--variant", action="append", choices=sorted(VARIANTS), help="Extra stream variant (repeatable)")
    p_train.add_argument("--overwrite", action="store_true", help="Retrain streams whose checkpoints exist")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="Roll out methods and write success rates and plots")
    _common(p_eval)
    p_eval.add_argument("--strategy", choices=sorted(STRATEGY_METHOD))
    p_eval.add_argument("--weighting")
    p_eval.add_argument("--episodes", type=int)
    p_eval.add_argument("--methods", nargs="+", help="Subset of methods to evaluate")
    p_eval.set_defaults(func=cmd_eval)

    p_ablate = sub.add_parser("ablate", help="Run the ablation grid")
    _common(p_ablate)
    p_ablate.add_argument("--weighting")
    p_ablate.add_argument("--episodes", type=int)
    p_ablate.add_argument("--epochs", type=int)
    p_ablate.set_defaults(func=cmd_ablate)

    p_toy = sub.add_parser("toy", help="Bimodal composition toy")
    _common(p_toy)
    p_toy.add_argument("--epochs", type=int)
    p_toy.add_argument("--oracle", dest="oracle", action="store_true", default=None)
    p_toy.add_argument("--no-oracle", dest="oracle", action="store_false")
    p_toy.set_defaults(func=cmd_toy)

    return parser


def main(argv: Optional[List[str]] = None) -> None:
    parser = build_parser()
    args = parser.parse_args(argv)
    settings = load_settings()
    _configure_logging(settings)
    try:
        args.func(args, settings)
    except FlowPolicyError as e:
        details = e.details.get("valid") or e.details.get("errors")
        suffix = f" (valid: {', '.join(map(str, details))})" if e.code == "UNKNOWN_TASK" and details else ""
        if e.code == "INVALID_CONFIG" and details:
            suffix = "; " + "; ".join(map(str, details))
        _die(f"{e.message}{suffix}")


if __name__ == "__main__":
    main()
