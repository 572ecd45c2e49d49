"""Command-line interface: staged stages and single-shot pipeline runs.

Every subcommand reads the same YAML config; stage subcommands share a
run directory derived from the config hash, so running them in order
reproduces exactly what `run` does in one shot. Exit codes follow the
error families: 0 success, 2 config, 3 missing input, 4 alignment,
5 task mismatch, 6 data format, 7 solver, 1 anything else.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .errors import AffectPipeError, ConfigError, MissingInputError
from .metrics import report_to_text
from .pipeline import (
    PipelineConfig,
    load_config,
    run_pipeline,
    stage_evaluate,
    stage_features,
    stage_fuse,
    stage_postprocess,
    stage_predict_kelm,
    stage_train_kelm,
    stage_window,
)
from .synth import synth_generate


def _load(args) -> PipelineConfig:
    return load_config(
        args.config, seed=args.seed, workers=args.workers, out_dir=args.out_dir
    )


def _cmd_synth(args) -> int:
    config = _load(args)
    if config.synth is None:
        raise ConfigError("synth needs a 'synth' section in the config")
    if not config.embeddings or not config.labels:
        raise ConfigError("synth needs paths.embeddings and paths.labels to write to")
    emb, lab, vad = config.embeddings, config.labels, config.vad
    if args.out_dir:
        base = Path(args.out_dir)
        emb = base / Path(emb).name
        lab = base / Path(lab).name
        vad = base / Path(vad).name if vad else None
    paths = synth_generate(config.synth, emb, lab, vad)
    for name in sorted(paths):
        print(f"wrote {name}: {paths[name]}")
    return 0


def _run_stage(args, stage, method: str | None = None) -> int:
    config = _load(args)
    run_dir = config.run_dir()
    if method is not None and config.fusion.method != method:
        config = replace(config, fusion=replace(config.fusion, method=method))
    run_dir.mkdir(parents=True, exist_ok=True)
    result = stage(config, run_dir)
    if result is not None:
        print(report_to_text(result))
    print(f"run directory: {run_dir}")
    return 0


def _cmd_run(args) -> int:
    config = _load(args)
    result = run_pipeline(config)
    print(report_to_text(result.report))
    print(f"run directory: {result.run_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="affectpipe",
        description="Windowed emotion-recognition pipeline over embedding tracks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    commands: list[tuple[str, str, object]] = [
        ("synth", "generate a seeded synthetic dataset", _cmd_synth),
        ("window", "resample, gate by VAD, and slice windows", None),
        ("features", "compute window functionals and normalize", None),
        ("train-kelm", "select C on the dev split and train", None),
        ("predict-kelm", "score windows onto the working timeline", None),
        ("fuse-dwf", "searched Dirichlet-weighted fusion", None),
        ("fuse-rf", "random-forest stacking fusion", None),
        ("fuse-mean", "unweighted mean fusion", None),
        ("postprocess", "interpolate, smooth, and emit predictions", None),
        ("evaluate", "score predictions against the labels", None),
        ("run", "execute the full pipeline in one shot", _cmd_run),
    ]
    stage_handlers = {
        "window": lambda a: _run_stage(a, stage_window),
        "features": lambda a: _run_stage(a, stage_features),
        "train-kelm": lambda a: _run_stage(a, stage_train_kelm),
        "predict-kelm": lambda a: _run_stage(a, stage_predict_kelm),
        "fuse-dwf": lambda a: _run_stage(a, stage_fuse, method="dwf"),
        "fuse-rf": lambda a: _run_stage(a, stage_fuse, method="rf"),
        "fuse-mean": lambda a: _run_stage(a, stage_fuse, method="mean"),
        "postprocess": lambda a: _run_stage(a, stage_postprocess),
        "evaluate": lambda a: _run_stage(a, stage_evaluate),
    }
    for name, help_text, handler in commands:
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", required=True, help="YAML pipeline config")
        cmd.add_argument("--seed", type=int, default=None, help="override the config seed")
        cmd.add_argument(
            "--workers", type=int, default=None, help="bounded per-video parallelism"
        )
        cmd.add_argument(
            "--out-dir",
            default=None,
            help="override output.dir (synth: where the dataset files go)",
        )
        cmd.set_defaults(handler=handler or stage_handlers[name])
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except AffectPipeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: missing input: {exc}", file=sys.stderr)
        return MissingInputError.exit_code


if __name__ == "__main__":
    sys.exit(main())
