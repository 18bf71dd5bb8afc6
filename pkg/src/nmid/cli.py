"""Command-line entry point: one subcommand per pipeline stage plus
run-all, driven by a single TOML config file.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import curation, dataio, pipeline


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nmid",
        description="Micrograph embedding, mining, prompting and evaluation pipeline.")
    parser.add_argument("--config", "-c", default="nmid.toml",
                        help="TOML pipeline configuration (default: nmid.toml)")
    parser.add_argument("--verbose", "-v", action="store_true",
                        help="log progress at INFO level")
    sub = parser.add_subparsers(dest="command", required=True)

    for name in ("gen-data", "prepare", "mine", "train", "embed",
                 "describe", "synthesize", "evaluate"):
        sub.add_parser(name, help=f"run the {name} stage")

    classify = sub.add_parser("classify", help="few-shot classify the test split")
    classify.add_argument("--sampler", choices=("similarity", "random"),
                          help="demonstration sampling strategy")
    classify.add_argument("--k", type=int, help="demonstrations per query")
    classify.add_argument("--seed", type=int, help="seed for the random sampler")

    serve = sub.add_parser("review-serve", help="serve the curation API and review UI")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8077)

    sub.add_parser("run-all", help="run every stage in order")
    return parser


def _run_stage(cfg: pipeline.PipelineConfig, result: pipeline.StageResult) -> None:
    status = "skipped (inputs unchanged)" if result.skipped else "done"
    outs = ", ".join(str(p) for p in result.outputs.values())
    print(f"stage={result.name} status={status} outputs=[{outs}]")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = pipeline.load_config(args.config)
    except Exception as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    try:
        if args.command == "run-all":
            for result in pipeline.run_all(cfg):
                _run_stage(cfg, result)
        elif args.command == "classify":
            _run_stage(cfg, pipeline.stage_classify(
                cfg, sampler=args.sampler, k=args.k, seed=args.seed))
        elif args.command == "review-serve":
            manifest_path = cfg.out_dir / "mine" / "manifest.jsonl"
            manifest = (dataio.DatasetManifest.load(manifest_path)
                        if manifest_path.is_file() else None)
            ui_dir = _find_ui_dir()
            curation.serve(cfg.out_dir / "review" / "curation.log.jsonl",
                           host=args.host, port=args.port, manifest=manifest,
                           ui_dir=ui_dir, token=cfg.review_token or None)
        else:
            stage = pipeline.STAGES[args.command]
            _run_stage(cfg, stage(cfg))
    except pipeline.PipelineError as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 130
    except Exception as exc:  # surface module errors with stage context
        print(f"failed ({args.command}): {exc}", file=sys.stderr)
        return 1
    return 0


def _find_ui_dir() -> Path | None:
    # Look for the built review frontend next to the repo root.
    here = Path(__file__).resolve()
    for parent in here.parents:
        candidate = parent / "frontend" / "dist"
        if (candidate / "index.html").is_file():
            return candidate
    return None


if __name__ == "__main__":
    sys.exit(main())
