"""Command-line front end.

Subcommands:
  synth   generate a seeded synthetic dataset tree
  merge   run the proposal post-processing pipeline over a proposal stream
  eval    score predicted instances against a dataset index
  oracle  score the best-IoU proposal per instance (ranking-free upper bound)
  render  draw a found/missed overlay for one frame

Exit codes: 0 success, 2 bad input or configuration, 1 unexpected failure.
"""

import argparse
import sys
import traceback
from dataclasses import replace
from pathlib import Path

from .formats import (
    RunConfig,
    ValidationError,
    load_annotation,
    load_dataset_index,
    load_grouped_proposals,
    load_run_config,
    render_report_table,
    write_proposals,
    write_report,
    write_synth_dataset,
)
from .merging import Proposal, run_pipeline
from .metrics import EvalConfig, EvalFrame, evaluate_frames, oracle_select
from .render import DEFAULT_FOUND_IOU, write_overlay
from .synthetic import SynthConfig, generate_dataset


def _load_run_config(args) -> RunConfig:
    if getattr(args, "config", None):
        return load_run_config(args.config)
    return RunConfig()


def _resolve_eval_config(args) -> tuple[EvalConfig, int]:
    run = _load_run_config(args)
    if args.config is None and args.nsd_tolerance is None and not args.no_nsd:
        raise ValidationError(
            "surface-dice tolerance is required: pass --nsd-tolerance PIXELS, "
            "or --no-nsd to skip MI_NSD, or a --config with an eval block"
        )
    cfg = run.eval
    if args.nsd_tolerance is not None:
        cfg = replace(cfg, nsd_tolerance=float(args.nsd_tolerance), compute_nsd=True)
    if args.no_nsd:
        cfg = replace(cfg, compute_nsd=False)
    if getattr(args, "matcher", None):
        cfg = replace(cfg, matcher=args.matcher)
    workers = args.workers if args.workers is not None else run.workers
    if workers < 1:
        raise ValidationError("--workers must be >= 1")
    return cfg, workers


def _load_eval_frames(index_path, grouped: dict) -> list[EvalFrame]:
    index = load_dataset_index(index_path)
    known = {e.frame_id for e in index.entries}
    stray = sorted(set(grouped) - known)
    if stray:
        raise ValidationError(f"predictions reference unknown frame ids: {stray}")
    frames = []
    for entry in index.entries:
        annotation = load_annotation(entry.annotation_path, entry.stage, entry.frame_id)
        frames.append(
            EvalFrame(entry.frame_id, annotation, tuple(grouped.get(entry.frame_id, ())))
        )
    return frames


def _cmd_synth(args) -> int:
    if args.config:
        import json

        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, ValueError) as exc:
            raise ValidationError(f"{args.config}: unreadable synth config: {exc}") from exc
        config = SynthConfig.from_mapping(data)
    else:
        config = SynthConfig()
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    dataset = generate_dataset(config)
    index_path = write_synth_dataset(args.out, dataset)
    n_frames = len(dataset.frames)
    n_props = sum(len(f.proposals) for f in dataset.frames)
    print(f"wrote {n_frames} frames, {n_props} proposals", file=sys.stderr)
    print(index_path)
    return 0


def _cmd_merge(args) -> int:
    run = _load_run_config(args)
    cfg = run.merge
    for name in ("score_threshold", "vote_fraction", "overlap_min_iou"):
        value = getattr(args, name)
        if value is not None:
            cfg = replace(cfg, **{name: float(value)})
    if args.min_group_size is not None:
        cfg = replace(cfg, min_group_size=int(args.min_group_size))
    print(
        f"merge settings: score threshold {cfg.score_threshold}, "
        f"min group size {cfg.min_group_size}, "
        f"vote fraction {cfg.vote_fraction:.0%}, "
        f"overlap min IoU {cfg.overlap_min_iou}",
        file=sys.stderr,
    )
    grouped = load_grouped_proposals(args.proposals)
    records = []
    total_in = total_out = 0
    for frame_id, proposals in grouped.items():  # insertion order = file order
        groups = run_pipeline(proposals, cfg)
        total_in += len(proposals)
        total_out += len(groups)
        records.extend((frame_id, Proposal(g.merged, g.merged_score)) for g in groups)
    write_proposals(args.out, records)
    kept = 0.0 if total_in == 0 else total_out / total_in
    print(
        f"{total_in} proposals -> {total_out} instances "
        f"({1.0 - kept:.1%} removed) across {len(grouped)} frames",
        file=sys.stderr,
    )
    return 0


def _cmd_eval(args) -> int:
    cfg, workers = _resolve_eval_config(args)
    grouped = load_grouped_proposals(args.predictions)
    frames = _load_eval_frames(args.index, grouped)
    report = evaluate_frames(frames, cfg, workers=workers)
    write_report(args.report, report)
    sys.stdout.write(render_report_table(report))
    return 0


def _cmd_oracle(args) -> int:
    cfg, workers = _resolve_eval_config(args)
    index = load_dataset_index(args.index)
    frames = []
    for entry in index.entries:
        annotation = load_annotation(entry.annotation_path, entry.stage, entry.frame_id)
        proposals = load_grouped_proposals(entry.proposals_path).get(entry.frame_id)
        if proposals is None:
            raise ValidationError(
                f"{entry.proposals_path}: no proposals for frame {entry.frame_id}"
            )
        pairs = oracle_select(annotation.instances, proposals)
        chosen = tuple(proposals[j] for _, j in pairs)
        frames.append(EvalFrame(entry.frame_id, annotation, chosen))
    report = evaluate_frames(frames, cfg, workers=workers)
    write_report(args.report, report)
    sys.stdout.write(render_report_table(report))
    return 0


def _cmd_render(args) -> int:
    index = load_dataset_index(args.index)
    entry = next((e for e in index.entries if e.frame_id == args.frame), None)
    if entry is None:
        raise ValidationError(f"{args.index}: no frame {args.frame!r} in index")
    annotation = load_annotation(entry.annotation_path, entry.stage, entry.frame_id)
    source = args.predictions if args.predictions else entry.proposals_path
    predictions = load_grouped_proposals(source).get(entry.frame_id, [])
    write_overlay(
        args.out, annotation, [p.mask for p in predictions], found_iou=args.found_iou
    )
    print(args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="proposalseg",
        description="Merge ranked object proposals into instrument instances "
        "and evaluate them with multi-instance metrics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None, help="synth config json")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("merge", help="post-process a proposal stream")
    p.add_argument("--proposals", required=True, help="input proposals (jsonl)")
    p.add_argument("--out", required=True, help="output merged instances (jsonl)")
    p.add_argument("--config", default=None, help="run config json")
    p.add_argument("--score-threshold", type=float, default=None)
    p.add_argument("--min-group-size", type=int, default=None)
    p.add_argument("--vote-fraction", type=float, default=None)
    p.add_argument("--overlap-min-iou", type=float, default=None)
    p.set_defaults(func=_cmd_merge)

    for name, fn, help_text in (
        ("eval", _cmd_eval, "score predictions against ground truth"),
        ("oracle", _cmd_oracle, "score the best-IoU proposal per instance"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--index", required=True, help="dataset index json")
        if name == "eval":
            p.add_argument("--predictions", required=True, help="predictions (jsonl)")
        p.add_argument("--report", required=True, help="output report json")
        p.add_argument("--config", default=None, help="run config json")
        group = p.add_mutually_exclusive_group()
        group.add_argument("--nsd-tolerance", type=float, default=None,
                           help="surface-dice tolerance in pixels")
        group.add_argument("--no-nsd", action="store_true",
                           help="skip MI_NSD entirely")
        p.add_argument("--matcher", choices=("optimal", "greedy"), default=None)
        p.add_argument("--workers", type=int, default=None)
        p.set_defaults(func=fn)

    p = sub.add_parser("render", help="draw a found/missed overlay image")
    p.add_argument("--index", required=True, help="dataset index json")
    p.add_argument("--frame", required=True, help="frame id to render")
    p.add_argument("--out", required=True, help="output png")
    p.add_argument("--predictions", default=None,
                   help="predictions jsonl (default: the frame's raw proposals)")
    p.add_argument("--found-iou", type=float, default=DEFAULT_FOUND_IOU,
                   help="IoU at or above which an instance counts as found")
    p.set_defaults(func=_cmd_render)
    return parser


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help exits 0, argparse errors exit 2
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ValidationError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception:
        traceback.print_exc()
        return 1


def main() -> None:
    raise SystemExit(cli_main())


if __name__ == "__main__":
    main()
