"""On-disk formats: label-image / JSON annotations, JSONL proposal streams,
dataset indices, run configs, and metric reports.

All JSON writers emit sorted keys so reports and manifests are
byte-for-byte reproducible.  Loaders raise ValidationError with the
offending path (and frame id, where known) in the message.
"""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from PIL import Image

from .masks import BinaryMask, FrameGeometry, decode, encode
from .merging import MergeConfig, Proposal
from .metrics import (
    EvalConfig,
    FrameAnnotation,
    FrameScore,
    MetricReport,
    SizeBin,
    Stage,
    StageSummary,
)


class ValidationError(ValueError):
    """Malformed or inconsistent input data."""


# --------------------------------------------------------------------------
# annotations


def _runs_from_json(obj, geometry: FrameGeometry, where: str) -> BinaryMask:
    runs = obj.get("runs")
    if not isinstance(runs, list):
        raise ValidationError(f"{where}: instance needs a 'runs' list")
    try:
        pairs = [(int(s), int(n)) for s, n in runs]
        return BinaryMask.from_runs(geometry, pairs)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{where}: bad run list: {exc}") from exc


def load_annotation(path, stage: Stage, frame_id: str | None = None) -> FrameAnnotation:
    """Read one frame's ground truth (.png label image or .json runs).

    The stage comes from the dataset index, not from the file itself.
    """
    path = Path(path)
    where = f"{path}" if frame_id is None else f"{path} (frame {frame_id})"
    if path.suffix.lower() == ".png":
        try:
            with Image.open(path) as img:
                labels = np.asarray(img)
        except OSError as exc:
            raise ValidationError(f"{where}: unreadable label image: {exc}") from exc
        if labels.ndim != 2:
            raise ValidationError(f"{where}: label image must be single-channel")
        geometry = FrameGeometry(width=labels.shape[1], height=labels.shape[0])
        values = np.unique(labels)
        values = values[values != 0]
        if values.size == 0:
            raise ValidationError(f"{where}: label image contains no instances")
        instances = tuple(encode(labels == v, geometry) for v in values)
    elif path.suffix.lower() == ".json":
        try:
            obj = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"{where}: unreadable annotation json: {exc}") from exc
        try:
            geometry = FrameGeometry(int(obj["width"]), int(obj["height"]))
            raw = obj["instances"]
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(
                f"{where}: annotation json needs width, height, instances"
            ) from exc
        if not isinstance(raw, list) or not raw:
            raise ValidationError(f"{where}: 'instances' must be a nonempty list")
        instances = tuple(_runs_from_json(inst, geometry, where) for inst in raw)
    else:
        raise ValidationError(f"{where}: unsupported annotation format {path.suffix!r}")
    try:
        return FrameAnnotation(geometry, instances, stage)
    except ValueError as exc:
        raise ValidationError(f"{where}: {exc}") from exc


def write_annotation(path, annotation: FrameAnnotation) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix.lower() == ".png":
        if len(annotation.instances) > 65535:
            raise ValidationError("too many instances for a 16-bit label image")
        labels = np.zeros(annotation.geometry.shape, dtype=np.uint16)
        for k, inst in enumerate(annotation.instances, start=1):
            labels[decode(inst)] = k
        Image.fromarray(labels).save(path)  # uint16 -> 16-bit grayscale png
    elif path.suffix.lower() == ".json":
        obj = {
            "width": annotation.geometry.width,
            "height": annotation.geometry.height,
            "instances": [
                {"runs": [[int(s), int(n)] for s, n in inst.runs()]}
                for inst in annotation.instances
            ],
        }
        path.write_text(json.dumps(obj, sort_keys=True) + "\n")
    else:
        raise ValidationError(f"unsupported annotation format {path.suffix!r}")


# --------------------------------------------------------------------------
# proposals (JSONL, one record per proposal)


def _proposal_from_record(obj, where: str) -> tuple[str, Proposal]:
    try:
        frame_id = str(obj["frame_id"])
        geometry = FrameGeometry(int(obj["width"]), int(obj["height"]))
        score = float(obj["score"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(
            f"{where}: proposal record needs frame_id, width, height, score, runs"
        ) from exc
    mask = _runs_from_json(obj, geometry, where)
    try:
        return frame_id, Proposal(mask, score)
    except ValueError as exc:
        raise ValidationError(f"{where}: {exc}") from exc


def _read_proposal_lines(path) -> Iterable[tuple[str, Proposal]]:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise ValidationError(f"{path}: unreadable proposal file: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        where = f"{path}:{lineno}"
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{where}: bad json: {exc}") from exc
        yield _proposal_from_record(obj, where)


def _check_uniform_geometry(frame_id: str, proposals: Sequence[Proposal], path) -> None:
    geometries = {p.mask.geometry for p in proposals}
    if len(geometries) > 1:
        raise ValidationError(
            f"{path}: frame {frame_id} mixes proposal geometries {sorted(map(str, geometries))}"
        )


def load_proposals(path, frame_id: str | None = None) -> list[Proposal]:
    """Read one frame's proposals, highest score first (stable on ties).

    With frame_id=None the file must contain exactly one frame.
    """
    grouped = load_grouped_proposals(path)
    if frame_id is None:
        if len(grouped) != 1:
            raise ValidationError(
                f"{path}: expected a single frame, found {sorted(grouped)}"
            )
        return next(iter(grouped.values()))
    if frame_id not in grouped:
        raise ValidationError(f"{path}: no proposals for frame {frame_id}")
    return grouped[frame_id]


def load_grouped_proposals(path) -> dict[str, list[Proposal]]:
    """Read a proposal stream grouped by frame, each group ranked by score."""
    grouped: dict[str, list[Proposal]] = {}
    for frame_id, proposal in _read_proposal_lines(path):
        grouped.setdefault(frame_id, []).append(proposal)
    for frame_id, proposals in grouped.items():
        _check_uniform_geometry(frame_id, proposals, path)
        proposals.sort(key=lambda p: -p.score)  # stable: file order breaks ties
    return grouped


def write_proposals(path, records: Iterable[tuple[str, Proposal]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for frame_id, proposal in records:
            obj = {
                "frame_id": frame_id,
                "width": proposal.mask.geometry.width,
                "height": proposal.mask.geometry.height,
                "score": proposal.score,
                "runs": [[int(s), int(n)] for s, n in proposal.mask.runs()],
            }
            fh.write(json.dumps(obj, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# dataset index


@dataclass(frozen=True)
class IndexEntry:
    frame_id: str
    stage: Stage
    annotation_path: Path
    proposals_path: Path


@dataclass(frozen=True)
class DatasetIndex:
    provenance: str
    entries: tuple[IndexEntry, ...]

    def stages(self) -> list[Stage]:
        seen = []
        for entry in self.entries:
            if entry.stage not in seen:
                seen.append(entry.stage)
        return seen


def load_dataset_index(path) -> DatasetIndex:
    """Read an index; annotation/proposal paths are resolved relative to it."""
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"{path}: unreadable index: {exc}") from exc
    frames = obj.get("frames")
    if not isinstance(frames, list) or not frames:
        raise ValidationError(f"{path}: index needs a nonempty 'frames' list")
    entries = []
    seen_ids = set()
    base = path.parent
    for record in frames:
        try:
            frame_id = str(record["id"])
            stage = Stage(record["stage"])
            ann = base / record["annotation"]
            props = base / record["proposals"]
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(
                f"{path}: each frame needs id, stage, annotation, proposals ({exc})"
            ) from exc
        if frame_id in seen_ids:
            raise ValidationError(f"{path}: duplicate frame id {frame_id}")
        seen_ids.add(frame_id)
        for p in (ann, props):
            if not p.is_file():
                raise ValidationError(f"{path}: frame {frame_id}: missing file {p}")
        entries.append(IndexEntry(frame_id, stage, ann, props))
    return DatasetIndex(provenance=str(obj.get("provenance", "")), entries=tuple(entries))


def write_dataset_index(path, index: DatasetIndex) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    base = path.parent
    obj = {
        "provenance": index.provenance,
        "frames": [
            {
                "id": e.frame_id,
                "stage": e.stage.value,
                "annotation": e.annotation_path.relative_to(base).as_posix(),
                "proposals": e.proposals_path.relative_to(base).as_posix(),
            }
            for e in index.entries
        ],
    }
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# run configuration


@dataclass(frozen=True)
class RunConfig:
    merge: MergeConfig = MergeConfig()
    eval: EvalConfig = EvalConfig(compute_nsd=False)
    workers: int = 1

    def __post_init__(self):
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


def run_config_from_mapping(data: Mapping) -> RunConfig:
    data = dict(data)
    kwargs = {}
    if "merge" in data:
        m = dict(data.pop("merge"))
        merge_kwargs = {}
        for name in ("score_threshold", "vote_fraction", "overlap_min_iou"):
            if name in m:
                merge_kwargs[name] = float(m.pop(name))
        if "min_group_size" in m:
            merge_kwargs["min_group_size"] = int(m.pop("min_group_size"))
        if m:
            raise ValidationError(f"unknown merge config keys: {sorted(m)}")
        try:
            kwargs["merge"] = MergeConfig(**merge_kwargs)
        except ValueError as exc:
            raise ValidationError(f"merge config: {exc}") from exc
    if "eval" in data:
        e = dict(data.pop("eval"))
        eval_kwargs = {}
        if "nsd_tolerance" in e:
            tol = e.pop("nsd_tolerance")
            eval_kwargs["nsd_tolerance"] = None if tol is None else float(tol)
        if "compute_nsd" in e:
            eval_kwargs["compute_nsd"] = bool(e.pop("compute_nsd"))
        if "ar_budgets" in e:
            eval_kwargs["ar_budgets"] = tuple(int(n) for n in e.pop("ar_budgets"))
        if "iou_grid" in e:
            eval_kwargs["iou_grid"] = tuple(float(t) for t in e.pop("iou_grid"))
        if "recall_budget" in e:
            eval_kwargs["recall_budget"] = int(e.pop("recall_budget"))
        if "matcher" in e:
            eval_kwargs["matcher"] = str(e.pop("matcher"))
        if e:
            raise ValidationError(f"unknown eval config keys: {sorted(e)}")
        try:
            kwargs["eval"] = EvalConfig(**eval_kwargs)
        except ValueError as exc:
            raise ValidationError(f"eval config: {exc}") from exc
    if "workers" in data:
        kwargs["workers"] = int(data.pop("workers"))
    if data:
        raise ValidationError(f"unknown run config keys: {sorted(data)}")
    try:
        return RunConfig(**kwargs)
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc


def load_run_config(path) -> RunConfig:
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"{path}: unreadable run config: {exc}") from exc
    try:
        return run_config_from_mapping(obj)
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from exc


# --------------------------------------------------------------------------
# metric reports


def report_to_mapping(report: MetricReport) -> dict:
    return {
        "frames": [
            {
                "frame_id": f.frame_id,
                "stage": f.stage.value,
                "mi_dsc": f.mi_dsc,
                "mi_nsd": f.mi_nsd,
            }
            for f in report.per_frame
        ],
        "stages": {
            stage.value: {
                "frame_count": s.frame_count,
                "mean_mi_dsc": s.mean_mi_dsc,
                "q05_mi_dsc": s.q05_mi_dsc,
                "mean_mi_nsd": s.mean_mi_nsd,
                "q05_mi_nsd": s.q05_mi_nsd,
                "average_recall": {str(k): v for k, v in s.average_recall.items()},
                "recall_by_size": {
                    b.value: [[t, r] for t, r in curve]
                    for b, curve in s.recall_by_size.items()
                },
            }
            for stage, s in report.per_stage.items()
        },
    }


def report_from_mapping(obj: Mapping) -> MetricReport:
    try:
        frames = tuple(
            FrameScore(
                frame_id=str(f["frame_id"]),
                stage=Stage(f["stage"]),
                mi_dsc=float(f["mi_dsc"]),
                mi_nsd=None if f["mi_nsd"] is None else float(f["mi_nsd"]),
            )
            for f in obj["frames"]
        )
        stages = {}
        for name, s in obj["stages"].items():
            stage = Stage(name)
            stages[stage] = StageSummary(
                stage=stage,
                frame_count=int(s["frame_count"]),
                mean_mi_dsc=float(s["mean_mi_dsc"]),
                q05_mi_dsc=float(s["q05_mi_dsc"]),
                mean_mi_nsd=None if s["mean_mi_nsd"] is None else float(s["mean_mi_nsd"]),
                q05_mi_nsd=None if s["q05_mi_nsd"] is None else float(s["q05_mi_nsd"]),
                average_recall={int(k): float(v) for k, v in s["average_recall"].items()},
                recall_by_size={
                    SizeBin(b): tuple((float(t), float(r)) for t, r in curve)
                    for b, curve in s["recall_by_size"].items()
                },
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed report: {exc}") from exc
    return MetricReport(per_frame=frames, per_stage=stages)


def write_report(path, report: MetricReport) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = json.dumps(report_to_mapping(report), indent=2, sort_keys=True) + "\n"
    path.write_text(payload)


def load_report(path) -> MetricReport:
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"{path}: unreadable report: {exc}") from exc
    return report_from_mapping(obj)


def _fmt(value) -> str:
    return "   -  " if value is None else f"{value:.4f}"


def render_report_table(report: MetricReport) -> str:
    """Human-readable summary: one stage table plus per-size recall curves."""
    budgets = sorted({b for s in report.per_stage.values() for b in s.average_recall})
    header = ["stage", "frames", "MI_DSC mean", "MI_DSC q05", "MI_NSD mean", "MI_NSD q05"]
    header += [f"AR@{b}" for b in budgets]
    rows = [header]
    for stage, s in report.per_stage.items():
        row = [
            stage.value,
            str(s.frame_count),
            _fmt(s.mean_mi_dsc),
            _fmt(s.q05_mi_dsc),
            _fmt(s.mean_mi_nsd),
            _fmt(s.q05_mi_nsd),
        ]
        row += [_fmt(s.average_recall.get(b)) for b in budgets]
        rows.append(row)
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = [
        "  ".join(cell.rjust(w) for cell, w in zip(row, widths)).rstrip() for row in rows
    ]
    for stage, s in report.per_stage.items():
        if not s.recall_by_size:
            continue
        lines.append("")
        lines.append(f"{stage.value} recall by relative size (IoU threshold -> recall)")
        for size_bin, curve in s.recall_by_size.items():
            points = "  ".join(f"{t:.2f}:{r:.4f}" for t, r in curve)
            lines.append(f"  {size_bin.value:>2}  {points}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# synthetic dataset export (annotations + proposals + index + config)


def write_synth_dataset(out_dir, dataset) -> Path:
    """Write a generated dataset as an on-disk tree; returns the index path."""
    out_dir = Path(out_dir)
    (out_dir / "annotations").mkdir(parents=True, exist_ok=True)
    (out_dir / "proposals").mkdir(parents=True, exist_ok=True)
    entries = []
    for frame in dataset.frames:
        ann_path = out_dir / "annotations" / f"{frame.frame_id}.png"
        prop_path = out_dir / "proposals" / f"{frame.frame_id}.jsonl"
        write_annotation(ann_path, frame.annotation)
        write_proposals(prop_path, ((frame.frame_id, p) for p in frame.proposals))
        entries.append(
            IndexEntry(frame.frame_id, frame.annotation.stage, ann_path, prop_path)
        )
    index = DatasetIndex(
        provenance=f"synthetic (numpy PCG64, seed={dataset.config.seed})",
        entries=tuple(entries),
    )
    index_path = out_dir / "index.json"
    write_dataset_index(index_path, index)
    config_path = out_dir / "config.json"
    config_path.write_text(
        json.dumps(dataset.config.to_mapping(), indent=2, sort_keys=True) + "\n"
    )
    return index_path
