"""Command-line front end.

``phantomflow pipeline --config run.yaml`` runs the selected stages in order
(synth or ingest, segment, eval, metrics, reconstruct, augment) under one
output root::

    <root>/stack/              input images (synth or ingest)
    <root>/truth_labels/       ground truth (synth only)
    <root>/labels/             segmentation + segment_log.txt
    <root>/eval/               table.txt, report.kv
    <root>/metrics/            report.kv, series.tsv
    <root>/reconstruct/        grids/*.vxg, meshes/*.<fmt>, report.kv
    <root>/augment/            variant_NNN.<fmt>, diversity.kv
    <root>/run_manifest.json   config hash, seed, stages, wall times
    <root>/FAILED              present only after a failed stage

Exit status: 0 on success, 2 for an invalid config, ``10 + i`` when stage
``i`` of :data:`phantomflow.config.STAGES` fails.

Environment: ``PHANTOMFLOW_OUTPUT_ROOT`` and ``PHANTOMFLOW_THREADS`` override
the config file; command-line flags override both.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
import traceback
from pathlib import Path
from typing import Optional, Sequence

from threadpoolctl import threadpool_limits

from . import __version__
from .augment import (allowed_region, apply_variant, diversity_report, generate_variants, import_variant)
from .config import (STAGES, PipelineConfig, augment_config, augment_extra, capture_config, load_config,
                     parse_override, segment_config, stage_settings, synth_settings)
from .errors import ConfigInvalid, EmptyGrid, PhantomFlowError
from .evaluation import dataset_iou_stats, render_table, stack_iou_stats
from .ingest import ingest, load_frames
from .metrics import metrics_stack, report_keyvalue, report_series
from .phantom import default_manifest, default_phantom, synth_phantom
from .reconstruct import derive_component_grids, export_mesh, marching_cubes, mesh_stats
from .segment.pipeline import segment_stack_with_log
from .stackio import read_labels, read_stack, write_labels, write_stack, write_voxel_grid
from .volume import CLASS_NAMES

log = logging.getLogger("phantomflow")
ENV_OUTPUT_ROOT = "PHANTOMFLOW_OUTPUT_ROOT"
ENV_THREADS = "PHANTOMFLOW_THREADS"


class StageFailure(PhantomFlowError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause

    @property
    def exit_code(self) -> int:
        return 10 + STAGES.index(self.stage)


# ---------------------------------------------------------------- stages

def stage_synth(settings: dict, out_stack: Path, out_truth: Optional[Path] = None):
    manifest = default_manifest(int(settings["slice_count"]), int(settings["size_px"]),
                                float(settings["pixel_size_mm"]), float(settings["scan_length_mm"]))
    spec = default_phantom(bool(settings["resected"]), int(settings["seed"]), float(settings["speckle_sigma"]))
    stack, truth = synth_phantom(spec, manifest)
    write_stack(out_stack, stack)
    if out_truth is not None:
        write_labels(out_truth, truth)
    return stack, truth


def stage_ingest(frames_path, capture, out_stack: Path):
    stack = ingest(load_frames(frames_path), capture)
    write_stack(out_stack, stack)
    return stack


def stage_segment(stack_dir: Path, seg_cfg, out_labels: Path, log_path: Optional[Path] = None):
    vol, statuses = segment_stack_with_log(read_stack(stack_dir), seg_cfg)
    write_labels(out_labels, vol)
    log_path = log_path or out_labels / "segment_log.txt"
    log_path.write_text("".join(s.line() + "\n" for s in statuses))
    return vol


def stage_eval(pred_dirs: Sequence[Path], ref_dirs: Sequence[Path], out_dir: Path, label: str = "classical"):
    if len(pred_dirs) != len(ref_dirs) or not pred_dirs:
        raise ValueError("need the same non-zero number of prediction and reference label dirs")
    reports = [stack_iou_stats(read_labels(p), read_labels(r)) for p, r in zip(pred_dirs, ref_dirs)]
    out_dir.mkdir(parents=True, exist_ok=True)
    text = [reports[0].as_table(label) if len(reports) == 1 else dataset_iou_stats(reports).as_table(label)]
    kv = []
    for i, rep in enumerate(reports):
        kv += [f"stack.{i}.{line}" for line in rep.as_keyvalue().splitlines()]
    if len(reports) > 1:
        ds = dataset_iou_stats(reports)
        kv += [f"dataset.{line}" for line in ds.as_keyvalue().splitlines()]
        rows = [[f"stack {i}"] + [c.format() for c in (r.overall, r.per_class[2], r.per_class[1])]
                for i, r in enumerate(reports)]
        text.append("\nper stack (std over slices)\n" + render_table(("Overall", "Central", "Peripheral"), rows))
    (out_dir / "table.txt").write_text("".join(text))
    (out_dir / "report.kv").write_text("\n".join(kv) + "\n")
    return reports


def stage_metrics(labels_dir: Path, settings: dict, out_dir: Path):
    report = metrics_stack(read_labels(labels_dir), int(settings["harmonics"]), settings["channel_radius_mm"],
                           int(settings["angular_bins"]))
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.kv").write_text(report_keyvalue(report))
    (out_dir / "series.tsv").write_text(report_series(report))
    return report


def stage_reconstruct(labels_dir: Path, formats: Sequence[str], out_dir: Path):
    grids = derive_component_grids(read_labels(labels_dir))
    named = {"filled": grids.filled, "resection": grids.resection, "central_extent": grids.central}
    named.update({CLASS_NAMES[c]: g for c, g in grids.classes.items() if c != 3})
    (out_dir / "grids").mkdir(parents=True, exist_ok=True)
    (out_dir / "meshes").mkdir(parents=True, exist_ok=True)
    lines = []
    for name in sorted(named):
        grid = named[name]
        write_voxel_grid(out_dir / "grids" / f"{name}.vxg", grid)
        lines.append(f"{name}.voxels={grid.count()}")
        lines.append(f"{name}.voxel_volume_mm3={grid.count() * grid.voxel_volume_mm3:.12g}")
        try:
            mesh = marching_cubes(grid)
        except EmptyGrid:
            lines.append(f"{name}.mesh=none")
            continue
        for fmt in formats:
            export_mesh(mesh, out_dir / "meshes" / f"{name}.{fmt}", fmt)
        for k, v in mesh_stats(mesh).as_dict().items():
            lines.append(f"{name}.{k}={_kv(v)}")
    (out_dir / "report.kv").write_text("\n".join(lines) + "\n")
    return grids


def stage_augment(labels_dir: Path, aug_cfg, extra: dict, out_dir: Path, threads: int = 1):
    grids = derive_component_grids(read_labels(labels_dir))
    variants = generate_variants(grids.resection, grids.filled, grids.central, aug_cfg, threads=threads)
    variants += [import_variant(p, grids.filled) for p in extra.get("import") or []]
    out_dir.mkdir(parents=True, exist_ok=True)
    meshes = []
    fmt = extra["export_format"]
    for i, v in enumerate(variants):
        applied = apply_variant(grids.filled, v)
        meshes.append(applied.mesh)
        export_mesh(applied.mesh, out_dir / f"variant_{i:03d}.{fmt}", fmt)
    allowed = allowed_region(grids.filled, grids.central, aug_cfg.allowed_region_margin_mm)
    report = diversity_report(variants, grids.resection, aug_cfg, meshes, allowed)
    (out_dir / "diversity.kv").write_text(report.as_keyvalue())
    return report


def _kv(v):
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return f"{v:.12g}"
    return str(v)


# ---------------------------------------------------------------- pipeline

def resolve_threads(flag: Optional[int], cfg_threads: int = 1) -> int:
    if flag is not None:
        return flag
    env = os.environ.get(ENV_THREADS)
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigInvalid(f"{ENV_THREADS}: must be a positive integer, got {env!r}")
        if n < 1:
            raise ConfigInvalid(f"{ENV_THREADS}: must be a positive integer, got {env!r}")
        return n
    return cfg_threads


def resolve_root(flag: Optional[str], cfg: PipelineConfig) -> Path:
    root = flag or os.environ.get(ENV_OUTPUT_ROOT) or cfg.output_root
    if not root:
        raise ConfigInvalid("output_root: required (config key, --out or $PHANTOMFLOW_OUTPUT_ROOT)")
    return Path(root)


def parse_stages(text: Optional[str]) -> list:
    if not text:
        return [s for s in STAGES if s != "ingest"]
    stages = [s.strip() for s in text.split(",") if s.strip()]
    bad = [s for s in stages if s not in STAGES]
    if bad:
        raise ConfigInvalid(f"--stages: unknown stage(s) {bad}; known: {', '.join(STAGES)}")
    if "synth" in stages and "ingest" in stages:
        raise ConfigInvalid("--stages: synth and ingest both produce the input stack; pick one")
    return sorted(set(stages), key=STAGES.index)


def run_pipeline(cfg: PipelineConfig, stages: Sequence[str], root: Path, threads: int = 1) -> int:
    """Run ``stages`` in canonical order; returns the process exit status."""
    root.mkdir(parents=True, exist_ok=True)
    marker = root / "FAILED"
    if marker.exists():
        marker.unlink()
    stack_dir = Path(cfg.inputs.get("stack") or root / "stack")
    labels_dir = Path(cfg.inputs.get("labels") or root / "labels")
    truth_dir = root / "truth_labels"
    # validate stage-specific settings before anything runs
    if "synth" in stages:
        synth_cfg = synth_settings(cfg)
    if "ingest" in stages:
        capture, frames = capture_config(cfg)
        if frames is None:
            raise ConfigInvalid("ingest.frames: required field missing")
    seg_cfg, aug_cfg = segment_config(cfg), augment_config(cfg)

    manifest = {"version": __version__, "config_sha256": cfg.digest(), "seed": cfg.seed,
                "stages": list(stages), "threads": threads, "config": cfg.raw,
                "inputs": {"stack": str(stack_dir), "labels": str(labels_dir)}, "wall_time_s": {},
                "status": "running"}

    def write_manifest():
        (root / "run_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")

    with threadpool_limits(limits=threads):
        for stage in stages:
            t0 = time.perf_counter()
            log.info("stage %s", stage)
            try:
                if stage == "synth":
                    stage_synth(synth_cfg, stack_dir, truth_dir)
                elif stage == "ingest":
                    stage_ingest(frames, capture, stack_dir)
                elif stage == "segment":
                    stage_segment(stack_dir, seg_cfg, labels_dir)
                elif stage == "eval":
                    ref = stage_settings(cfg, "eval")["reference"]
                    ref = Path(ref) if ref else (truth_dir if truth_dir.exists() else None)
                    if ref is None:
                        manifest["eval"] = "skipped: no reference labels"
                    else:
                        stage_eval([labels_dir], [ref], root / "eval")
                elif stage == "metrics":
                    stage_metrics(labels_dir, stage_settings(cfg, "metrics"), root / "metrics")
                elif stage == "reconstruct":
                    stage_reconstruct(labels_dir, stage_settings(cfg, "reconstruct")["formats"],
                                      root / "reconstruct")
                elif stage == "augment":
                    stage_augment(labels_dir, aug_cfg, augment_extra(cfg), root / "augment", threads)
            except Exception as exc:  # any stage error becomes a stage failure
                manifest["wall_time_s"][stage] = round(time.perf_counter() - t0, 3)
                failure = StageFailure(stage, exc)
                manifest["status"] = f"failed at {stage}"
                marker.write_text(f"{failure}\n\n{traceback.format_exc()}")
                write_manifest()
                log.error("%s", failure)
                return failure.exit_code
            manifest["wall_time_s"][stage] = round(time.perf_counter() - t0, 3)
            write_manifest()
    manifest["status"] = "ok"
    manifest["wall_time_s"]["total"] = round(sum(manifest["wall_time_s"].values()), 3)
    write_manifest()
    return 0


# ---------------------------------------------------------------- argparse

def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key, e.g. segment.snake.alpha=0.5 (repeatable)")
    p.add_argument("--seed", type=int, help="top-level seed (overrides config)")
    p.add_argument("--threads", type=int, help="thread cap (overrides config and $%s)" % ENV_THREADS)
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="phantomflow", description=__doc__.split("\n\n")[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic phantom stack and its ground-truth labels")
    _common(p)
    p.add_argument("--out", required=True, help="stack output dir")
    p.add_argument("--truth", help="ground-truth labels output dir")
    p.add_argument("--unresected", action="store_true", help="phantom without resection cavity")
    p.add_argument("--pixel-size-mm", type=float, help="in-plane pixel size (or synth.pixel_size_mm)")

    p = sub.add_parser("ingest", help="detect scan start in a frame sequence and write a stack")
    _common(p)
    p.add_argument("--frames", help="frames .npy or directory of images (overrides ingest.frames)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("segment", help="segment a stack into a 4-class label volume")
    _common(p)
    p.add_argument("--stack", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--log", help="per-slice convergence log (default: <out>/segment_log.txt)")

    p = sub.add_parser("eval", help="IoU report of predicted labels against references")
    _common(p)
    p.add_argument("--pred", action="append", required=True, help="predicted labels dir (repeatable)")
    p.add_argument("--ref", action="append", required=True, help="reference labels dir (repeatable)")
    p.add_argument("--out", required=True)
    p.add_argument("--label", default="classical", help="row label in the table")

    p = sub.add_parser("metrics", help="per-frame circularity, smoothness and perforation")
    _common(p)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("reconstruct", help="voxel grids and meshes per class and component")
    _common(p)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--format", action="append", choices=["stl", "obj", "ply"])

    p = sub.add_parser("augment", help="resection-volume variants and their meshes")
    _common(p)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--import", dest="imports", action="append", default=[], metavar="VXG",
                   help="add an externally generated resection volume (repeatable)")

    p = sub.add_parser("pipeline", help="run selected stages end to end")
    _common(p)
    p.add_argument("--stages", help=f"comma-separated subset of {','.join(STAGES)} "
                                    "(default: all but ingest)")
    p.add_argument("--out", help="output root (overrides config and $%s)" % ENV_OUTPUT_ROOT)
    return ap


def _load(args) -> PipelineConfig:
    overrides = [parse_override(s) for s in args.set]
    if args.seed is not None:
        overrides.append(("seed", args.seed))
    return load_config(args.config, overrides)


def _dispatch(args) -> int:
    cfg = _load(args)
    threads = resolve_threads(args.threads, cfg.threads)
    if threads < 1:
        raise ConfigInvalid(f"--threads: must be a positive integer, got {threads}")
    cmd = args.command
    if cmd == "pipeline":
        return run_pipeline(cfg, parse_stages(args.stages), resolve_root(args.out, cfg), threads)

    with threadpool_limits(limits=threads):
        try:
            if cmd == "synth":
                raw = dict(cfg.raw.get("synth") or {})
                if args.pixel_size_mm is not None:
                    raw["pixel_size_mm"] = args.pixel_size_mm
                if args.unresected:
                    raw["resected"] = False
                cfg.sections["synth"] = raw
                stage_synth(synth_settings(cfg), Path(args.out), Path(args.truth) if args.truth else None)
            elif cmd == "ingest":
                capture, frames = capture_config(cfg)
                frames = args.frames or frames
                if frames is None:
                    raise ConfigInvalid("ingest.frames: required field missing (or pass --frames)")
                stage_ingest(frames, capture, Path(args.out))
            elif cmd == "segment":
                out = Path(args.out)
                stage_segment(Path(args.stack), segment_config(cfg), out, Path(args.log) if args.log else None)
            elif cmd == "eval":
                stage_eval([Path(p) for p in args.pred], [Path(p) for p in args.ref], Path(args.out), args.label)
                sys.stdout.write((Path(args.out) / "table.txt").read_text())
            elif cmd == "metrics":
                stage_metrics(Path(args.labels), stage_settings(cfg, "metrics"), Path(args.out))
                sys.stdout.write((Path(args.out) / "report.kv").read_text())
            elif cmd == "reconstruct":
                formats = args.format or stage_settings(cfg, "reconstruct")["formats"]
                stage_reconstruct(Path(args.labels), formats, Path(args.out))
            elif cmd == "augment":
                extra = augment_extra(cfg)
                extra["import"] = list(extra.get("import") or []) + args.imports
                report = stage_augment(Path(args.labels), augment_config(cfg), extra, Path(args.out), threads)
                print(f"variants={len(report.iou_vs_original)} passed={str(report.passed).lower()}")
        except ConfigInvalid:
            raise
        except Exception as exc:
            failure = StageFailure(cmd, exc)
            log.error("%s", failure)
            return failure.exit_code
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
