"""Command-line surface: dataset prep, splitting, augmentation, runs, evaluation.

Every command takes ``--out`` and writes under it with a fixed layout
(``splits/``, ``rois/``, ``masks/``, ``instances/``, ``reports/``,
``overlays/``, plus ``synth/`` and ``augmented/`` for materialized datasets).
All randomness flows from ``--seed``; no command reads the clock, so reruns
with identical inputs produce byte-identical artifacts.

Exit codes: 0 success, 1 usage or config error, 2 data error (details in the
written report), 3 backend or exchange-protocol error.
"""
from __future__ import annotations

import argparse
import json
import shlex
import subprocess
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import dataset as ds
from .detection import OracleDetector, StaticDetector, nms, read_detections_jsonl
from .errors import BackendError, DataError, UsageError
from .imaging import write_rgb_png
from .metrics import evaluate_predictions, write_report_csv, write_report_json
from .pipeline import (
    PipelineConfig,
    assemble_batch,
    read_instances,
    read_mask_batch,
    reference_segmenter,
    run_image,
    write_instances,
    write_roi_batch,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_BACKEND = 3

_CONFIG_KEYS = {
    "data", "out", "seed", "jobs", "copies", "n", "image_size", "k",
    "detector", "segmenter", "adapter_cmd", "split", "subset",
    "roi_size", "offset_px", "conf_thresh", "nms_iou", "binarize_thresh",
    "resize_method", "report_formats",
}

_PIPELINE_DEFAULTS = {
    "detector": "oracle",
    "segmenter": "oracle",
    "subset": "all",
    "roi_size": "box",
    "offset_px": 10,
    "conf_thresh": 0.6,
    "nms_iou": 0.4,
    "binarize_thresh": 0.5,
    "resize_method": "bicubic",
    "jobs": 1,
    "report_formats": "json,csv",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would sys.exit(2); usage errors are exit 1 here
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="ultraseg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON file with defaults for any flag (flags win)")
        p.add_argument("--out", help="output directory for all artifacts")
        p.add_argument("--seed", type=int, help="seed for anything stochastic")
        p.add_argument("--jobs", type=int, help="worker cap; never changes results")

    p = sub.add_parser("ingest", help="validate a dataset and write a load report")
    common(p)
    p.add_argument("--data", help="dataset root (benign/malignant/normal dirs)")

    p = sub.add_parser("split", help="write the holdout + 9-fold split manifest")
    common(p)
    p.add_argument("--data", help="dataset root")
    p.add_argument("--k", type=int, help="fold count (default 9)")

    p = sub.add_parser("augment", help="materialize the 6x augmented dataset")
    common(p)
    p.add_argument("--data", help="dataset root")
    p.add_argument("--copies", type=int, help="augmented copies per record (default 5)")

    p = sub.add_parser("synth", help="generate the synthetic corpus")
    common(p)
    p.add_argument("--n", type=int, help="records per class")
    p.add_argument("--image-size", dest="image_size", type=int, help="square image side (default 256)")

    p = sub.add_parser("run", help="run the instance segmentation pipeline")
    common(p)
    p.add_argument("--data", help="dataset root")
    p.add_argument("--detector", help="oracle | external:<detections.jsonl>")
    p.add_argument("--segmenter", help="oracle | otsu | fixed:<t> | external:<dir>")
    p.add_argument("--adapter-cmd", dest="adapter_cmd", help="command run between roi export and mask import")
    p.add_argument("--split", help="split manifest from the split command")
    p.add_argument("--subset", help="all | test | trainval | fold:<i>")
    p.add_argument("--roi-size", dest="roi_size", help="WxH, or 'box' to keep each crop at box size")
    p.add_argument("--offset-px", dest="offset_px", type=int, help="box expansion in pixels (default 10)")
    p.add_argument("--conf-thresh", dest="conf_thresh", type=float, help="NMS confidence floor (default 0.6)")
    p.add_argument("--nms-iou", dest="nms_iou", type=float, help="NMS IoU threshold (default 0.4)")
    p.add_argument("--binarize-thresh", dest="binarize_thresh", type=float, help="mask binarization (default 0.5)")
    p.add_argument("--resize-method", dest="resize_method", help="nearest | bilinear | bicubic")

    p = sub.add_parser("eval", help="score written instances against ground truth")
    common(p)
    p.add_argument("--data", help="dataset root")
    p.add_argument("--instances", help="directory holding instances/ (default: --out)")
    p.add_argument("--split", help="split manifest")
    p.add_argument("--subset", help="all | test | trainval | fold:<i>")
    p.add_argument("--report-formats", dest="report_formats", help="comma list of json,csv")

    p = sub.add_parser("overlay", help="render image + GT contour + prediction tint PNGs")
    common(p)
    p.add_argument("--data", help="dataset root")
    p.add_argument("--instances", help="directory holding instances/ (default: --out)")
    p.add_argument("--split", help="split manifest")
    p.add_argument("--subset", help="all | test | trainval | fold:<i>")
    return parser


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file {path} does not exist")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(cfg, dict):
        raise UsageError("config file must hold a JSON object")
    unknown = set(cfg) - _CONFIG_KEYS
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return cfg


def _merge(args: argparse.Namespace, require=(), seed_required=False) -> dict:
    cfg = dict(_PIPELINE_DEFAULTS)
    cfg.update(_load_config(getattr(args, "config", None)))
    for key, value in vars(args).items():
        if key in ("command", "config") or value is None:
            continue
        cfg[key] = value
    for key in require:
        if cfg.get(key) is None:
            raise UsageError(f"--{key.replace('_', '-')} is required")
    if seed_required and cfg.get("seed") is None:
        raise UsageError("--seed is required for stochastic commands")
    cfg.setdefault("seed", 0)
    cfg.setdefault("jobs", 1)
    return cfg


def _out_dir(cfg: dict) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _ingest_checked(cfg: dict) -> ds.IngestResult:
    data = cfg.get("data")
    if data is None:
        raise UsageError("--data is required")
    if not Path(data).is_dir():
        raise UsageError(f"dataset root {data} does not exist")
    return ds.ingest(data, offset_px=int(cfg.get("offset_px", ds.DEFAULT_BOX_OFFSET)))


def _write_load_report(result: ds.IngestResult, out: Path) -> Path:
    reports = out / "reports"
    reports.mkdir(parents=True, exist_ok=True)
    payload = {
        "classes": result.class_counts(),
        "records": len(result.records),
        "instances": sum(len(r.instances) for r in result.records),
        "errors": [{"path": e.path, "message": e.message} for e in result.errors],
    }
    path = reports / "load_report.json"
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def _select_records(records, cfg: dict):
    subset = cfg.get("subset", "all")
    split_path = cfg.get("split")
    if subset == "all" and split_path is None:
        return list(records)
    if split_path is None:
        raise UsageError(f"--subset {subset} needs --split")
    if not Path(split_path).is_file():
        raise UsageError(f"split manifest {split_path} does not exist")
    split = ds.read_split(split_path)
    if subset in ("all", "trainval"):
        wanted = set(split.pool) if subset == "trainval" else set(split.pool) | set(split.test)
    elif subset == "test":
        wanted = set(split.test)
    elif subset.startswith("fold:"):
        idx = int(subset.split(":", 1)[1])
        if not 0 <= idx < len(split.folds):
            raise UsageError(f"fold index {idx} out of range (manifest has {len(split.folds)} folds)")
        wanted = set(split.folds[idx])
    else:
        raise UsageError(f"unknown subset {subset!r}")
    by_id = {r.id: r for r in records}
    missing = wanted - set(by_id)
    if missing:
        raise DataError(f"split references ids absent from the dataset: {sorted(missing)[:5]} ...")
    return [by_id[rid] for rid in sorted(wanted)]


def _parse_roi_size(value) -> tuple[int, int] | None:
    if value in (None, "box", "none"):
        return None
    if isinstance(value, (list, tuple)) and len(value) == 2:
        return (int(value[0]), int(value[1]))
    if isinstance(value, str) and "x" in value:
        w, h = value.lower().split("x", 1)
        return (int(w), int(h))
    raise UsageError(f"cannot parse roi size {value!r}; expected WxH or 'box'")


def _pipeline_config(cfg: dict) -> PipelineConfig:
    try:
        return PipelineConfig(
            offset_px=int(cfg["offset_px"]),
            conf_thresh=float(cfg["conf_thresh"]),
            nms_iou=float(cfg["nms_iou"]),
            roi_size=_parse_roi_size(cfg["roi_size"]),
            mask_binarize_thresh=float(cfg["binarize_thresh"]),
            resize_method=str(cfg["resize_method"]),
            seed=int(cfg["seed"]),
        )
    except ValueError as exc:
        raise UsageError(str(exc))


# --- commands ------------------------------------------------------------------


def _cmd_ingest(cfg: dict) -> int:
    result = _ingest_checked(cfg)
    out = _out_dir(cfg)
    path = _write_load_report(result, out)
    counts = result.class_counts()
    print(f"loaded {len(result.records)} records "
          f"(benign {counts['benign']}, malignant {counts['malignant']}, normal {counts['normal']}), "
          f"{len(result.errors)} errors -> {path.relative_to(out)}")
    return EXIT_DATA if result.errors else EXIT_OK


def _cmd_split(cfg: dict) -> int:
    result = _ingest_checked(cfg)
    out = _out_dir(cfg)
    if result.errors:
        _write_load_report(result, out)
        print(f"refusing to split a dataset with {len(result.errors)} load errors", file=sys.stderr)
        return EXIT_DATA
    items = [(r.id, r.label) for r in result.records]
    seed = int(cfg["seed"])
    hold = ds.split_holdout(items, seed=seed)
    pool_ids = set(hold.trainval)
    pool = [(rid, label) for rid, label in items if rid in pool_ids]
    fold_split = ds.kfold_stratified(pool, k=int(cfg.get("k") or 9), seed=seed, test_ids=hold.test)
    splits_dir = out / "splits"
    splits_dir.mkdir(parents=True, exist_ok=True)
    path = splits_dir / "split.json"
    ds.write_split(fold_split, path)
    for warning in hold.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    print(f"split {len(items)} records into test={len(fold_split.test)} "
          f"+ {len(fold_split.folds)} folds -> {path.relative_to(out)}")
    return EXIT_OK


def _cmd_augment(cfg: dict) -> int:
    result = _ingest_checked(cfg)
    out = _out_dir(cfg)
    if result.errors:
        _write_load_report(result, out)
        print(f"refusing to augment a dataset with {len(result.errors)} load errors", file=sys.stderr)
        return EXIT_DATA
    copies = int(cfg.get("copies") or 5)
    seed = int(cfg["seed"])
    target = out / "augmented"

    def one(record):
        expanded = ds.augment(record, copies=copies, seed=seed)
        ds.write_dataset(expanded, target)
        return len(expanded)

    jobs = int(cfg["jobs"])
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            written = sum(pool.map(one, result.records))
    else:
        written = sum(one(r) for r in result.records)
    print(f"augmented {len(result.records)} records into {written} -> {target.relative_to(out)}/")
    return EXIT_OK


def _cmd_synth(cfg: dict) -> int:
    if cfg.get("n") is None:
        raise UsageError("--n is required")
    out = _out_dir(cfg)
    records = ds.synth_generate(int(cfg["n"]), image_size=int(cfg.get("image_size") or 256), seed=int(cfg["seed"]))
    target = out / "synth"
    ds.write_dataset(records, target)
    print(f"generated {len(records)} synthetic records -> {target.relative_to(out)}/")
    return EXIT_OK


def _make_detector_factory(cfg: dict):
    spec = cfg["detector"]
    if spec == "oracle":
        return lambda record: OracleDetector(record)
    if spec.startswith("external:"):
        path = spec.split(":", 1)[1]
        if not Path(path).is_file():
            raise UsageError(f"detections file {path} does not exist")
        grouped = read_detections_jsonl(path)
        return lambda record: StaticDetector(grouped.get(record.id, []))
    raise UsageError(f"unknown detector {spec!r}; expected oracle or external:<file>")


def _make_segmenter_factory(cfg: dict):
    spec = cfg["segmenter"]
    if spec == "oracle" or spec == "otsu" or spec.startswith("fixed"):
        def factory(record):
            return {label: reference_segmenter(spec, label=label, record=record)
                    for label in ds.LESION_CLASSES}
        return factory
    raise UsageError(f"unknown segmenter {spec!r}; expected oracle, otsu, fixed:<t> or external:<dir>")


def _cmd_run(cfg: dict) -> int:
    result = _ingest_checked(cfg)
    out = _out_dir(cfg)
    if result.errors:
        _write_load_report(result, out)
        print(f"refusing to run over a dataset with {len(result.errors)} load errors", file=sys.stderr)
        return EXIT_DATA
    records = _select_records(result.records, cfg)
    pipe_cfg = _pipeline_config(cfg)
    detector_for = _make_detector_factory(cfg)
    seg_spec = cfg["segmenter"]

    failures: list[dict] = []
    if seg_spec.startswith("external"):
        per_image = _run_external(cfg, records, detector_for, pipe_cfg, out, failures)
    else:
        segmenter_for = _make_segmenter_factory(cfg)

        def one(record):
            res = run_image(record.image, detector_for(record), segmenter_for(record),
                            pipe_cfg, image_id=record.id)
            return record.id, res

        jobs = int(cfg["jobs"])
        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                outcomes = list(pool.map(one, records))
        else:
            outcomes = [one(r) for r in records]
        per_image = {}
        for rec_id, res in outcomes:
            per_image[rec_id] = res.instances
            failures.extend(
                {"image_id": rec_id, "message": err.message} for err in res.errors
            )

    write_instances(per_image, out)
    reports = out / "reports"
    reports.mkdir(parents=True, exist_ok=True)
    n_instances = sum(len(v) for v in per_image.values())
    (reports / "run_report.json").write_text(json.dumps({
        "records": len(records),
        "instances": n_instances,
        "errors": failures,
    }, indent=2, sort_keys=True) + "\n")
    print(f"ran {len(records)} records -> {n_instances} instances, {len(failures)} errors")
    return EXIT_BACKEND if failures else EXIT_OK


def _run_external(cfg, records, detector_for, pipe_cfg, out: Path, failures: list) -> dict:
    spec = cfg["segmenter"]
    exchange = Path(spec.split(":", 1)[1]) if ":" in spec else out
    exchange.mkdir(parents=True, exist_ok=True)
    items = []
    for record in records:
        dets = nms(detector_for(record).detect(record.image), pipe_cfg.conf_thresh, pipe_cfg.nms_iou)
        if dets:
            items.append((record.id, record.image, dets))
    manifest = write_roi_batch(items, exchange, pipe_cfg)
    adapter_cmd = cfg.get("adapter_cmd")
    masks_dir = exchange / "masks"
    if adapter_cmd:
        argv = shlex.split(adapter_cmd) + [str(exchange), str(exchange)]
        proc = subprocess.run(argv)
        if proc.returncode != 0:
            raise BackendError(f"adapter command failed with exit code {proc.returncode}")
    elif not masks_dir.is_dir():
        raise BackendError(
            f"wrote {len(manifest)} ROIs and manifest.json under {exchange}; "
            f"no masks/ found -- run your adapter, then rerun this command")
    loaded, issues = read_mask_batch(exchange)
    failures.extend({"entry": i.entry_index, "message": i.message} for i in issues)
    sizes = {r.id: r.image.size for r in records}
    return assemble_batch(sizes, loaded, pipe_cfg)


def _cmd_eval(cfg: dict) -> int:
    formats = {f.strip() for f in str(cfg["report_formats"]).split(",") if f.strip()}
    unknown = formats - {"json", "csv"}
    if unknown:
        raise UsageError(f"unknown report formats: {', '.join(sorted(unknown))}")
    inst_dir = Path(cfg.get("instances") or cfg["out"])
    if not (inst_dir / "instances" / "instances.jsonl").is_file():
        raise UsageError(f"no instances/instances.jsonl under {inst_dir}; run the pipeline first")
    result = _ingest_checked(cfg)
    out = _out_dir(cfg)
    if result.errors:
        _write_load_report(result, out)
        print(f"refusing to evaluate over a dataset with {len(result.errors)} load errors", file=sys.stderr)
        return EXIT_DATA
    records = _select_records(result.records, cfg)
    predictions = read_instances(inst_dir)
    report = evaluate_predictions(records, predictions)
    reports = out / "reports"
    reports.mkdir(parents=True, exist_ok=True)
    if "json" in formats:
        write_report_json(report, reports / "eval.json")
    if "csv" in formats:
        write_report_csv(report, reports / "eval.csv")
    print(f"map_50 {report.map_50:.6f}")
    for label in sorted(report.per_class_dice):
        print(f"{label}: dice {report.per_class_dice[label]:.6f} rmse {report.per_class_rmse[label]:.6f}")
    return EXIT_OK


def _contour(bits: np.ndarray) -> np.ndarray:
    padded = np.pad(bits, 1)
    eroded = (padded[1:-1, 1:-1] & padded[:-2, 1:-1] & padded[2:, 1:-1]
              & padded[1:-1, :-2] & padded[1:-1, 2:])
    return bits & ~eroded


def _render_overlay(record, instances) -> np.ndarray:
    rgb = np.stack([record.image.pixels] * 3, axis=-1).astype(np.float64)
    pred_union = np.zeros_like(record.image.pixels)
    for inst in instances:
        pred_union |= inst.mask.pixels
    tint = pred_union.astype(bool)
    rgb[tint] = 0.55 * rgb[tint] + 0.45 * np.array([60.0, 90.0, 255.0])
    for inst in record.instances:
        edge = _contour(inst.mask.pixels).astype(bool)
        rgb[edge] = [0.0, 255.0, 0.0]
    return np.clip(np.floor(rgb + 0.5), 0, 255).astype(np.uint8)


def _cmd_overlay(cfg: dict) -> int:
    result = _ingest_checked(cfg)
    out = _out_dir(cfg)
    if result.errors:
        _write_load_report(result, out)
        return EXIT_DATA
    records = _select_records(result.records, cfg)
    inst_dir = Path(cfg.get("instances") or cfg["out"])
    predictions = read_instances(inst_dir)
    overlays = out / "overlays"
    overlays.mkdir(parents=True, exist_ok=True)
    for record in records:
        rgb = _render_overlay(record, predictions.get(record.id, []))
        write_rgb_png(rgb, overlays / f"{record.id}.png")
    print(f"rendered {len(records)} overlays -> overlays/")
    return EXIT_OK


_HANDLERS = {
    "ingest": (_cmd_ingest, ("data", "out"), False),
    "split": (_cmd_split, ("data", "out"), True),
    "augment": (_cmd_augment, ("data", "out"), True),
    "synth": (_cmd_synth, ("out",), True),
    "run": (_cmd_run, ("data", "out"), False),
    "eval": (_cmd_eval, ("data", "out"), False),
    "overlay": (_cmd_overlay, ("data", "out"), False),
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        handler, required, needs_seed = _HANDLERS[args.command]
        cfg = _merge(args, require=required, seed_required=needs_seed)
        return handler(cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND


if __name__ == "__main__":
    sys.exit(main())
