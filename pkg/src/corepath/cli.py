"""Command line pipeline for slide analysis.

Subcommands cover the full flow: synthesize a dataset, segment tissue and
pen marks, digitize annotations into label masks, extract patches with
cached features, train and apply the two patch classifier stages, train
and apply the slide heads, evaluate against truth, and render confidence
masks. Batch commands operate on a dataset directory (with manifest.json)
plus a work directory that accumulates artifacts:

    work/
      masks/<slide_id>/tissue.png pen.png labels.png
      patches/<slide_id>.jsonl [.npy] .features.npy
      models/patch_detection.json patch_grading.json
      probs/<stage>/member_XX.jsonl
      heads/<task>/heads.json member_XX.json
      predictions.jsonl report.json renders/ runlog.jsonl

Every command is deterministic for fixed inputs and seeds; runlogs carry
no timestamps so repeated runs are byte-identical. Failures print a single
``error: ...`` line to stderr and exit with status 2.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from corepath.aggregation import (
    HeadEnsemble,
    calibrate_threshold,
    predict_slide,
    slide_features,
    train_detection_heads,
    train_grading_heads,
    train_length_heads,
)
from corepath.annotation import build_label_mask, refine_label_mask
from corepath.metrics import (
    confusion_matrix,
    group_isup,
    operating_table,
    pearson,
    roc_auc,
    weighted_kappa,
)
from corepath.patch_model import (
    STAGE_CLASSES,
    assemble_stage_classes,
    extract_patch_features,
    load_patch_ensemble,
    predict_prob_matrix,
    read_prob_matrices,
    save_patch_ensemble,
    train_patch_ensemble,
    write_prob_matrices,
)
from corepath.patches import (
    PatchGridConfig,
    extract_patch,
    feature_cache_path,
    label_patch,
    plan_patch_grid,
    save_patch_archive,
)
from corepath.rendering import build_confidence_mask, render_overlay
from corepath.segmentation import (
    SegmentationParams,
    pen_mask_from_image,
    tissue_mask_from_image,
)
from corepath.slidepack import (
    BinaryMask,
    load_mask,
    load_meta,
    load_slidepack,
    read_level,
    save_mask,
)
from corepath.synthgen import DatasetConfig, generate_dataset, split_by_man

_WORK_DS = 16


# -- shared plumbing ---------------------------------------------------------


def _read_ids(path: str | Path) -> list[str]:
    ids = [line.strip() for line in Path(path).read_text().splitlines() if line.strip()]
    if not ids:
        raise ValueError(f"empty id list: {path}")
    return ids


def _load_manifest(dataset: str | Path) -> dict:
    path = Path(dataset) / "manifest.json"
    if not path.is_file():
        raise ValueError(f"not a dataset directory (no manifest.json): {dataset}")
    return json.loads(path.read_text())


def _slide_rows(dataset: Path, ids: list[str] | None) -> list[dict]:
    manifest = _load_manifest(dataset)
    rows = manifest["slides"]
    if ids is None:
        return rows
    by_id = {row["slide_id"]: row for row in rows}
    missing = [i for i in ids if i not in by_id]
    if missing:
        raise ValueError(f"slide ids not in manifest: {', '.join(missing[:5])}")
    return [by_id[i] for i in ids]


def _truth_by_id(dataset: Path) -> dict[str, dict]:
    path = Path(dataset) / "truth.jsonl"
    if not path.is_file():
        raise ValueError(f"missing truth file: {path}")
    rows = {}
    for line in path.read_text().splitlines():
        if line:
            row = json.loads(line)
            rows[row["slide_id"]] = row
    return rows


def _runlog(work: Path, entry: dict) -> None:
    work.mkdir(parents=True, exist_ok=True)
    with open(work / "runlog.jsonl", "a") as fh:
        fh.write(json.dumps(entry, sort_keys=True) + "\n")


def _emit(summary: dict) -> None:
    print(json.dumps(summary, sort_keys=True))


def _ids_or_all(args) -> list[str] | None:
    return _read_ids(args.ids) if args.ids else None


def _member_prob_files(work: Path, stage: str) -> list[Path]:
    files = sorted((work / "probs" / stage).glob("member_*.jsonl"))
    if not files:
        raise ValueError(f"no probability files for stage {stage} under {work}")
    return files


def _probs_by_slide(path: Path, stage: str) -> dict[str, np.ndarray]:
    return {pm.slide_id: pm.probs for pm in read_prob_matrices(path, stage)}


def _member_slide_features(
    work: Path, stage: str, ids: list[str]
) -> list[np.ndarray]:
    """Per member, one row of slide-level features per id.

    A slide whose patch index is empty legitimately has no probability
    rows and gets the zero-patch feature vector; a slide that was never
    predicted is an error, not a silent zero row.
    """
    n_classes = len(STAGE_CLASSES[stage])
    empty = np.zeros((0, n_classes), dtype=np.float64)
    out = []
    for path in _member_prob_files(work, stage):
        probs = _probs_by_slide(path, stage)
        rows = []
        for sid in ids:
            if sid in probs:
                rows.append(slide_features(probs[sid], n_classes))
                continue
            index = work / "patches" / f"{sid}.jsonl"
            if index.exists() and not index.read_text().strip():
                rows.append(slide_features(empty, n_classes))
                continue
            raise ValueError(
                f"no {stage} probabilities for slide {sid}; "
                "run predict-patch over an ids file that includes it"
            )
        out.append(np.stack(rows))
    return out


# -- synth -------------------------------------------------------------------


def _dataset_config(args) -> DatasetConfig:
    kwargs = {}
    if args.config:
        raw = json.loads(Path(args.config).read_text())
        for key in (
            "counts",
            "seed",
            "cores_per_man",
            "core_length_mm",
            "rotation_deg",
        ):
            if key in raw:
                value = raw[key]
                if key == "counts":
                    value = {int(k): int(v) for k, v in value.items()}
                elif key != "seed":
                    value = tuple(value)
                kwargs[key] = value
        for key in ("core_width_mm", "grade_coded", "pixel_size_um"):
            if key in raw:
                kwargs[key] = raw[key]
    if args.seed is not None:
        kwargs["seed"] = args.seed
    counts = dict(kwargs.get("counts", DatasetConfig().counts))
    explicit = False
    for grade, flag in enumerate(("benign", "isup1", "isup2", "isup3", "isup4", "isup5")):
        value = getattr(args, flag)
        if value is not None:
            if not explicit:
                counts = {g: 0 for g in range(6)}
                explicit = True
            counts[grade] = value
    kwargs["counts"] = counts
    return DatasetConfig(**kwargs)


def cmd_synth(args) -> int:
    config = _dataset_config(args)
    out = Path(args.out)
    manifest = generate_dataset(out, config)
    n = len(manifest["slides"])
    all_ids = [row["slide_id"] for row in manifest["slides"]]
    (out / "all.txt").write_text("".join(i + "\n" for i in all_ids))
    summary = {"command": "synth", "slides": n}
    if args.test_fraction is not None:
        train_ids, test_ids = split_by_man(
            manifest, args.test_fraction, seed=args.split_seed
        )
        (out / "train.txt").write_text("".join(i + "\n" for i in train_ids))
        (out / "test.txt").write_text("".join(i + "\n" for i in test_ids))
        (out / "split.json").write_text(
            json.dumps(
                {"train": train_ids, "test": test_ids}, sort_keys=True, indent=1
            )
            + "\n"
        )
        summary["train"] = len(train_ids)
        summary["test"] = len(test_ids)
    _emit(summary)
    return 0


# -- segment / digitize / extract ---------------------------------------------


def _batch_targets(args) -> list[tuple[str, Path, Path]]:
    """(slide_id, pack_path, mask_dir) triples for one or many slides."""
    if args.pack:
        pack = Path(args.pack)
        if args.out:
            out = Path(args.out)
        elif args.work:
            out = Path(args.work) / "masks" / pack.name
        else:
            raise ValueError("single-pack mode needs --out or --work")
        return [(pack.name, pack, out)]
    if not args.dataset or not args.work:
        raise ValueError("provide either --pack or --dataset with --work")
    dataset = Path(args.dataset)
    rows = _slide_rows(dataset, _ids_or_all(args))
    work = Path(args.work)
    return [
        (row["slide_id"], dataset / row["path"], work / "masks" / row["slide_id"])
        for row in rows
    ]


def cmd_segment(args) -> int:
    params = SegmentationParams()
    targets = _batch_targets(args)
    for _sid, pack, mask_dir in targets:
        rgb, meta = read_level(pack, _WORK_DS)
        um_per_px = float(meta["pixel_size_um"]) * _WORK_DS
        tissue = tissue_mask_from_image(rgb, um_per_px, params)
        pen = pen_mask_from_image(rgb, tissue, um_per_px, params)
        save_mask(BinaryMask(data=tissue, downsample=_WORK_DS), mask_dir / "tissue.png")
        save_mask(BinaryMask(data=pen, downsample=_WORK_DS), mask_dir / "pen.png")
    if args.work:
        _runlog(Path(args.work), {"command": "segment", "slides": len(targets)})
    _emit({"command": "segment", "slides": len(targets)})
    return 0


def cmd_digitize(args) -> int:
    targets = _batch_targets(args)
    for _sid, pack, mask_dir in targets:
        rgb, meta = read_level(pack, _WORK_DS)
        tissue = load_mask(mask_dir / "tissue.png")
        pen = load_mask(mask_dir / "pen.png")
        labels = build_label_mask(
            tissue, pen, rgb, float(meta["pixel_size_um"]), grade_coded=not args.plain_ink
        )
        if not args.no_refine:
            labels = refine_label_mask(labels, tissue, float(meta["pixel_size_um"]))
        save_mask(labels, mask_dir / "labels.png")
    if args.work:
        _runlog(Path(args.work), {"command": "digitize", "slides": len(targets)})
    _emit({"command": "digitize", "slides": len(targets)})
    return 0


def cmd_extract(args) -> int:
    if args.pack:
        pack = Path(args.pack)
        mask_dir = Path(args.masks) if args.masks else None
        if mask_dir is None:
            raise ValueError("--pack mode needs --masks")
        out_dir = Path(args.out) if args.out else Path(args.work) / "patches"
        targets = [(pack.name, pack, mask_dir, out_dir)]
    else:
        if not args.dataset or not args.work:
            raise ValueError("provide either --pack or --dataset with --work")
        dataset = Path(args.dataset)
        work = Path(args.work)
        rows = _slide_rows(dataset, _ids_or_all(args))
        targets = [
            (
                row["slide_id"],
                dataset / row["path"],
                work / "masks" / row["slide_id"],
                work / "patches",
            )
            for row in rows
        ]
    cfg = PatchGridConfig(min_tissue_frac=args.min_tissue_frac)
    n_patches = 0
    for sid, pack, mask_dir, out_dir in targets:
        pyr = load_slidepack(pack)
        tissue = load_mask(mask_dir / "tissue.png")
        pen = load_mask(mask_dir / "pen.png")
        labels = load_mask(mask_dir / "labels.png")
        side, _stride = cfg.window_base_px(pyr.pixel_size_um)
        coords = plan_patch_grid(tissue, cfg, pyr.width, pyr.height, pyr.pixel_size_um)
        stack = (
            np.zeros((len(coords), cfg.patch_px, cfg.patch_px, 3), dtype=np.uint8)
            if args.pixels
            else None
        )
        rows_out = []
        feats = np.zeros((len(coords), 42), dtype=np.float64)
        for k, (x, y) in enumerate(coords):
            patch = extract_patch(pyr, x, y, cfg, tissue=tissue, pen=pen)
            if stack is not None:
                stack[k] = patch
            feats[k] = extract_patch_features(patch)
            rows_out.append(
                {
                    "slide_id": sid,
                    "x": int(x),
                    "y": int(y),
                    "side": int(side),
                    "label": label_patch(labels, tissue, x, y, side),
                }
            )
        save_patch_archive(out_dir, sid, stack, rows_out, features=feats)
        n_patches += len(coords)
    if args.work:
        _runlog(
            Path(args.work),
            {"command": "extract", "slides": len(targets), "patches": n_patches},
        )
    _emit({"command": "extract", "slides": len(targets), "patches": n_patches})
    return 0


# -- patch models --------------------------------------------------------------


def _load_slide_features(work: Path, sid: str) -> tuple[np.ndarray, list[dict]]:
    rows = [
        json.loads(line)
        for line in (work / "patches" / f"{sid}.jsonl").read_text().splitlines()
        if line
    ]
    feats = np.load(feature_cache_path(work / "patches", sid))
    if len(feats) != len(rows):
        raise ValueError(f"feature cache out of sync for slide {sid}")
    return feats, rows


def cmd_train_patch(args) -> int:
    work = Path(args.work)
    dataset = Path(args.dataset)
    ids = _read_ids(args.ids)
    patterns = {
        row["slide_id"]: tuple(row.get("patterns", ()))
        for row in _slide_rows(dataset, None)
    }
    feats_all, labels_all, sids_all = [], [], []
    for sid in ids:
        feats, rows = _load_slide_features(work, sid)
        feats_all.append(feats)
        labels_all.extend(row["label"] for row in rows)
        sids_all.extend([sid] * len(rows))
    features = np.concatenate(feats_all) if feats_all else np.zeros((0, 42))
    labels = np.asarray(labels_all, dtype=np.int64)
    cls, keep = assemble_stage_classes(labels, args.stage, np.asarray(sids_all), patterns)
    if not keep.any():
        raise ValueError("no trainable patches for this stage")
    members = train_patch_ensemble(
        features[keep],
        cls[keep],
        args.stage,
        n_members=args.members,
        epochs=args.epochs,
        seed=args.seed if args.seed is not None else 0,
    )
    out = work / "models" / f"patch_{args.stage}.json"
    save_patch_ensemble(out, members)
    _runlog(
        work,
        {
            "command": "train-patch",
            "stage": args.stage,
            "members": args.members,
            "patches": int(keep.sum()),
        },
    )
    _emit(
        {
            "command": "train-patch",
            "stage": args.stage,
            "patches": int(keep.sum()),
            "model": str(out),
        }
    )
    return 0


def cmd_predict_patch(args) -> int:
    work = Path(args.work)
    ids = _read_ids(args.ids)
    members = load_patch_ensemble(work / "models" / f"patch_{args.stage}.json")
    cached = [(sid, *_load_slide_features(work, sid)) for sid in ids]
    for i, member in enumerate(members):
        mats = []
        for sid, feats, rows in cached:
            coords = np.asarray([(r["x"], r["y"]) for r in rows], dtype=np.int64)
            mats.append(predict_prob_matrix(member, feats, coords.reshape(-1, 2), sid))
        write_prob_matrices(work / "probs" / args.stage / f"member_{i:02d}.jsonl", mats)
    _runlog(
        work,
        {"command": "predict-patch", "stage": args.stage, "slides": len(ids)},
    )
    _emit({"command": "predict-patch", "stage": args.stage, "slides": len(ids)})
    return 0


# -- slide heads ----------------------------------------------------------------


def cmd_train_slide(args) -> int:
    work = Path(args.work)
    dataset = Path(args.dataset)
    ids = _read_ids(args.ids)
    truth = _truth_by_id(dataset)
    missing = [i for i in ids if i not in truth]
    if missing:
        raise ValueError(f"slides missing from truth: {', '.join(missing[:5])}")
    det_features = _member_slide_features(work, "detection", ids)
    grade_features = _member_slide_features(work, "grading", ids)
    malignant = np.asarray([truth[i]["label"] for i in ids], dtype=np.int64)
    length = np.asarray([truth[i]["length_mm"] for i in ids], dtype=np.float64)

    detection = train_detection_heads(det_features, malignant)
    scores = detection.predict(det_features)
    detection.threshold = calibrate_threshold(
        scores, malignant, args.target_sensitivity
    )
    detection.save(work / "heads" / "detection")

    length_heads = train_length_heads(det_features, length)
    length_heads.save(work / "heads" / "length")

    mal_rows = np.flatnonzero(malignant == 1)
    if len(mal_rows) == 0:
        raise ValueError("no malignant slides to train grading on")
    isup = np.asarray([truth[ids[r]]["grade"] for r in mal_rows], dtype=np.int64)
    grading = train_grading_heads([f[mal_rows] for f in grade_features], isup)
    grading.save(work / "heads" / "grading")

    _runlog(
        work,
        {
            "command": "train-slide",
            "slides": len(ids),
            "threshold": detection.threshold,
        },
    )
    _emit(
        {
            "command": "train-slide",
            "slides": len(ids),
            "threshold": detection.threshold,
        }
    )
    return 0


def cmd_predict_slide(args) -> int:
    work = Path(args.work)
    ids = _read_ids(args.ids)
    detection = HeadEnsemble.load(work / "heads" / "detection")
    length = HeadEnsemble.load(work / "heads" / "length")
    grading = HeadEnsemble.load(work / "heads" / "grading")
    det_features = _member_slide_features(work, "detection", ids)
    grade_features = _member_slide_features(work, "grading", ids)
    out = Path(args.out) if args.out else work / "predictions.jsonl"
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        for k, sid in enumerate(ids):
            row = predict_slide(
                sid,
                [f[k] for f in det_features],
                [f[k] for f in grade_features],
                detection,
                length,
                grading,
            )
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    _runlog(work, {"command": "predict-slide", "slides": len(ids)})
    _emit({"command": "predict-slide", "slides": len(ids), "out": str(out)})
    return 0


# -- evaluation -------------------------------------------------------------------


def cmd_evaluate(args) -> int:
    work = Path(args.work)
    dataset = Path(args.dataset)
    ids = _read_ids(args.ids)
    truth = _truth_by_id(dataset)
    pred_path = Path(args.predictions) if args.predictions else work / "predictions.jsonl"
    preds = {}
    for line in pred_path.read_text().splitlines():
        if line:
            row = json.loads(line)
            preds[row["slide_id"]] = row
    missing = [i for i in ids if i not in preds or i not in truth]
    if missing:
        raise ValueError(
            f"id mismatch: no prediction or truth for {', '.join(missing[:5])}"
        )

    scores = np.asarray([preds[i]["p_malignant"] for i in ids])
    labels = np.asarray([truth[i]["label"] for i in ids])
    pred_len = np.asarray([preds[i]["length_mm"] for i in ids])
    true_len = np.asarray([truth[i]["length_mm"] for i in ids])
    man_ids = np.asarray([truth[i]["man_id"] for i in ids])
    true_grade = np.asarray([truth[i]["grade"] for i in ids])

    detection = HeadEnsemble.load(work / "heads" / "detection")
    thr = detection.threshold
    if thr is None:
        raise ValueError("detection heads carry no calibrated threshold")

    mal = labels == 1
    kappa = None
    kappa_grouped = None
    confusion = None
    if mal.any():
        pg = np.asarray([preds[i]["grade_if_malignant"] for i in ids])[mal]
        tg = true_grade[mal]
        cm = confusion_matrix(tg, pg, categories=[1, 2, 3, 4, 5])
        confusion = cm.tolist()
        kappa = weighted_kappa(cm)
        kappa_grouped = weighted_kappa(
            confusion_matrix(group_isup(tg), group_isup(pg), categories=[1, 2, 3])
        )

    men = {}
    for i in ids:
        men.setdefault(truth[i]["man_id"], []).append(i)
    missed_men = 0
    for man, slides in men.items():
        pos = [i for i in slides if truth[i]["label"] == 1]
        if pos and all(preds[i]["p_malignant"] < thr for i in pos):
            missed_men += 1

    report = {
        "n_slides": len(ids),
        "n_malignant": int(mal.sum()),
        "threshold": thr,
        "detection": {
            "auc": roc_auc(scores, labels),
            "sensitivity": float(
                np.sum((scores >= thr) & mal) / max(int(mal.sum()), 1)
            ),
            "specificity": float(
                np.sum((scores < thr) & ~mal) / max(int((~mal).sum()), 1)
            ),
        },
        "length": {
            "pearson": pearson(pred_len, true_len),
            "mean_abs_error_mm": float(np.abs(pred_len - true_len).mean()),
        },
        "grading": {
            "kappa_malignant": kappa,
            "kappa_grouped": kappa_grouped,
            "confusion": confusion,
        },
        "men": {"n": len(men), "missed_at_threshold": missed_men},
        "operating": operating_table(
            scores, labels, np.where(mal, true_grade, 0), man_ids, args.targets
        ),
    }
    out = Path(args.out) if args.out else work / "report.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report, sort_keys=True, indent=1) + "\n")
    _runlog(work, {"command": "evaluate", "slides": len(ids)})
    _emit({"command": "evaluate", "out": str(out), "auc": report["detection"]["auc"]})
    return 0


# -- rendering ---------------------------------------------------------------------


def cmd_render(args) -> int:
    work = Path(args.work)
    dataset = Path(args.dataset)
    sid = args.slide
    rows = [r for r in _slide_rows(dataset, None) if r["slide_id"] == sid]
    if not rows:
        raise ValueError(f"slide not in manifest: {sid}")
    pack = dataset / rows[0]["path"]
    meta = load_meta(pack)

    def member_mats(stage):
        mats = []
        for path in _member_prob_files(work, stage):
            mine = [pm for pm in read_prob_matrices(path, stage) if pm.slide_id == sid]
            if not mine:
                raise ValueError(f"no probabilities for slide {sid} in {path.name}")
            mats.append(mine[0])
        return mats

    cfg = PatchGridConfig()
    side, _ = cfg.window_base_px(float(meta["pixel_size_um"]))
    mask = build_confidence_mask(
        member_mats("detection"),
        member_mats("grading"),
        side,
        int(meta["width"]),
        int(meta["height"]),
        out_downsample=args.downsample,
    )
    out_dir = Path(args.out) if args.out else work / "renders"
    out_dir.mkdir(parents=True, exist_ok=True)
    from PIL import Image

    Image.fromarray(mask, mode="RGB").save(out_dir / f"{sid}.mask.png")
    pyr = load_slidepack(pack)
    overlay = render_overlay(pyr, mask, args.downsample, alpha=args.alpha)
    Image.fromarray(overlay, mode="RGB").save(out_dir / f"{sid}.overlay.png")
    _runlog(work, {"command": "render", "slide": sid})
    _emit({"command": "render", "slide": sid, "out": str(out_dir / f"{sid}.overlay.png")})
    return 0


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="corepath",
        description="Prostate biopsy analysis pipeline on synthetic slide packs.",
    )
    parser.add_argument(
        "--jobs",
        type=int,
        default=1,
        help="worker count accepted for interface stability; execution is serial",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON file overriding dataset recipe fields")
    p.add_argument("--seed", type=int, default=None)
    for flag, title in (
        ("--benign", "benign"),
        ("--isup1", "ISUP 1"),
        ("--isup2", "ISUP 2"),
        ("--isup3", "ISUP 3"),
        ("--isup4", "ISUP 4"),
        ("--isup5", "ISUP 5"),
    ):
        p.add_argument(
            flag,
            type=int,
            default=None,
            help=f"{title} slide count; any count flag zeroes the other grades",
        )
    p.add_argument("--test-fraction", type=float, default=None)
    p.add_argument("--split-seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    for name, func, helptext in (
        ("segment", cmd_segment, "tissue and pen mask extraction"),
        ("digitize", cmd_digitize, "project pen marks into label masks"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--pack", help="single slide pack directory")
        p.add_argument("--out", help="mask output directory (single-pack mode)")
        p.add_argument("--dataset", help="dataset directory with manifest.json")
        p.add_argument("--work", help="pipeline work directory")
        p.add_argument("--ids", help="file with one slide id per line")
        if name == "digitize":
            p.add_argument(
                "--plain-ink",
                action="store_true",
                help="ignore ink color; mark cancer without a grade",
            )
            p.add_argument("--no-refine", action="store_true")
        p.set_defaults(func=func)

    p = sub.add_parser("extract", help="extract patches and cache features")
    p.add_argument("--pack")
    p.add_argument("--masks", help="mask directory (single-pack mode)")
    p.add_argument("--out", help="patch output directory (single-pack mode)")
    p.add_argument("--dataset")
    p.add_argument("--work")
    p.add_argument("--ids")
    p.add_argument("--min-tissue-frac", type=float, default=0.5)
    p.add_argument(
        "--pixels",
        action="store_true",
        help="also persist raw patch pixels (large); features always cached",
    )
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train-patch", help="train a patch classifier stage")
    p.add_argument("--dataset", required=True)
    p.add_argument("--work", required=True)
    p.add_argument("--ids", required=True)
    p.add_argument("--stage", choices=sorted(STAGE_CLASSES), required=True)
    p.add_argument("--members", type=int, default=5)
    p.add_argument("--epochs", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train_patch)

    p = sub.add_parser("predict-patch", help="write per-member patch probabilities")
    p.add_argument("--work", required=True)
    p.add_argument("--ids", required=True)
    p.add_argument("--stage", choices=sorted(STAGE_CLASSES), required=True)
    p.set_defaults(func=cmd_predict_patch)

    p = sub.add_parser("train-slide", help="train detection, length, grading heads")
    p.add_argument("--dataset", required=True)
    p.add_argument("--work", required=True)
    p.add_argument("--ids", required=True)
    p.add_argument("--target-sensitivity", type=float, default=0.99)
    p.set_defaults(func=cmd_train_slide)

    p = sub.add_parser("predict-slide", help="fuse heads into slide predictions")
    p.add_argument("--work", required=True)
    p.add_argument("--ids", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_predict_slide)

    p = sub.add_parser("evaluate", help="score predictions against truth")
    p.add_argument("--dataset", required=True)
    p.add_argument("--work", required=True)
    p.add_argument("--ids", required=True)
    p.add_argument("--predictions")
    p.add_argument("--out")
    p.add_argument(
        "--targets",
        type=float,
        nargs="+",
        default=[0.9, 0.95, 0.99, 1.0],
        help="target sensitivities for the operating table",
    )
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("render", help="confidence mask and overlay for one slide")
    p.add_argument("--dataset", required=True)
    p.add_argument("--work", required=True)
    p.add_argument("--slide", required=True)
    p.add_argument("--out")
    p.add_argument("--downsample", type=int, default=16)
    p.add_argument("--alpha", type=float, default=0.5)
    p.set_defaults(func=cmd_render)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return 2
    try:
        return int(args.func(args) or 0)
    except (ValueError, OSError, KeyError) as exc:
        msg = str(exc) or exc.__class__.__name__
        print(f"error: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
