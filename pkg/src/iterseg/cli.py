"""Command line entry points.

Subcommands: generate-data, train, infer, evaluate, gradcheck, probe.
Exit codes: 0 success, 1 check failure, 2 I/O refusal or bad config,
3 training divergence, 4 corrupt checkpoint, 5 data mismatch.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_mod
from . import data, engine, metrics, model, netpbm, postprocess
from .config import RunConfig, load_config, render_config
from .errors import (CheckpointError, ConfigError, DataError,
                     DatasetMismatchError, RefusalError, TrainingDiverged)

FLOAT_FMT = "%.17g"


def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1)


def _sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _load_run_config(args) -> RunConfig:
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "superpixels", None) is not None:
        overrides["use_superpixels"] = args.superpixels == "on"
    if args.config is not None:
        return load_config(args.config, overrides)
    from .config import parse_config
    return parse_config("", overrides)


def _prepare_out(path_str: str, force: bool) -> Path:
    out = Path(path_str)
    if out.exists():
        if not out.is_dir():
            raise RefusalError(f"output path {out} exists and is not a directory")
        if any(out.iterdir()) and not force:
            raise RefusalError(
                f"output directory {out} is not empty; pass --force to reuse"
            )
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_test"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise RefusalError(f"output directory {out} is not writable: {exc}")
    return out


def _write_manifest(out: Path, payload: dict):
    (out / "run_manifest.json").write_text(_canonical_json(payload))


def _manifest_base(command: str, cfg: RunConfig) -> dict:
    text = render_config(cfg)
    return {
        "command": command,
        "config": text,
        "config_sha256": _sha256_text(text),
    }


# ---------------------------------------------------------------- generate


def cmd_generate_data(args) -> int:
    cfg = _load_run_config(args)
    out = _prepare_out(args.out, args.force)
    seed = cfg.data_seed if args.seed is None else args.seed
    manifest = data.build_dataset(cfg.dataset_spec(), seed=seed, out_dir=out)
    payload = _manifest_base("generate-data", cfg)
    payload.update({"seed": seed, "dataset_id": manifest["dataset_id"]})
    _write_manifest(out, payload)
    print(f"dataset {manifest['dataset_id'][:12]} with "
          f"{manifest['train_patches']} train / {manifest['val_patches']} val "
          f"patches in {out}")
    return 0


# ------------------------------------------------------------------- train


def _check_dataset_arch(ds: data.LoadedDataset, cfg: RunConfig):
    if (ds.index["patch_size"] != cfg.patch_size
            or ds.index["heatmap_size"] != cfg.heatmap_size
            or ds.index["num_categories"] != cfg.num_categories):
        raise DatasetMismatchError(
            f"dataset grids (P={ds.index['patch_size']}, "
            f"H={ds.index['heatmap_size']}, C={ds.index['num_categories']}) "
            f"do not match the configured architecture "
            f"(P={cfg.patch_size}, H={cfg.heatmap_size}, "
            f"C={cfg.num_categories})"
        )


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    ds = data.load_dataset(args.dataset)
    _check_dataset_arch(ds, cfg)
    out = _prepare_out(args.out, args.force)
    seed = cfg.seed
    samples = ds.train_samples()
    net = model.init_params(cfg.arch(), seed=seed)
    schedule = cfg.schedule()

    extra_base = {
        "seed": seed,
        "dataset_id": ds.dataset_id,
        "config_sha256": _sha256_text(render_config(cfg)),
    }
    result = engine.train_stages(samples, net, schedule, seed=seed)

    names = []
    for i, snap in enumerate(result.stage_nets, start=1):
        name = f"stage{i}.ckpt"
        ckpt_mod.save_checkpoint(out / name, snap, dict(extra_base, stage=i))
        names.append(name)
    ckpt_mod.save_checkpoint(out / "final.ckpt", result.net,
                             dict(extra_base, stage=schedule.num_stages))
    names.append("final.ckpt")

    with open(out / "loss.csv", "w") as fh:
        fh.write("step,stage,loss\n")
        for rec in result.loss_trace:
            fh.write(f"{rec.step},{rec.stage},{FLOAT_FMT % rec.loss}\n")

    payload = _manifest_base("train", cfg)
    payload.update({
        "seed": seed,
        "dataset_dir": str(Path(args.dataset)),
        "dataset_id": ds.dataset_id,
        "checkpoints": names,
        "loss_csv": "loss.csv",
        "final_loss": result.loss_trace[-1].loss,
    })
    _write_manifest(out, payload)
    print(f"trained {schedule.num_stages} stages "
          f"({len(result.loss_trace)} steps) into {out}")
    return 0


# ------------------------------------------------------------------- infer


def _kept_detections(scene_meta: dict, box_thr: float) -> list:
    class _Box:
        def __init__(self, d):
            self.det_id = d["id"]
            self.score = float(d["score"])
            self.bbox = tuple(d["bbox"])
            self.category = int(d["category"])

    kept = []
    dets = [_Box(d) for d in scene_meta["detections"]]
    for cat in sorted({d.category for d in dets}):
        group = [d for d in dets if d.category == cat]
        kept.extend(postprocess.nms(
            group, lambda a, b: postprocess.box_iou(a.bbox, b.bbox), box_thr))
    return sorted(kept, key=lambda d: d.det_id)


def cmd_infer(args) -> int:
    cfg = _load_run_config(args)
    net, _ = ckpt_mod.load_checkpoint(args.checkpoint)
    ds = data.load_dataset(args.dataset)
    if (ds.index["patch_size"] != net.arch.patch_size
            or ds.index["heatmap_size"] != net.arch.heatmap_size
            or ds.index["num_categories"] != net.arch.num_categories):
        raise DatasetMismatchError(
            "checkpoint architecture does not match the dataset grids"
        )
    if args.split not in ("train", "val", "all"):
        raise ConfigError(f"unknown split {args.split!r}")
    out = _prepare_out(args.out, args.force)
    (out / "regions").mkdir(exist_ok=True)
    (out / "heat").mkdir(exist_ok=True)
    if args.emit_trajectory:
        (out / "trajectories").mkdir(exist_ok=True)

    ckpt_sha = hashlib.sha256(Path(args.checkpoint).read_bytes()).hexdigest()
    patches_by_det = {p["detection"]: p for p in ds.patches_for_split(args.split)}
    scene_ids = sorted({p["scene"] for p in patches_by_det.values()})
    S = ds.index["scene_size"]
    M = cfg.infer_iterations

    entries = []
    for sid in scene_ids:
        meta = ds.scene_meta(sid)
        kept = [d for d in _kept_detections(meta, cfg.box_nms_threshold)
                if d.det_id in patches_by_det]
        if not kept:
            continue
        labels = None
        if cfg.use_superpixels:
            image = ds.load_scene_image(sid).astype(np.float64)
            labels = postprocess.compute_superpixels(
                image, cfg.superpixel_count, cfg.slic_iterations,
                cfg.slic_compactness)
        loaded = [ds.load_patch(patches_by_det[d.det_id]) for d in kept]
        batch = np.stack([p.patch for p in loaded])
        cats = np.array([p.category for p in loaded])
        final, traj = engine.infer_batch(net, batch, cats, M)
        for j, (det, ps) in enumerate(zip(kept, loaded)):
            canvas = postprocess.paste_heatmap(final[j], ps.bbox, S)
            if labels is not None:
                canvas = postprocess.project_to_superpixels(canvas, labels)
            region = postprocess.binarize(canvas)
            netpbm.write_pgm(out / "regions" / f"{det.det_id}.pgm",
                             region.astype(np.uint8) * 255)
            np.save(out / "heat" / f"{det.det_id}.npy", final[j])
            entry = {
                "det_id": det.det_id,
                "scene": sid,
                "category": det.category,
                "score": det.score,
                "bbox": list(det.bbox),
                "patch_bbox": list(ps.bbox),
                "region": f"regions/{det.det_id}.pgm",
                "heat": f"heat/{det.det_id}.npy",
            }
            if args.emit_trajectory:
                arr = np.stack([t[j] for t in traj])
                np.save(out / "trajectories" / f"{det.det_id}.npy", arr)
                entry["trajectory"] = f"trajectories/{det.det_id}.npy"
            entries.append(entry)

    index = {
        "dataset_id": ds.dataset_id,
        "checkpoint_sha256": ckpt_sha,
        "split": args.split,
        "iterations": M,
        "superpixels": cfg.use_superpixels,
        "entries": entries,
    }
    (out / "index.json").write_text(_canonical_json(index))
    payload = _manifest_base("infer", cfg)
    payload.update({
        "checkpoint": str(Path(args.checkpoint)),
        "checkpoint_sha256": ckpt_sha,
        "dataset_dir": str(Path(args.dataset)),
        "dataset_id": ds.dataset_id,
        "split": args.split,
        "num_regions": len(entries),
    })
    _write_manifest(out, payload)
    print(f"{len(entries)} region predictions in {out}")
    return 0


# ---------------------------------------------------------------- evaluate


def _load_predictions(pred_dir: str, ds: data.LoadedDataset
                      ) -> tuple[dict, list[metrics.ScoredRegion]]:
    root = Path(pred_dir)
    index_path = root / "index.json"
    if not index_path.is_file():
        raise RefusalError(f"{root} is not a predictions directory")
    index = json.loads(index_path.read_text())
    if index.get("dataset_id") != ds.dataset_id:
        raise DatasetMismatchError(
            f"predictions in {root} were made for dataset "
            f"{str(index.get('dataset_id'))[:12]}, not {ds.dataset_id[:12]}"
        )
    regions = []
    for e in index["entries"]:
        img = netpbm.read_pgm(root / e["region"])
        bad = ~np.isin(img, (0, 255))
        if bad.any():
            raise DataError(f"{e['region']}: region PGM must be 0/255")
        regions.append(metrics.ScoredRegion(
            det_id=e["det_id"], scene_id=int(e["scene"]),
            category=int(e["category"]), score=float(e["score"]),
            region=img == 255))
    return index, regions


def _region_nms(regions: list[metrics.ScoredRegion], thr: float
                ) -> list[metrics.ScoredRegion]:
    kept: list[metrics.ScoredRegion] = []
    keys = sorted({(r.scene_id, r.category) for r in regions})
    for sid, cat in keys:
        group = [r for r in regions if r.scene_id == sid and r.category == cat]
        kept.extend(postprocess.nms(
            group, lambda a, b: metrics.mask_iou(a.region, b.region), thr))
    return kept


def cmd_evaluate(args) -> int:
    cfg = _load_run_config(args)
    ds = data.load_dataset(args.dataset)
    index, regions = _load_predictions(args.predictions, ds)
    out = _prepare_out(args.out, args.force)

    kept = _region_nms(regions, cfg.region_nms_threshold)
    scene_ids = sorted({r.scene_id for r in regions})
    known = {s["id"] for s in ds.index["scenes"]}
    missing = sorted(set(scene_ids) - known)
    if missing:
        raise DatasetMismatchError(
            f"predictions reference scene ids missing from the dataset: "
            f"{missing}"
        )
    gts = {sid: ds.gt_masks(sid) for sid in scene_ids}
    result = metrics.mean_apr(kept, gts, cfg.ap_iou_thresholds,
                              ds.index["num_categories"])

    report = {
        "dataset_id": ds.dataset_id,
        "split": index["split"],
        "iterations": index["iterations"],
        "num_predictions": len(regions),
        "num_after_region_nms": len(kept),
        "thresholds": list(result.thresholds),
        "ap_per_category": {
            str(t): {str(c): result.per_category[t][c]
                     for c in sorted(result.per_category[t])}
            for t in result.thresholds
        },
        "mean_ap": {str(t): result.mean[t] for t in result.thresholds},
        "num_gt_per_category": {str(c): result.num_gt[c]
                                for c in sorted(result.num_gt)},
        "undefined": [[t, c] for t, c in result.undefined],
    }

    for thr in result.thresholds:
        for cat in sorted(result.per_category[thr]):
            cat_dets = [r for r in kept if r.category == cat]
            cat_gts = {sid: [m for c, m in gts[sid] if c == cat]
                       for sid in gts}
            matched = metrics.match_detections(cat_dets, cat_gts, thr)
            num_gt = sum(len(v) for v in cat_gts.values())
            path = out / f"pr_t{int(round(thr * 100))}_c{cat}.csv"
            with open(path, "w") as fh:
                fh.write("score,tp,precision,recall\n")
                tp = fp = 0
                for det, is_tp in matched:
                    tp += int(is_tp)
                    fp += int(not is_tp)
                    prec = tp / (tp + fp)
                    rec = tp / num_gt if num_gt else 0.0
                    fh.write(f"{FLOAT_FMT % det.score},{int(is_tp)},"
                             f"{FLOAT_FMT % prec},{FLOAT_FMT % rec}\n")

    if args.baseline is not None:
        _, base_regions = _load_predictions(args.baseline, ds)
        scatter = metrics.overlap_scatter(base_regions, regions, gts)
        with open(out / "scatter.csv", "w") as fh:
            fh.write("det_id,iou_baseline,iou_refined\n")
            for det_id, before, after in scatter.points:
                fh.write(f"{det_id},{FLOAT_FMT % before},"
                         f"{FLOAT_FMT % after}\n")
        report["scatter"] = {
            "baseline": str(Path(args.baseline)),
            "improved": scatter.improved,
            "degraded": scatter.degraded,
            "unchanged": scatter.unchanged,
        }

    (out / "eval_report.json").write_text(_canonical_json(report))
    payload = _manifest_base("evaluate", cfg)
    payload.update({
        "predictions_dir": str(Path(args.predictions)),
        "dataset_dir": str(Path(args.dataset)),
        "dataset_id": ds.dataset_id,
    })
    _write_manifest(out, payload)
    means = ", ".join(f"AP@{t:g}={result.mean[t]:.4f}"
                      for t in result.thresholds)
    print(f"{means} over {len(kept)} regions; report in {out}")
    return 0


# --------------------------------------------------------------- gradcheck


def cmd_gradcheck(args) -> int:
    base = 0 if args.seed is None else args.seed
    all_ok = True
    for k in range(args.repeat):
        report = model.run_gradcheck(seed=base + k)
        status = "PASS" if report.passed else "FAIL"
        all_ok &= report.passed
        print(f"seed {base + k}: max rel err {report.max_rel_err:.3e} "
              f"over {len(report.rows)} parameter arrays [{status}]")
    if args.self_test_corrupt:
        report = model.run_gradcheck(seed=base, corrupt=True)
        caught = not report.passed
        all_ok &= caught
        print(f"corruption self-test: {'caught' if caught else 'MISSED'} "
              f"(max rel err {report.max_rel_err:.3e})")
    return 0 if all_ok else 1


# ------------------------------------------------------------------- probe


def cmd_probe(args) -> int:
    cfg = _load_run_config(args)
    net, _ = ckpt_mod.load_checkpoint(args.checkpoint)
    ds = data.load_dataset(args.dataset)
    out = _prepare_out(args.out, args.force)

    val = ds.patches_for_split("val")
    if not val:
        raise DataError("dataset has no validation patches to probe")
    rng = np.random.default_rng(cfg.seed if args.seed is None else args.seed)
    order = rng.permutation(len(val))[:args.count]
    C = net.arch.num_categories

    mats = []
    chosen = []
    for pos in order:
        ps = ds.load_patch(val[int(pos)])
        mat = metrics.category_swap_probe(net, ps.patch,
                                          iterations=cfg.infer_iterations)
        mats.append(mat)
        chosen.append(ps.sample_id)
    mean_mat = np.mean(mats, axis=0)
    off = ~np.eye(C, dtype=bool)
    report = {
        "checkpoint": str(Path(args.checkpoint)),
        "dataset_id": ds.dataset_id,
        "num_patches": len(chosen),
        "patches": chosen,
        "iterations": cfg.infer_iterations,
        "mean_distance_matrix": [[float(v) for v in row] for row in mean_mat],
        "mean_offdiag_distance": float(mean_mat[off].mean()),
    }
    (out / "probe_report.json").write_text(_canonical_json(report))
    print(f"mean off-diagonal heatmap distance "
          f"{report['mean_offdiag_distance']:.4f} over {len(chosen)} patches")
    return 0


# -------------------------------------------------------------------- main


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="iterseg")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, seed_help="override the config seed"):
        p.add_argument("--config", help="path to a key = value config file")
        p.add_argument("--seed", type=int, help=seed_help)
        p.add_argument("--force", action="store_true",
                       help="reuse a non-empty output directory")

    p = sub.add_parser("generate-data", help="build a synthetic dataset")
    common(p, "override the dataset seed")
    p.add_argument("--out", required=True, help="dataset output directory")
    p.set_defaults(fn=cmd_generate_data)

    p = sub.add_parser("train", help="run staged training")
    common(p)
    p.add_argument("dataset", help="dataset directory")
    p.add_argument("--out", required=True, help="run output directory")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("infer", help="predict regions for a split")
    common(p)
    p.add_argument("checkpoint", help="model checkpoint")
    p.add_argument("dataset", help="dataset directory")
    p.add_argument("--out", required=True, help="predictions directory")
    p.add_argument("--split", default="val", choices=("train", "val", "all"))
    p.add_argument("--emit-trajectory", action="store_true",
                   help="also store per-iteration heatmaps")
    p.add_argument("--superpixels", choices=("on", "off"),
                   help="override config use_superpixels")
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("evaluate", help="score predictions against a dataset")
    common(p)
    p.add_argument("predictions", help="predictions directory from infer")
    p.add_argument("dataset", help="dataset directory")
    p.add_argument("--out", required=True, help="report directory")
    p.add_argument("--baseline",
                   help="second predictions directory for the overlap scatter")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p.add_argument("--seed", type=int, help="base seed (default 0)")
    p.add_argument("--repeat", type=int, default=10,
                   help="number of seeds to check")
    p.add_argument("--self-test-corrupt", action="store_true",
                   help="verify the checker flags corrupted gradients")
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("probe", help="category-swap sensitivity probe")
    common(p, "override the probe sampling seed")
    p.add_argument("checkpoint", help="model checkpoint")
    p.add_argument("dataset", help="dataset directory")
    p.add_argument("--out", required=True, help="probe report directory")
    p.add_argument("--count", type=int, default=20,
                   help="number of validation patches to probe")
    p.set_defaults(fn=cmd_probe)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (RefusalError, TrainingDiverged, CheckpointError,
            DatasetMismatchError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 5
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
