"""Command-line front end.

Verbs::

    kcscreen synth --n-control 25 --n-kc 25 --seed 1 --out corpus/
    kcscreen train-segmenter --corpus corpus/ --out tree.json
    kcscreen train --corpus corpus/ --out models/
    kcscreen diagnose --models models/ --out diag/ (IMAGE | --corpus corpus/)
    kcscreen report --corpus corpus/ --models models/ --diagnoses diag/ --out report.json

Exit codes: 0 ok, 2 usage or I/O, 3 preprocessing, 4 degenerate data,
5 no center disc, 6 no measurable gaps.
"""

from __future__ import annotations

import argparse
import functools
import hashlib
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from importlib import metadata
from pathlib import Path

import numpy as np

from . import localize, pipeline, stats, synth
from .classify import FewerDistinctPointsThanK, KMeansModel
from .config import PipelineConfig, load_config
from .geometry import NoCenterDisc
from .raster import read_image, read_pbm, write_pbm, write_png
from .segmenter import ClassificationTree

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_PREPROCESS = 3
EXIT_DEGENERATE = 4
EXIT_NO_DISC = 5
EXIT_NO_GAPS = 6

MODEL_FILES = ("tree.json", "kmeans.json", "logistic.json")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _clean(obj):
    """JSON-safe copy: NaN and infinities become null."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return float(obj) if np.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


# --- corpus on disk -------------------------------------------------------------

def _truth_mask(truth_path: Path, mask_path: Path):
    if mask_path.exists():
        return read_pbm(mask_path)
    return synth.noiseless_mask(synth.load_truth(truth_path).scene)


def load_corpus(corpus_dir) -> list[pipeline.Scene]:
    """Scenes listed in ``manifest.json``, with lazy (and picklable) loaders.

    A ``mask.pbm`` next to an image takes precedence over the mask rebuilt
    from ``truth.json``.
    """
    root = Path(corpus_dir)
    manifest = root / "manifest.json"
    if not manifest.exists():
        raise CliError(EXIT_USAGE, f"no manifest.json in {root}")
    try:
        entries = json.loads(manifest.read_text())["scenes"]
    except (ValueError, KeyError) as exc:
        raise CliError(EXIT_USAGE, f"malformed manifest {manifest}: {exc}") from exc
    scenes = []
    for e in entries:
        img = root / e["image"]
        if not img.exists():
            raise CliError(EXIT_USAGE, f"missing image {img}")
        truth = root / e["truth"] if e.get("truth") else None
        mask = img.parent / "mask.pbm"
        loader = functools.partial(_truth_mask, truth, mask) if truth is not None else None
        if loader is None and mask.exists():
            loader = functools.partial(read_pbm, mask)
        scenes.append(pipeline.Scene(e["id"], e["label"], functools.partial(read_image, img), loader,
                                     truth))
    return scenes


def _truth_of(scene: pipeline.Scene):
    return synth.load_truth(scene.truth) if scene.truth is not None else None


def save_models(models: pipeline.Models, out_dir: Path) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    models.tree.save(out_dir / "tree.json")
    models.kmeans.save(out_dir / "kmeans.json")
    models.logistic.save(out_dir / "logistic.json")
    return {name: _sha256(out_dir / name) for name in MODEL_FILES}


def load_models(models_dir) -> tuple[pipeline.Models, dict]:
    root = Path(models_dir)
    missing = [n for n in MODEL_FILES if not (root / n).exists()]
    if missing:
        raise CliError(EXIT_USAGE, f"missing model files in {root}: {', '.join(missing)}")
    try:
        models = pipeline.Models(
            ClassificationTree.load(root / "tree.json"),
            KMeansModel.load(root / "kmeans.json"),
            localize.LogisticModel.load(root / "logistic.json"),
        )
    except (ValueError, KeyError) as exc:
        raise CliError(EXIT_USAGE, f"unreadable model files in {root}: {exc}") from exc
    return models, {n: _sha256(root / n) for n in MODEL_FILES}


# --- commands -------------------------------------------------------------------

def cmd_synth(args, config: PipelineConfig) -> int:
    if args.n_control < 1:
        raise CliError(EXIT_USAGE, "need ≥1 control")
    if args.n_kc < 1:
        raise CliError(EXIT_USAGE, "need ≥1 kc")
    specs = synth.corpus_specs(args.n_control, args.n_kc, rng_seed=config.seed)
    try:
        manifest = synth.export_corpus(args.out, specs)
    except OSError as exc:
        raise CliError(EXIT_USAGE, f"cannot write corpus: {exc}") from exc
    print(f"wrote {len(specs)} scenes, manifest {manifest}")
    return EXIT_OK


def cmd_train_segmenter(args, config: PipelineConfig) -> int:
    scenes = load_corpus(args.corpus)
    try:
        tree, acc, held = pipeline.train_segmenter(scenes, config)
    except (pipeline.DegenerateData, ValueError) as exc:
        raise CliError(EXIT_DEGENERATE, str(exc)) from exc
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    tree.save(out)
    metrics = {"pixel_accuracy": acc, "heldout_scenes": held, "depth": tree.depth,
               "seed": config.seed, "version": version()}
    _dump(out.with_name(out.stem + "_metrics.json"), metrics)
    print("held-out pixel accuracy: " + ", ".join(f"{k} {v:.4f}" for k, v in acc.items()))
    return EXIT_OK


def cmd_train(args, config: PipelineConfig) -> int:
    scenes = load_corpus(args.corpus)
    try:
        models, metrics, _ = pipeline.train_all(scenes, config)
    except pipeline.PreprocessingFailed as exc:
        lines = "\n".join(f"  {k}: {v}" for k, v in exc.failures.items())
        raise CliError(EXIT_PREPROCESS, f"preprocessing failed:\n{lines}") from exc
    except (pipeline.DegenerateData, localize.SingleClassData, FewerDistinctPointsThanK,
            stats.InsufficientSamples) as exc:
        raise CliError(EXIT_DEGENERATE, str(exc)) from exc
    except localize.NonConvergence as exc:
        raise CliError(EXIT_DEGENERATE, f"logistic fit did not converge: {exc}") from exc
    out = Path(args.out)
    hashes = save_models(models, out)
    metrics["provenance"] = {"version": version(), "seed": config.seed, "models": hashes,
                             "config": config.to_dict()}
    _dump(out / "metrics.json", _clean(metrics))
    print(f"pixel accuracy      {metrics['pixel_accuracy']}")
    print(f"clustering accuracy {metrics['clustering_accuracy']:.4f}")
    print(f"cell accuracy       {metrics['cell_accuracy']:.4f}")
    print(f"models written to {out}")
    return EXIT_OK


def diagnose_to_dir(image_path, models: pipeline.Models, hashes: dict, out_dir: Path,
                    config: PipelineConfig, scene_id: str | None = None) -> tuple[int, dict]:
    """Diagnose one image and write ``report.json`` (+ CSV, heatmap, mask).

    Returns the exit code and the report.  On :class:`NoCenterDisc` a report
    with only the error is written.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    scene_id = scene_id or Path(image_path).parent.name
    report = {"scene_id": scene_id, "image": str(image_path),
              "provenance": {"version": version(), "seed": config.seed, "models": hashes}}
    try:
        image = read_image(image_path)
    except (OSError, ValueError) as exc:
        raise CliError(EXIT_USAGE, f"cannot read {image_path}: {exc}") from exc
    try:
        diag = pipeline.diagnose(image, models, config)
    except NoCenterDisc as exc:
        report["error"] = f"no center disc: {exc}"
        _dump(out_dir / "report.json", report)
        return EXIT_NO_DISC, report
    write_pbm(out_dir / "mask.pbm", diag.pre.mask)
    report["stage1"] = {"label": diag.label, "width": diag.width, "height": diag.height,
                        "margin": diag.margin}
    if diag.matrix is None:
        report["error"] = f"no measurable gaps: {diag.stage2_error}"
        _dump(out_dir / "report.json", _clean(report))
        return EXIT_NO_GAPS, report
    lr = models.logistic
    diag.matrix.save_csv(out_dir / "matrix.csv")
    write_png(out_dir / "heatmap.png",
              localize.render_colormap(diag.matrix, config.heatmap_size, lr.d_min, lr.d_max))
    report["stage2"] = {
        "logistic": {"beta0": lr.beta0, "beta1": lr.beta1, "threshold": lr.threshold},
        "cells": diag.cell_summary(),
        "hotspot": diag.hotspot.to_dict(),
        "matrix_csv": "matrix.csv",
        "heatmap_png": "heatmap.png",
    }
    _dump(out_dir / "report.json", _clean(report))
    return EXIT_OK, report


def _diagnose_worker(item, models_dir, out_root, config):
    scene_id, image = item
    models, hashes = load_models(models_dir)
    code, _ = diagnose_to_dir(image, models, hashes, Path(out_root) / scene_id, config, scene_id)
    return scene_id, code


def cmd_diagnose(args, config: PipelineConfig) -> int:
    out = Path(args.out)
    if args.corpus is None and args.image is None:
        raise CliError(EXIT_USAGE, "give an image path or --corpus")
    if args.corpus is None:
        models, hashes = load_models(args.models)
        code, report = diagnose_to_dir(args.image, models, hashes, out, config)
        _print_diagnosis(report)
        return code

    root = Path(args.corpus)
    manifest = root / "manifest.json"
    if not manifest.exists():
        raise CliError(EXIT_USAGE, f"no manifest.json in {root}")
    items = [(e["id"], root / e["image"]) for e in json.loads(manifest.read_text())["scenes"]]
    load_models(args.models)  # fail early on missing models
    work = functools.partial(_diagnose_worker, models_dir=args.models, out_root=out, config=config)
    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            codes = list(pool.map(work, items))
    else:
        codes = [work(it) for it in items]
    failed = [(sid, c) for sid, c in codes if c != EXIT_OK]
    _dump(out / "index.json", {"scenes": [{"id": sid, "exit_code": c} for sid, c in codes]})
    print(f"diagnosed {len(codes)} scenes, {len(failed)} failed")
    for sid, c in failed:
        print(f"  {sid}: exit {c}", file=sys.stderr)
    return failed[0][1] if failed else EXIT_OK


def _print_diagnosis(report: dict) -> None:
    if "stage1" in report:
        s1 = report["stage1"]
        print(f"stage 1: {s1['label']}  (width {s1['width']:.0f}, height {s1['height']:.0f}, "
              f"margin {s1['margin']:.3f})")
    if "stage2" in report:
        hs = report["stage2"]["hotspot"]
        if hs["n_cells"]:
            print(f"hotspot: center {hs['center_angle']:.1f} deg, rays {hs['angle_range']}, "
                  f"gaps {hs['gap_indices']}, severity {hs['severity']:.3f}")
        else:
            print("hotspot: none")
    if "error" in report:
        print(f"error: {report['error']}", file=sys.stderr)


def corpus_report(corpus_dir, models_dir, diagnoses_dir) -> dict:
    """Aggregate per-scene diagnoses into group statistics and accuracies."""
    scenes = load_corpus(corpus_dir)
    models, hashes = load_models(models_dir)
    droot = Path(diagnoses_dir)
    rows, missing = [], []
    for s in scenes:
        path = droot / s.scene_id / "report.json"
        if not path.exists():
            missing.append(s.scene_id)
            continue
        rows.append((s, json.loads(path.read_text())))
    if missing:
        raise CliError(EXIT_USAGE, f"missing diagnoses for: {', '.join(missing)}")

    stage1 = [(s.label, r["stage1"]["label"]) for s, r in rows if "stage1" in r]
    dist = {pipeline.CONTROL: [], pipeline.KC: []}
    correct = total = 0
    for s, r in rows:
        if "stage2" not in r:
            continue
        m = localize.DistanceMatrix.load_csv(droot / s.scene_id / r["stage2"]["matrix_csv"])
        vals = m.values[~np.isnan(m.values)]
        dist[s.label].append(vals)
        pred = models.logistic.proba(vals) >= models.logistic.threshold
        correct += int(np.sum(pred == (s.label == pipeline.KC)))
        total += vals.size
    kc = np.concatenate(dist[pipeline.KC]) if dist[pipeline.KC] else np.empty(0)
    ctrl = np.concatenate(dist[pipeline.CONTROL]) if dist[pipeline.CONTROL] else np.empty(0)
    try:
        test = stats.compare_groups(kc, ctrl).to_dict()
    except stats.InsufficientSamples as exc:
        raise CliError(EXIT_DEGENERATE, str(exc)) from exc
    report = {
        "n_scenes": len(rows),
        "n_failed": sum("error" in r for _, r in rows),
        "clustering_accuracy": float(np.mean([a == b for a, b in stage1])) if stage1 else None,
        "cell_accuracy": correct / total if total else None,
        "test": test,
        "box": {pipeline.KC: stats.box_stats(kc).to_dict(),
                pipeline.CONTROL: stats.box_stats(ctrl).to_dict()},
        "provenance": {"version": version(), "models": hashes},
    }
    metrics = Path(models_dir) / "metrics.json"
    if metrics.exists():
        report["training"] = {k: v for k, v in json.loads(metrics.read_text()).items()
                              if k in ("pixel_accuracy", "clustering_accuracy", "cell_accuracy")}
    return _clean(report)


def format_table(report: dict) -> str:
    t = report["test"]
    box = report["box"]

    def num(v, fmt):
        return "n/a" if v is None else format(v, fmt)

    rows = [
        ("t-score", num(t["t_score"], ".4f")),
        ("degrees of freedom", num(t["df"], ".1f")),
        ("p-value", t["p_display"]),
        ("effect size t/sqrt(n1+n2)", num(t["effect_size_t"], ".4f")),
        ("Cohen's d", num(t["cohens_d"], ".4f")),
        ("cells (kc / control)", f"{t['n1']} / {t['n2']}"),
        ("median distance kc", num(box["kc"]["median"], ".2f")),
        ("median distance control", num(box["control"]["median"], ".2f")),
        ("clustering accuracy", num(report["clustering_accuracy"], ".4f")),
        ("logistic regression accuracy", num(report["cell_accuracy"], ".4f")),
    ]
    width = max(len(k) for k, _ in rows)
    return "\n".join(f"{k:<{width}}  {v}" for k, v in rows) + "\n"


def cmd_report(args, config: PipelineConfig) -> int:
    report = corpus_report(args.corpus, args.models, args.diagnoses)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _dump(out, report)
    table = format_table(report)
    out.with_suffix(".txt").write_text(table)
    print(table, end="")
    return EXIT_OK


# --- argument parsing -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file overriding the packaged defaults")
    common.add_argument("--seed", type=int, help="random seed (default: KC_SEED or the config)")
    common.add_argument("--workers", type=int, help="worker processes for corpus commands")

    p = argparse.ArgumentParser(prog="kcscreen", description="Placido-ring keratoconus screening.")
    p.add_argument("--version", action="version", version=f"%(prog)s {version()}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="render a synthetic labeled corpus")
    s.add_argument("--n-control", type=int, default=25)
    s.add_argument("--n-kc", type=int, default=25)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train-segmenter", parents=[common], help="train only the pixel tree")
    s.add_argument("--corpus", required=True)
    s.add_argument("--out", required=True, help="output tree JSON path")
    s.set_defaults(func=cmd_train_segmenter)

    s = sub.add_parser("train", parents=[common], help="train tree, k-means and logistic models")
    s.add_argument("--corpus", required=True)
    s.add_argument("--out", required=True, help="output models directory")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("diagnose", parents=[common], help="diagnose an image or a whole corpus")
    s.add_argument("image", nargs="?", help="PPM or PNG photograph")
    s.add_argument("--corpus", help="diagnose every scene of a corpus instead")
    s.add_argument("--models", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_diagnose)

    s = sub.add_parser("report", parents=[common], help="aggregate corpus diagnoses")
    s.add_argument("--corpus", required=True)
    s.add_argument("--models", required=True)
    s.add_argument("--diagnoses", required=True)
    s.add_argument("--out", required=True, help="output JSON; a .txt table is written beside it")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        config = load_config(args.config, seed=args.seed, workers=args.workers)
    except (OSError, ValueError, TypeError) as exc:
        print(f"error: bad configuration: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args, config)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
