"""Command-line entry points.

Subcommands: synth | associate | consensus | keyframe | train | eval |
sweep | run. Every subcommand takes --config/--seed/--out; flags override
config keys; TRACKFUSE_OUT sets the default output root. ``run`` executes
the whole staged pipeline into one directory, skipping stages whose
output already exists unless --force is given.

Exit codes: 0 ok, 1 usage error, 2 data/schema error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .consensus import cluster_synonyms, load_consensus, propagate, run_consensus, save_consensus
from .errors import NumericError, SchemaError
from .field import (
    TrainConfig,
    field_from_ground_truth,
    load_field,
    long_only_baseline,
    render_mask,
    save_field,
    save_loss_curve,
    train,
)
from .keyframes import ExternalDescriptions, run_keyframes
from .metrics import (
    consensus_accuracy,
    emit_report,
    match_tracks_to_objects,
    miou,
    short_query_union,
)
from .records import (
    config_hash,
    load_dataset,
    load_descriptions,
    save_dataset,
    save_descriptions,
)
from .rle import rle_decode
from .synth import SynthConfig, corrupt, generate_scene, load_ground_truth, save_ground_truth
from .tracking import AssocParams, associate_greedy, import_tracks, load_tracks, save_tracks

logger = logging.getLogger(__name__)

DEFAULT_CONFIG = {
    "seed": 0,
    "synth": {},
    "assoc": {"mode": "import", "iou_weight": 0.7, "match_threshold": 0.3, "max_gap": 5},
    "consensus": {"tau_sem": 0.85},
    "keyframe": {"sigma": 100.0, "strategy": "weighting", "external": None},
    "train": {
        "lam": 0.1,
        "tau": 0.1,
        "epochs": 5,
        "feature_lr": 2.5e-3,
        "views": None,
        "spread": 8.0,
        "gaussians_per_object": 5,
        "long_only": False,
    },
    "eval": {"views": None},
}


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the contract here is exit 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _out_root() -> Path:
    return Path(os.environ.get("TRACKFUSE_OUT", "runs"))


def load_config(path: str | None) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path:
        try:
            user = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise SchemaError(f"config file not found: {path}")
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: invalid JSON: {exc}") from exc
        for key, value in user.items():
            if isinstance(value, dict) and isinstance(cfg.get(key), dict):
                cfg[key].update(value)
            else:
                cfg[key] = value
    return cfg


_SYNTH_FIELDS = frozenset(SynthConfig.__dataclass_fields__)


def _synth_config(cfg: dict, seed: int) -> SynthConfig:
    section = dict(cfg["synth"])
    if not section:
        # a bare SynthConfig document (no pipeline sections) is also accepted
        section = {k: v for k, v in cfg.items() if k in _SYNTH_FIELDS and k != "seed"}
    section.setdefault("seed", seed)
    return SynthConfig.from_json(section)


def _train_config(cfg: dict, seed: int) -> TrainConfig:
    section = cfg["train"]
    views = section.get("views")
    return TrainConfig(
        lam=float(section.get("lam", 0.1)),
        tau=float(section.get("tau", 0.1)),
        epochs=int(section.get("epochs", 5)),
        feature_lr=float(section.get("feature_lr", 2.5e-3)),
        ratio_start=float(section.get("ratio_start", 0.1)),
        ratio_factor=float(section.get("ratio_factor", 0.6)),
        ratio_interval=int(section.get("ratio_interval", 2000)),
        seed=seed,
        views=tuple(views) if views is not None else None,
        selection=str(section.get("selection", "pseudo")),
    )


# ---------------------------------------------------------------------------
# stages (also the implementation behind the single-step subcommands)


def stage_synth(cfg: dict, out_dir: Path, seed: int) -> Path:
    scfg = _synth_config(cfg, seed)
    ds, gt = generate_scene(scfg)
    ds = corrupt(ds, gt, scfg)
    manifest = save_dataset(ds, out_dir / "dataset")
    save_ground_truth(gt, out_dir / "ground_truth.json")
    tcfg = cfg["train"]
    geometry = field_from_ground_truth(
        gt,
        n_views=ds.n_views,
        height=ds.height,
        width=ds.width,
        dim=ds.dim,
        spread=float(tcfg.get("spread", 8.0)),
        per_object=int(tcfg.get("gaussians_per_object", 5)),
    )
    save_field(geometry, out_dir / "field_geometry.json")
    return manifest


def stage_associate(cfg: dict, manifest: Path, out_path: Path) -> None:
    ds = load_dataset(manifest)
    section = cfg["assoc"]
    manifest_obj = json.loads(Path(manifest).read_text())
    if "tracks" in manifest_obj:
        # dataset ships an external tracker's output: validate and adopt it
        trajectories = load_tracks(Path(manifest).parent / manifest_obj["tracks"])
    elif section.get("mode", "import") == "import":
        trajectories = import_tracks(ds)
    else:
        params = AssocParams(
            iou_weight=float(section.get("iou_weight", 0.7)),
            match_threshold=float(section.get("match_threshold", 0.3)),
            max_gap=int(section.get("max_gap", 5)),
        )
        trajectories = associate_greedy(ds, params)
    save_tracks(trajectories, out_path)


def stage_consensus(cfg: dict, manifest: Path, tracks_path: Path, out_path: Path) -> None:
    ds = load_dataset(manifest)
    trajectories = load_tracks(tracks_path)
    result = run_consensus(ds, trajectories, tau_sem=float(cfg["consensus"]["tau_sem"]))
    save_consensus(result.records, out_path)


def stage_keyframe(cfg: dict, manifest: Path, consensus_path: Path, out_path: Path, seed: int) -> None:
    ds = load_dataset(manifest)
    records = load_consensus(consensus_path)
    section = cfg["keyframe"]
    external = None
    if section.get("external"):
        external = ExternalDescriptions.load(section["external"])
    descriptions = run_keyframes(
        ds,
        records,
        strategy=str(section.get("strategy", "weighting")),
        sigma=float(section.get("sigma", 100.0)),
        seed=seed,
        external=external,
    )
    save_descriptions(descriptions, out_path)


def _default_descriptions_path(manifest: Path) -> Path:
    manifest_obj = json.loads(Path(manifest).read_text())
    if "descriptions" in manifest_obj:
        return Path(manifest).parent / manifest_obj["descriptions"]
    raise SchemaError(
        "no descriptions source: pass --descriptions or add a 'descriptions' "
        "entry to the dataset manifest"
    )


def _default_geometry_path(cfg: dict, manifest: Path) -> Path:
    configured = cfg["train"].get("geometry")
    candidates = [Path(configured)] if configured else []
    candidates += [
        Path(manifest).parent.parent / "field_geometry.json",
        Path(manifest).parent / "field_geometry.json",
    ]
    for candidate in candidates:
        if candidate.exists():
            return candidate
    raise SchemaError(
        "no field geometry found: pass --geometry, set train.geometry in the "
        "config, or keep field_geometry.json next to the dataset"
    )


def stage_train(
    cfg: dict,
    manifest: Path,
    consensus_path: Path,
    model_path: Path,
    seed: int,
    descriptions_path: Path | None = None,
    geometry_path: Path | None = None,
    curve_path: Path | None = None,
    long_only: bool | None = None,
) -> None:
    ds = load_dataset(manifest)
    records = load_consensus(consensus_path)
    if descriptions_path is None:
        descriptions_path = _default_descriptions_path(manifest)
    if geometry_path is None:
        geometry_path = _default_geometry_path(cfg, manifest)
    descriptions = load_descriptions(descriptions_path, dim=ds.dim)
    field_ = load_field(geometry_path)
    tcfg = _train_config(cfg, seed)
    if long_only is None:
        long_only = bool(cfg["train"].get("long_only", False))
    runner = long_only_baseline if long_only else train
    field_, curve = runner(field_, ds, records, descriptions, tcfg)
    save_field(field_, model_path)
    if curve_path is not None:
        save_loss_curve(curve, curve_path)


def stage_eval(
    cfg: dict,
    manifest: Path,
    consensus_path: Path,
    report_path: Path,
    seed: int,
    gt_path: Path | None = None,
    model_path: Path | None = None,
    descriptions_path: Path | None = None,
) -> dict:
    ds = load_dataset(manifest)
    records = load_consensus(consensus_path)
    propagate(ds, records)

    metrics: dict = {"n_tracks": len(records)}
    trajectories_views = sorted({v for rec in records for v, _ in rec.members})

    tau_sem = float(cfg["consensus"]["tau_sem"])
    observed = sorted({det.raw_label for _, _, det in ds.all_detections()})
    if observed:
        clustering = cluster_synonyms(observed, ds.embeddings, tau_sem)
        metrics["cluster_count"] = len(clustering.canonical)
        if gt_path is not None and gt_path.exists():
            gt = load_ground_truth(gt_path)
            metrics.update(consensus_accuracy(ds, gt, clustering))

    if model_path is not None and model_path.exists():
        field_ = load_field(model_path)
        gt = load_ground_truth(gt_path) if gt_path is not None and gt_path.exists() else None
        eval_views = cfg["eval"].get("views")
        views = list(eval_views) if eval_views is not None else trajectories_views
        if gt is not None and views:
            categories = sorted({o.identity for o in gt.objects})
            short_preds = {
                c: {v: render_mask(field_, v, ds.embedding(c)) for v in views}
                for c in categories
            }
            short_gts = {
                c: {v: short_query_union(gt, c, v) for v in views} for c in categories
            }
            per_short, miou_short = miou(short_preds, short_gts)
            metrics["miou_short"] = miou_short
            metrics["miou_short_per_query"] = per_short

            if descriptions_path is not None and descriptions_path.exists():
                descriptions = load_descriptions(descriptions_path, dim=ds.dim)
                track_to_obj = match_tracks_to_objects(ds, records, gt)
                obj_by_id = {o.object_id: o for o in gt.objects}
                long_preds: dict[str, dict[int, np.ndarray]] = {}
                long_gts: dict[str, dict[int, np.ndarray]] = {}
                for desc in sorted(descriptions, key=lambda d: d.track_id):
                    if desc.track_id not in track_to_obj:
                        continue
                    obj = obj_by_id[track_to_obj[desc.track_id]]
                    for text, vec in desc.referrals:
                        query = f"{desc.track_id}:{text}"
                        long_preds[query] = {
                            v: render_mask(field_, v, vec) for v in views
                        }
                        long_gts[query] = {v: rle_decode(obj.masks[v]) for v in views}
                if long_preds:
                    per_long, miou_long = miou(long_preds, long_gts)
                    metrics["miou_long"] = miou_long
                    metrics["miou_long_per_query"] = per_long

    return emit_report(metrics, cfg, {"seed": seed}, report_path)


# ---------------------------------------------------------------------------
# pipeline


def run_pipeline(cfg: dict, out_dir: Path, seed: int, force: bool = False) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.time()
    statuses: dict[str, str] = {}

    def needs(path: Path) -> bool:
        return force or not path.exists()

    manifest = out_dir / "dataset" / "manifest.json"
    gt_path = out_dir / "ground_truth.json"
    geometry = out_dir / "field_geometry.json"
    tracks = out_dir / "tracks.jsonl"
    consensus_path = out_dir / "consensus.jsonl"
    descriptions_path = out_dir / "descriptions.jsonl"
    model_path = out_dir / "model.json"
    curve_path = out_dir / "loss_curve.csv"
    report_path = out_dir / "report.json"

    stages = [
        ("synth", manifest, lambda: stage_synth(cfg, out_dir, seed)),
        ("associate", tracks, lambda: stage_associate(cfg, manifest, tracks)),
        ("consensus", consensus_path, lambda: stage_consensus(cfg, manifest, tracks, consensus_path)),
        ("keyframe", descriptions_path, lambda: stage_keyframe(cfg, manifest, consensus_path, descriptions_path, seed)),
        (
            "train",
            model_path,
            lambda: stage_train(
                cfg,
                manifest,
                consensus_path,
                model_path,
                seed,
                descriptions_path=descriptions_path,
                geometry_path=geometry,
                curve_path=curve_path,
            ),
        ),
        (
            "eval",
            report_path,
            lambda: stage_eval(
                cfg,
                manifest,
                consensus_path,
                report_path,
                seed,
                gt_path=gt_path,
                model_path=model_path,
                descriptions_path=descriptions_path,
            ),
        ),
    ]

    for name, output, fn in stages:
        if not needs(output):
            statuses[name] = "skipped"
            logger.info("stage %s: output exists, skipping", name)
            continue
        logger.info("stage %s: running", name)
        try:
            fn()
        except Exception as exc:
            statuses[name] = "failed"
            _write_run_manifest(out_dir, cfg, seed, statuses, started)
            raise type(exc)(f"stage {name!r} failed: {exc}") from exc
        statuses[name] = "done"

    run_manifest = _write_run_manifest(out_dir, cfg, seed, statuses, started)
    return run_manifest


def _write_run_manifest(out_dir: Path, cfg: dict, seed: int, statuses: dict, started: float) -> dict:
    manifest = {
        "config_hash": config_hash(cfg),
        "seed": seed,
        "stages": statuses,
        "versions": {
            "trackfuse": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
        "started": started,
        "finished": time.time(),
    }
    (out_dir / "run.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return manifest


# ---------------------------------------------------------------------------
# sweep


def run_sweep(
    cfg: dict,
    manifest: Path,
    tracks_path: Path,
    param: str,
    values: list[float],
    out_path: Path,
    gt_path: Path | None,
    seed: int,
) -> list[dict]:
    ds = load_dataset(manifest)
    trajectories = load_tracks(tracks_path)
    gt = load_ground_truth(gt_path) if gt_path is not None and gt_path.exists() else None

    rows = []
    for value in values:
        if param == "tau_sem":
            result = run_consensus(ds, trajectories, tau_sem=value)
            propagate(ds, result.records)
            row = {"value": value, "cluster_count": len(result.clustering.canonical)}
            if gt is not None:
                row.update(consensus_accuracy(ds, gt, result.clustering))
        elif param == "sigma":
            result = run_consensus(ds, trajectories, tau_sem=float(cfg["consensus"]["tau_sem"]))
            descriptions = run_keyframes(ds, result.records, strategy="weighting", sigma=value, seed=seed)
            keyframes = [d.keyframe for d in descriptions]
            row = {
                "value": value,
                "mean_keyframe": float(np.mean(keyframes)) if keyframes else float("nan"),
                "n_tracks": len(descriptions),
            }
        else:
            raise ValueError(f"unknown sweep parameter {param!r}")
        rows.append(row)

    fields = sorted({k for row in rows for k in row}, key=lambda k: (k != "value", k))
    with open(out_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return rows


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> _Parser:
    parser = _Parser(prog="trackfuse", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, default_out: str):
        p.add_argument("--config", help="pipeline config JSON")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help=f"output path (default: $TRACKFUSE_OUT/{default_out})")
        p.add_argument("--threads", type=int, default=1,
                       help="worker cap; 1 is the deterministic reference path")

    p = sub.add_parser("synth", help="generate a synthetic scene dataset")
    common(p, "scene")

    p = sub.add_parser("associate", help="build trajectories from detections")
    common(p, "tracks.jsonl")
    p.add_argument("--manifest", required=True)
    p.add_argument("--mode", choices=["import", "greedy"])
    p.add_argument("--iou-weight", type=float)
    p.add_argument("--match-threshold", type=float)
    p.add_argument("--max-gap", type=int)

    p = sub.add_parser("consensus", help="cluster labels and vote per trajectory")
    common(p, "consensus.jsonl")
    p.add_argument("--manifest", required=True)
    p.add_argument("--tracks", required=True)
    p.add_argument("--tau-sem", type=float)

    p = sub.add_parser("keyframe", help="select keyframes and attach descriptions")
    common(p, "descriptions.jsonl")
    p.add_argument("--manifest", required=True)
    p.add_argument("--consensus", required=True)
    p.add_argument("--sigma", type=float)
    p.add_argument("--strategy")
    p.add_argument("--external", help="external descriptions file keyed by (track, view)")

    p = sub.add_parser("train", help="train the toy referring field")
    common(p, "model.json")
    p.add_argument("--manifest", required=True)
    p.add_argument("--consensus", required=True)
    p.add_argument("--descriptions", help="defaults to the manifest's descriptions entry")
    p.add_argument("--geometry", help="defaults to field_geometry.json next to the dataset")
    p.add_argument("--loss-curve")
    p.add_argument("--long-only", action="store_true")

    p = sub.add_parser("eval", help="compute metrics and write the report")
    common(p, "report.json")
    p.add_argument("--manifest", required=True)
    p.add_argument("--consensus", required=True)
    p.add_argument("--ground-truth")
    p.add_argument("--model")
    p.add_argument("--descriptions")

    p = sub.add_parser("sweep", help="sweep one parameter and export a CSV table")
    common(p, "sweep.csv")
    p.add_argument("--manifest", required=True)
    p.add_argument("--tracks", required=True)
    p.add_argument("--param", choices=["tau_sem", "sigma"], default="tau_sem")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--ground-truth")

    p = sub.add_parser("run", help="run the full pipeline into one directory")
    common(p, "run")
    p.add_argument("--force", action="store_true", help="re-run stages whose output exists")

    return parser


def _resolve_out(args, default_name: str) -> Path:
    if args.out:
        return Path(args.out)
    root = _out_root()
    root.mkdir(parents=True, exist_ok=True)
    return root / default_name


def _dispatch(args) -> int:
    cfg = load_config(args.config)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    cfg["seed"] = seed

    if args.command == "synth":
        out = _resolve_out(args, "scene")
        out.mkdir(parents=True, exist_ok=True)
        manifest = stage_synth(cfg, out, seed)
        print(manifest)
    elif args.command == "associate":
        if args.mode:
            cfg["assoc"]["mode"] = args.mode
        for flag, key in (("iou_weight", "iou_weight"), ("match_threshold", "match_threshold"), ("max_gap", "max_gap")):
            value = getattr(args, flag)
            if value is not None:
                cfg["assoc"][key] = value
        out = _resolve_out(args, "tracks.jsonl")
        stage_associate(cfg, Path(args.manifest), out)
        print(out)
    elif args.command == "consensus":
        if args.tau_sem is not None:
            cfg["consensus"]["tau_sem"] = args.tau_sem
        out = _resolve_out(args, "consensus.jsonl")
        stage_consensus(cfg, Path(args.manifest), Path(args.tracks), out)
        print(out)
    elif args.command == "keyframe":
        if args.sigma is not None:
            cfg["keyframe"]["sigma"] = args.sigma
        if args.strategy:
            cfg["keyframe"]["strategy"] = args.strategy
        if args.external:
            cfg["keyframe"]["external"] = args.external
        out = _resolve_out(args, "descriptions.jsonl")
        stage_keyframe(cfg, Path(args.manifest), Path(args.consensus), out, seed)
        print(out)
    elif args.command == "train":
        out = _resolve_out(args, "model.json")
        stage_train(
            cfg,
            Path(args.manifest),
            Path(args.consensus),
            out,
            seed,
            descriptions_path=Path(args.descriptions) if args.descriptions else None,
            geometry_path=Path(args.geometry) if args.geometry else None,
            curve_path=Path(args.loss_curve) if args.loss_curve else None,
            long_only=True if args.long_only else None,
        )
        print(out)
    elif args.command == "eval":
        out = _resolve_out(args, "report.json")
        stage_eval(
            cfg,
            Path(args.manifest),
            Path(args.consensus),
            out,
            seed,
            gt_path=Path(args.ground_truth) if args.ground_truth else None,
            model_path=Path(args.model) if args.model else None,
            descriptions_path=Path(args.descriptions) if args.descriptions else None,
        )
        print(out)
    elif args.command == "sweep":
        out = _resolve_out(args, "sweep.csv")
        values = [float(v) for v in args.values.split(",") if v.strip()]
        if not values:
            raise ValueError("--values is empty")
        run_sweep(
            cfg,
            Path(args.manifest),
            Path(args.tracks),
            args.param,
            values,
            out,
            Path(args.ground_truth) if args.ground_truth else None,
            seed,
        )
        print(out)
    elif args.command == "run":
        out = _resolve_out(args, "run")
        run_pipeline(cfg, out, seed, force=args.force)
        print(out)
    return 0


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
