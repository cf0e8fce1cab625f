"""Command-line interface.

Subcommands cover the full benchmark workflow: ``ingest`` and ``synth``
produce datasets, ``regularize`` turns them into patches, ``partition``
builds the domain manifest, ``shift``/``stats``/``eval`` produce reports
(JSON plus delimited tables, with figures rendered alongside), and
``verify-theorem`` runs the two-measure separation check on a synthetic
lognormal pair.

Contract violations (bad inputs, infeasible builds) exit with status 2
after writing a machine-readable error record to stderr.  The
``SCALEFORGE_LOG`` environment variable sets the log level.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .annot import (
    DATASET_FORMATS,
    DEFAULT_POINT_BOX_SIDE,
    parse_dataset,
    parse_predictions,
    write_dataset,
)
from .errors import ContractError
from .evalloc import evaluate_predictions
from .figures import (
    correlation_figure,
    domain_scale_figure,
    reliability_figure,
    save_figure,
    shift_matrix_figure,
)
from .mixture import EmConfig
from .partition import BenchmarkManifest, build_benchmark
from .pipeline import benchmark_shift_matrix, domain_patches, regularize_bundle
from .regularize import FILTER_PRESETS, FilterConfig, read_patches, write_patches
from .report import fmt, make_report, write_csv, write_report
from .shift import (
    LabeledScaleSamples,
    bootstrap_shift,
    count_quartile_cuts,
    quantize_counts,
    shift_report,
)
from .simrfs import (
    CorpusConfig,
    LinearScale,
    LognormalScale,
    SceneConfig,
    make_benchmark_corpus,
    make_bundle,
    make_domain_pair,
    scene_summary,
)
from .stats import histogram, scale_position_correlations, shared_edges

logger = logging.getLogger(__name__)

VERIFY_BINS = 8
SYNTH_KINDS = ("corpus", "linear")


def _setup_logging() -> None:
    level_name = os.environ.get("SCALEFORGE_LOG", "WARNING").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _config_echo(args: argparse.Namespace) -> dict:
    cfg = {}
    for key, value in sorted(vars(args).items()):
        if key in ("func", "command"):
            continue
        cfg[key] = str(value) if isinstance(value, Path) else value
    return cfg


def _out_dir(args: argparse.Namespace) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# subcommand bodies


def cmd_ingest(args: argparse.Namespace) -> int:
    bundle = parse_dataset(args.dataset, fmt=args.format,
                           point_box_side=args.point_box_side)
    if args.name:
        bundle.name = args.name
    out = _out_dir(args)
    write_dataset(bundle, out / "dataset.jsonl")
    n_boxes = sum(len(img.boxes) for img in bundle.images)
    n_synth = sum(1 for img in bundle.images for b in img.boxes if b.synthetic)
    write_report(out / "ingest_report.json", make_report("ingest", _config_echo(args), {
        "name": bundle.name,
        "n_images": len(bundle.images),
        "n_boxes": n_boxes,
        "n_synthetic_boxes": n_synth,
    }))
    print(f"ingested {len(bundle.images)} images / {n_boxes} boxes -> {out / 'dataset.jsonl'}")
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    out = _out_dir(args)
    if args.kind == "corpus":
        cfg = CorpusConfig()
        sb = make_benchmark_corpus(cfg, args.scenes, seed=args.seed, name=args.name)
        cfg_record = cfg.to_record()
    else:
        scene_cfg = SceneConfig(lam=args.lam,
                                scale_law=LinearScale(a=args.slope, b=args.intercept))
        sb = make_bundle(scene_cfg, args.scenes, seed=args.seed, name=args.name)
        cfg_record = scene_cfg.to_record()
    write_dataset(sb.bundle, out / "dataset.jsonl")
    sb.write_oracle(out / "oracle.jsonl")
    counts, means = scene_summary(sb)
    write_report(out / "synth_report.json", make_report("synth", _config_echo(args), {
        "generator": cfg_record,
        "n_images": len(sb.bundle.images),
        "n_boxes": int(counts.sum()),
        "count_mean": float(counts.mean()) if counts.size else 0.0,
        "scale_mean_range": [float(means.min()), float(means.max())] if means.size else None,
    }))
    print(f"synthesized {len(sb.bundle.images)} scenes / {int(counts.sum())} boxes -> {out}")
    return 0


def cmd_regularize(args: argparse.Namespace) -> int:
    bundle = parse_dataset(args.dataset, fmt=args.format,
                           point_box_side=args.point_box_side)
    em_cfg = EmConfig(K=args.K, seed=args.seed)
    overrides = {}
    if args.min_object_height is not None:
        overrides["min_object_height"] = args.min_object_height
    filter_cfg = FilterConfig.preset(args.filter_preset, **overrides)
    result = regularize_bundle(bundle, em_cfg, filter_cfg,
                               apply_filter=not args.no_filter, threads=args.threads)
    out = _out_dir(args)
    write_patches(result.patches, out / "patches.jsonl", name=bundle.name)
    reasons: dict[str, int] = {}
    for _, reason in result.rejected:
        reasons[reason] = reasons.get(reason, 0) + 1
    write_report(out / "regularize_report.json", make_report("regularize", _config_echo(args), {
        "filter": filter_cfg.to_record(),
        "filter_applied": not args.no_filter,
        "n_images": result.n_images,
        "n_empty_images": result.n_empty,
        "n_patches": len(result.patches),
        "n_rejected": result.n_rejected,
        "rejected_by_reason": dict(sorted(reasons.items())),
    }))
    print(f"kept {len(result.patches)} patches "
          f"({result.n_rejected} rejected) -> {out / 'patches.jsonl'}")
    return 0


def cmd_partition(args: argparse.Namespace) -> int:
    patches = read_patches(args.patches)
    manifest = build_benchmark(patches, M=args.M, bins=args.bins,
                               epsilon=args.epsilon, val_fraction=args.val_fraction,
                               seed=args.seed)
    out = _out_dir(args)
    manifest.save(out / "manifest.json")
    index = {p.pid: p for p in patches}
    rows = []
    domain_means = []
    for dom in manifest.domains:
        members = [index[pid] for pid in dom.patch_ids]
        mean_scale = float(np.mean([p.mean_scale for p in members]))
        domain_means.append(mean_scale)
        split = manifest.splits[dom.name]
        rows.append([dom.name, fmt(dom.lo), fmt(dom.hi), fmt(dom.sigma),
                     dom.n_patches, len(split["train"]), len(split["val"]),
                     fmt(mean_scale)])
    write_csv(out / "domains.csv",
              ["domain", "lo", "hi", "sigma", "n_patches", "n_train", "n_val", "mean_scale"],
              rows)
    write_report(out / "partition_report.json", make_report("partition", _config_echo(args), {
        "balanced": manifest.balanced,
        "imbalance": manifest.imbalance,
        "domains": [dict(zip(("name", "n_patches", "mean_scale"),
                             (d.name, d.n_patches, m)))
                    for d, m in zip(manifest.domains, domain_means)],
        "n_dropped_top_region": len(manifest.dropped_region),
        "n_reshape_rejected": len(manifest.reshape_rejected),
    }))
    fig = domain_scale_figure([(d.name, d.pdf.edges, d.pdf.mass) for d in manifest.domains])
    save_figure(fig, out / "domains_scale.png")
    counts = ", ".join(f"{d.name}={d.n_patches}" for d in manifest.domains)
    print(f"partitioned into {manifest.M} domains ({counts}; "
          f"imbalance {manifest.imbalance:.4f}) -> {out / 'manifest.json'}")
    return 0


def cmd_shift(args: argparse.Namespace) -> int:
    manifest = BenchmarkManifest.load(args.manifest)
    patches = read_patches(args.patches)
    matrix = benchmark_shift_matrix(manifest, patches, bins=args.bins)
    out = _out_dir(args)
    rows = [[r.name1, r.name2, r.n1, r.n2, r.bins, fmt(r.div_div), fmt(r.div_cor),
             fmt(r.kl), fmt(r.kl_objects), fmt(r.div_div_shared), r.n_undefined_bins]
            for r in matrix.reports]
    write_csv(out / "shift_matrix.csv",
              ["domain1", "domain2", "n1", "n2", "bins", "div_div", "div_cor",
               "kl", "kl_objects", "div_div_shared", "n_undefined_bins"],
              rows)
    write_report(out / "shift_report.json", make_report("shift", _config_echo(args), {
        "domains": matrix.names,
        "pairs": [r.to_record() for r in matrix.reports],
    }))
    save_figure(shift_matrix_figure(matrix.names, matrix.matrix("div_div"),
                                    "diversity shift"), out / "shift_div.png")
    save_figure(shift_matrix_figure(matrix.names, matrix.matrix("div_cor"),
                                    "correlation shift"), out / "shift_cor.png")
    print(f"shift matrix over {len(matrix.names)} domains -> {out / 'shift_matrix.csv'}")
    return 0


def cmd_stats(args: argparse.Namespace) -> int:
    bundle = parse_dataset(args.dataset, fmt=args.format,
                           point_box_side=args.point_box_side)
    report = scale_position_correlations(bundle, include_synthetic=args.include_synthetic)
    scales = np.array([b.w * b.h for img in bundle.images for b in img.boxes
                       if args.include_synthetic or not b.synthetic], dtype=float)
    hist = histogram(scales, shared_edges(scales, bins=args.bins)) if scales.size else None
    out = _out_dir(args)
    summaries = list(report.summaries.values())
    rows = [[s.pair, fmt(s.mean), len(s.coefficients), s.n_undefined]
            for s in summaries]
    write_csv(out / "stats.csv", ["pair", "mean_r", "n_images", "n_undefined"], rows)
    write_report(out / "stats_report.json", make_report("stats", _config_echo(args), {
        "correlations": report.to_record(),
        "scale_hist": None if hist is None else hist.to_record(),
        "n_objects": int(scales.size),
    }))
    save_figure(correlation_figure(
        [(s.pair, s.hist.edges, np.asarray(s.hist.mass) * s.hist.n_samples)
         for s in summaries]),
        out / "correlations.png")
    if hist is not None:
        save_figure(domain_scale_figure([(bundle.name, hist.edges, hist.mass)]),
                    out / "scale_hist.png")
    means = ", ".join(f"{s.pair}={s.mean:.3f}" for s in summaries)
    print(f"correlations over {report.n_images} images ({means}) -> {out / 'stats.csv'}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    bundle = parse_dataset(args.dataset, fmt=args.format,
                           point_box_side=args.point_box_side)
    preds = parse_predictions(args.predictions)
    result = evaluate_predictions(bundle, preds)
    out = _out_dir(args)
    rows = [[r["id"], r["n_pred"], r["n_gt"], r["tp"], r["fp"], r["fn"],
             fmt(r["total_distance"])] for r in result.per_image]
    write_csv(out / "eval.csv",
              ["image_id", "n_pred", "n_gt", "tp", "fp", "fn", "total_distance"],
              rows)
    write_report(out / "eval_report.json",
                 make_report("eval", _config_echo(args), result.to_record()))
    if result.calibration is not None:
        cal = result.calibration
        save_figure(reliability_figure(cal.edges, cal.conf_means, cal.precisions, cal.ece),
                    out / "reliability.png")
    m = result.metrics
    ece_text = "n/a" if result.calibration is None else f"{result.calibration.ece:.4f}"
    print(f"f1 {m.f1:.4f} precision {m.precision:.4f} recall {m.recall:.4f} "
          f"mae {m.mae:.3f} mse {m.mse:.3f} ece {ece_text} -> {out / 'eval.csv'}")
    return 0


def _theorem_samples(sb) -> tuple[np.ndarray, np.ndarray, np.ndarray, str]:
    scales = np.concatenate([t.true_scales for t in sb.truths.values()])
    counts = np.array([t.n for t in sb.truths.values()], dtype=float)
    per_object = np.repeat(counts, [t.n for t in sb.truths.values()])
    return scales, counts, per_object, sb.bundle.name


def cmd_verify_theorem(args: argparse.Namespace) -> int:
    mu = math.log(args.median_scale)
    gap = 0.0 if args.null else args.gap
    base = SceneConfig(lam=args.lam, jitter=0.0,
                       scale_law=LognormalScale(mu, args.sigma),
                       scene_scale_spread=args.spread, count_inverse=True)
    shifted = SceneConfig(lam=args.lam, jitter=0.0,
                          scale_law=LognormalScale(mu + gap, args.sigma),
                          scene_scale_spread=args.spread, count_inverse=True)
    n_scenes = max(1, round(args.objects / args.lam))
    sb_a, sb_b = make_domain_pair(base, shifted, n_scenes, seed=args.seed,
                                  names=("base", "shifted"))
    scales_a, counts_a, per_a, name_a = _theorem_samples(sb_a)
    scales_b, counts_b, per_b, name_b = _theorem_samples(sb_b)
    cuts = count_quartile_cuts(counts_a, counts_b)
    s1 = LabeledScaleSamples(name_a, scales_a, quantize_counts(per_a, cuts))
    s2 = LabeledScaleSamples(name_b, scales_b, quantize_counts(per_b, cuts))
    edges = shared_edges(np.log(s1.scales), np.log(s2.scales), bins=args.bins)
    log1 = LabeledScaleSamples(name_a, np.log(s1.scales), s1.labels)
    log2 = LabeledScaleSamples(name_b, np.log(s2.scales), s2.labels)
    rep = shift_report(log1, log2, bins=args.bins, edges=edges)
    boot = bootstrap_shift(log1, log2, bins=args.bins, n_boot=args.boot,
                           seed=args.seed, edges=edges)
    div_ratio = rep.div_div / boot.div_div_se if boot.div_div_se > 0 else math.inf
    cor_ratio = rep.div_cor / boot.div_cor_se if boot.div_cor_se > 0 else math.inf
    detected = bool(div_ratio > 5.0 and cor_ratio > 5.0)
    out = _out_dir(args)
    payload = {
        "mode": "null" if args.null else "shifted",
        "n_objects": [int(s1.n), int(s2.n)],
        "n_scenes": n_scenes,
        "report": rep.to_record(),
        "bootstrap": boot.to_record(),
        "div_div_se_ratio": div_ratio,
        "div_cor_se_ratio": cor_ratio,
        "detected": detected,
    }
    write_report(out / "verify_report.json",
                 make_report("verify-theorem", _config_echo(args), payload))
    write_csv(out / "verify.csv",
              ["mode", "div_div", "div_div_se", "div_div_ratio",
               "div_cor", "div_cor_se", "div_cor_ratio", "detected"],
              [[payload["mode"], fmt(rep.div_div), fmt(boot.div_div_se), fmt(div_ratio),
                fmt(rep.div_cor), fmt(boot.div_cor_se), fmt(cor_ratio),
                fmt(detected)]])
    h1 = histogram(log1.scales, edges)
    h2 = histogram(log2.scales, edges)
    save_figure(domain_scale_figure([(name_a, h1.edges, h1.mass),
                                     (name_b, h2.edges, h2.mass)]),
                out / "verify_hist.png")
    print(f"div_div {rep.div_div:.4f} (se {boot.div_div_se:.4f}, x{div_ratio:.1f})")
    print(f"div_cor {rep.div_cor:.4f} (se {boot.div_cor_se:.4f}, x{cor_ratio:.1f})")
    print(f"separation {'detected' if detected else 'not detected'} -> {out / 'verify_report.json'}")
    return 0


# ---------------------------------------------------------------------------
# parser wiring


def _add_dataset_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("dataset", type=Path, help="dataset manifest to read")
    p.add_argument("--format", choices=DATASET_FORMATS, default="native-json",
                   help="input dataset format")
    p.add_argument("--point-box-side", type=float, default=DEFAULT_POINT_BOX_SIDE,
                   help="pseudo-box side for point-only rows")


def _add_out(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", type=Path, default=Path("."), help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scaleforge",
        description="Construct and measure scale-shift benchmarks for crowd localization.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse, clamp, validate and re-serialize a dataset")
    _add_dataset_args(p)
    p.add_argument("--name", default=None, help="override the dataset name")
    _add_out(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", help="generate a synthetic dataset with a truth oracle")
    p.add_argument("--scenes", type=int, default=1000, help="number of scenes")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--kind", choices=SYNTH_KINDS, default="corpus",
                   help="corpus: scale-sweep benchmark corpus; linear: one fixed law")
    p.add_argument("--name", default="synth", help="dataset name / image id prefix")
    p.add_argument("--lam", type=float, default=80.0, help="expected objects per scene (linear kind)")
    p.add_argument("--slope", type=float, default=2000.0, help="scale slope vs depth (linear kind)")
    p.add_argument("--intercept", type=float, default=200.0, help="scale at the top (linear kind)")
    _add_out(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("regularize", help="segment images into scale-homogeneous patches")
    _add_dataset_args(p)
    p.add_argument("--K", type=int, default=5, help="mixture components per image")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1, help="worker processes")
    p.add_argument("--filter-preset", choices=FILTER_PRESETS, default="main-text")
    p.add_argument("--no-filter", action="store_true",
                   help="keep every segmented patch (skip acceptance rules)")
    p.add_argument("--min-object-height", type=float, default=None,
                   help="drop objects shorter than this before the patch rules")
    _add_out(p)
    p.set_defaults(func=cmd_regularize)

    p = sub.add_parser("partition", help="build the equal-mass scale-domain benchmark")
    p.add_argument("patches", type=Path, help="patches file from regularize")
    p.add_argument("--M", type=int, default=4, help="number of domains")
    p.add_argument("--epsilon", type=float, default=0.02, help="allowed retained-count imbalance")
    p.add_argument("--bins", type=int, default=256)
    p.add_argument("--val-fraction", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    _add_out(p)
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("shift", help="pairwise shift measures between benchmark domains")
    p.add_argument("manifest", type=Path)
    p.add_argument("patches", type=Path)
    p.add_argument("--bins", type=int, default=256)
    _add_out(p)
    p.set_defaults(func=cmd_shift)

    p = sub.add_parser("stats", help="per-image scale/position correlation report")
    _add_dataset_args(p)
    p.add_argument("--bins", type=int, default=256)
    p.add_argument("--include-synthetic", action="store_true",
                   help="include pseudo-boxes in the statistics")
    _add_out(p)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("eval", help="score point predictions against a dataset")
    _add_dataset_args(p)
    p.add_argument("predictions", type=Path, help="predictions file")
    _add_out(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify-theorem",
                       help="check that both shift measures separate a lognormal pair")
    p.add_argument("--objects", type=int, default=10000, help="objects per side (approximate)")
    p.add_argument("--gap", type=float, default=math.log(2.5),
                   help="log-scale mean separation between the two laws")
    p.add_argument("--sigma", type=float, default=0.3, help="log-scale std of each law")
    p.add_argument("--median-scale", type=float, default=800.0)
    p.add_argument("--spread", type=float, default=0.35,
                   help="per-scene scale spread coupling count to scale")
    p.add_argument("--lam", type=float, default=5.0, help="expected objects per scene")
    p.add_argument("--null", action="store_true",
                   help="use identical laws on both sides (null check)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bins", type=int, default=VERIFY_BINS)
    p.add_argument("--boot", type=int, default=200, help="bootstrap resamples")
    _add_out(p)
    p.set_defaults(func=cmd_verify_theorem)

    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ContractError as exc:
        logger.debug("contract violation", exc_info=True)
        print(json.dumps(exc.to_record(), sort_keys=True), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
