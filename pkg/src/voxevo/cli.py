"""Experiment harness: evolve, retrain, crosseval, report, validate-body.

Every run writes into its own output directory: a manifest with the full
config and its fingerprint, the per-generation log CSV, a resumable
checkpoint, and the champion (body + controller) as JSON. The report
command aggregates champion fitness across run directories, compares
groups pairwise with the rank-sum test, and emits star-annotated tables
plus bootstrap-CI fitness curves.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from collections import defaultdict
from dataclasses import replace

import numpy as np

from . import __version__, analysis
from .evolution import ConfigError, RunConfig, RunResult, evolve, load_body_file
from .morphology import validity_report
from .tasks import terrain_by_name

DESK_GENERATIONS = 300
DESK_SEEDS = 5
PAPER_GENERATIONS = 10_000
PAPER_SEEDS = 10
THREADS_ENV_VAR = "VOXEVO_THREADS"


def _parse_size(text: str) -> tuple[int, int]:
    try:
        h, w = text.lower().split("x")
        return int(h), int(w)
    except ValueError as exc:
        raise ConfigError(f"size must look like '5x5', got {text!r}") from exc


def _threads_default() -> int:
    raw = os.environ.get(THREADS_ENV_VAR)
    if raw is None:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"{THREADS_ENV_VAR} must be an integer, got {raw!r}")


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}")
    if not isinstance(data, dict):
        raise ConfigError("config file must contain a JSON object")
    return data


def config_from_args(args) -> RunConfig:
    """Merge config file values with CLI flags; flags win."""
    base = _load_config_file(getattr(args, "config", None))
    merged = dict(base)

    if getattr(args, "env", None) is not None:
        merged["environment"] = args.env
    if getattr(args, "size", None) is not None:
        merged["height"], merged["width"] = _parse_size(args.size)
    if getattr(args, "controller", None) is not None:
        merged["controller"] = args.controller
    if getattr(args, "gens", None) is not None:
        merged["generations"] = args.gens
    elif "generations" not in merged:
        merged["generations"] = PAPER_GENERATIONS if args.paper_scale else DESK_GENERATIONS
    if getattr(args, "pop", None) is not None:
        merged["population_size"] = args.pop
    if getattr(args, "seed", None) is not None:
        merged["seed"] = args.seed
    if getattr(args, "checkpoint_interval", None) is not None:
        merged["checkpoint_interval"] = args.checkpoint_interval
    if getattr(args, "out", None) is not None:
        merged["output_dir"] = args.out
    if getattr(args, "threads", None) is not None:
        merged["threads"] = args.threads
    elif "threads" not in merged:
        merged["threads"] = _threads_default()

    try:
        config = RunConfig.from_json(merged)
        config.validate()
    except (TypeError, ConfigError) as exc:
        raise ConfigError(str(exc))
    return config


def _seed_list(args, config: RunConfig) -> list[int]:
    count = args.seeds
    if count is None:
        count = PAPER_SEEDS if args.paper_scale else 1
    if count < 1:
        raise ConfigError("--seeds must be >= 1")
    return list(range(config.seed, config.seed + count))


def write_run_outputs(result: RunResult, out_dir: str, manifest_extra: dict | None = None) -> None:
    os.makedirs(out_dir, exist_ok=True)
    config = result.config
    manifest = {
        "software": "voxevo",
        "version": __version__,
        "setting": config.setting_name(),
        "group_label": group_label(config),
        "fingerprint": result.fingerprint,
        "seed": result.seed,
        "config": config.to_json(),
        "physics_retuning": None,
    }
    if manifest_extra:
        manifest.update(manifest_extra)
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
    result.write_generation_log(os.path.join(out_dir, "generations.csv"))
    champion = {
        "run_id": f"{result.fingerprint[:12]}-s{result.seed}",
        "fitness": result.champion.fitness,
        "age": result.champion.age,
        "morphology": result.champion.morphology.to_json(),
        "controller": result.champion.controller.to_json(),
    }
    with open(os.path.join(out_dir, "champion.json"), "w") as fh:
        json.dump(champion, fh)


def group_label(config: RunConfig) -> str:
    label = f"{config.setting_name()}-{config.controller}"
    if config.freeze_body_path is not None:
        label += "-retrained"
    return label


def cmd_evolve(args) -> int:
    config = config_from_args(args)
    if config.output_dir is None:
        raise ConfigError("an output directory is required (--out)")
    seeds = _seed_list(args, config)
    multi = len(seeds) > 1
    for seed in seeds:
        run_config = replace(config, seed=seed)
        out_dir = os.path.join(config.output_dir, f"seed_{seed}") if multi else config.output_dir
        _ensure_fresh_or_resumable(out_dir, args.resume)
        os.makedirs(out_dir, exist_ok=True)
        result = evolve(
            run_config,
            checkpoint_path=os.path.join(out_dir, "checkpoint.json"),
            resume=args.resume,
        )
        write_run_outputs(result, out_dir)
        print(
            f"{run_config.setting_name()} seed {seed}: champion fitness "
            f"{result.champion.fitness:.4f} after {run_config.generations} generations -> {out_dir}"
        )
    return 0


def _ensure_fresh_or_resumable(out_dir: str, resume: bool) -> None:
    log = os.path.join(out_dir, "generations.csv")
    if os.path.exists(log) and not resume:
        raise ConfigError(
            f"{out_dir} already holds a finished run; use --resume or a new directory"
        )


def cmd_retrain(args) -> int:
    try:
        body = load_body_file(args.body)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot load body from {args.body}: {exc}")
    ok, reason = validity_report(body)
    if not ok:
        raise ConfigError(f"body in {args.body} is invalid: {reason}")

    args.controller = "modular"
    if args.gens is None:
        args.gens = analysis.RETRAIN_GENERATIONS
    config = config_from_args(args)
    config = replace(
        config,
        height=body.h,
        width=body.w,
        controller="modular",
        freeze_body_path=args.body,
    )
    if config.output_dir is None:
        raise ConfigError("an output directory is required (--out)")

    source_run_id = None
    with open(args.body) as fh:
        raw = json.load(fh)
    if isinstance(raw, dict):
        source_run_id = raw.get("run_id")

    _ensure_fresh_or_resumable(config.output_dir, args.resume)
    os.makedirs(config.output_dir, exist_ok=True)
    result = analysis.retrain_controller(
        body,
        config,
        checkpoint_path=os.path.join(config.output_dir, "checkpoint.json"),
        resume=args.resume,
    )
    write_run_outputs(
        result,
        config.output_dir,
        manifest_extra={"source_body": args.body, "source_run_id": source_run_id},
    )
    print(
        f"retrained controller on {args.body}: champion fitness {result.champion.fitness:.4f} "
        f"-> {config.output_dir}"
    )
    return 0


def cmd_crosseval(args) -> int:
    try:
        body = load_body_file(args.body)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot load body from {args.body}: {exc}")
    ok, reason = validity_report(body)
    if not ok:
        raise ConfigError(f"body in {args.body} is invalid: {reason}")
    terrain = terrain_by_name(args.env, (body.h, body.w))
    result = analysis.cross_evaluate_fixed(body, terrain)
    print(json.dumps(result.to_json(), indent=2))
    print(f"fixed-controller fitness: {result.fitness:.4f}")
    if args.out is not None:
        with open(args.out, "w") as fh:
            json.dump(result.to_json(), fh, indent=2)
    return 0


def _load_run_dir(run_dir: str) -> dict:
    manifest_path = os.path.join(run_dir, "manifest.json")
    try:
        with open(manifest_path) as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read manifest in {run_dir}: {exc}")
    with open(os.path.join(run_dir, "champion.json")) as fh:
        champion = json.load(fh)
    best = []
    with open(os.path.join(run_dir, "generations.csv")) as fh:
        for row in csv.DictReader(fh):
            best.append(float(row["best_fitness"]))
    return {
        "dir": run_dir,
        "group": manifest.get("group_label", manifest["setting"]),
        "seed": manifest.get("seed", manifest["config"].get("seed")),
        "champion_fitness": champion["fitness"],
        "champion_body": champion["morphology"],
        "best_curve": np.array(best),
    }


def cmd_report(args) -> int:
    if len(args.run_dirs) < 2:
        raise ConfigError("report needs at least two run directories")
    runs = [_load_run_dir(d) for d in args.run_dirs]
    groups: dict[str, list[dict]] = defaultdict(list)
    for run in runs:
        groups[run["group"]].append(run)
    if len(groups) < 2:
        raise ConfigError("report needs at least two distinct run groups")
    os.makedirs(args.out, exist_ok=True)

    labels = sorted(groups)
    _write_champions_csv(groups, labels, os.path.join(args.out, "champions.csv"))
    reports = _write_comparison_csv(groups, labels, os.path.join(args.out, "comparison.csv"))
    curves = _write_curves_csv(groups, labels, os.path.join(args.out, "curves.csv"), args.bootstrap)
    distances = _write_distances(groups, labels, args.out)
    _write_svg_curves(curves, os.path.join(args.out, "curves.svg"))
    _write_text_summary(groups, labels, reports, distances, os.path.join(args.out, "report.txt"))
    print(f"report written to {args.out}")
    return 0


def _write_champions_csv(groups, labels, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["group", "run_dir", "seed", "champion_fitness"])
        for label in labels:
            for run in groups[label]:
                writer.writerow([label, run["dir"], run["seed"], repr(run["champion_fitness"])])


def _write_comparison_csv(groups, labels, path) -> list:
    reports = []
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["group_a", "group_b", "n_a", "n_b", "mean_a", "mean_b", "u_statistic", "p_value", "stars", "method"]
        )
        for i, la in enumerate(labels):
            for lb in labels[i + 1 :]:
                fa = [r["champion_fitness"] for r in groups[la]]
                fb = [r["champion_fitness"] for r in groups[lb]]
                rep = analysis.rank_sum_test(fa, fb, labels=(la, lb))
                reports.append(rep)
                writer.writerow(
                    [
                        la,
                        lb,
                        len(fa),
                        len(fb),
                        repr(float(np.mean(fa))),
                        repr(float(np.mean(fb))),
                        repr(rep.u_statistic),
                        repr(rep.p_value),
                        rep.stars,
                        rep.method,
                    ]
                )
    return reports


def _write_curves_csv(groups, labels, path, n_resamples: int) -> dict:
    curves = {}
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["group", "generation", "mean_best", "ci_lo", "ci_hi"])
        for label in labels:
            runs = groups[label]
            length = min(len(r["best_curve"]) for r in runs)
            stack = np.stack([np.maximum.accumulate(r["best_curve"][:length]) for r in runs])
            mean, lo, hi = analysis.bootstrap_mean_ci(stack, n_resamples=n_resamples)
            curves[label] = (mean, lo, hi)
            for g in range(length):
                writer.writerow([label, g, repr(float(mean[g])), repr(float(lo[g])), repr(float(hi[g]))])
    return curves


def _write_distances(groups, labels, out_dir) -> dict:
    distances = {}
    for label in labels:
        runs = groups[label]
        bodies = []
        for run in runs:
            from .morphology import Morphology

            bodies.append(Morphology.from_json(run["champion_body"]))
        shapes = {(b.h, b.w) for b in bodies}
        if len(shapes) > 1:
            raise ConfigError(
                f"group {label} mixes morphology spaces {sorted(shapes)}; distances are undefined"
            )
        if len(bodies) >= 2:
            distances[label] = analysis.intra_cluster_distance(bodies)
            analysis.export_distance_matrix(
                bodies,
                [f"seed_{r['seed']}" for r in runs],
                os.path.join(out_dir, f"distance_matrix_{label}.csv"),
            )
    with open(os.path.join(out_dir, "distances.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["group", "n", "intra_cluster_distance"])
        for label in labels:
            if label in distances:
                writer.writerow([label, len(groups[label]), repr(distances[label])])
    return distances


def _write_text_summary(groups, labels, reports, distances, path) -> None:
    lines = ["run comparison", "=" * 14, ""]
    for label in labels:
        fits = np.array([r["champion_fitness"] for r in groups[label]])
        lines.append(
            f"{label}: n={fits.size} mean={fits.mean():.4f} median={np.median(fits):.4f} "
            f"min={fits.min():.4f} max={fits.max():.4f}"
        )
        if label in distances:
            lines.append(f"    intra-cluster body distance: {distances[label]:.4f}")
    lines.append("")
    lines.append("pairwise rank-sum tests (two-sided):")
    for rep in reports:
        lines.append(
            f"  {rep.label_a} vs {rep.label_b}: U={rep.u_statistic:.1f} "
            f"p={rep.p_value:.6f} {rep.stars or 'n.s.'} [{rep.method}]"
        )
    lines.append("")
    lines.append("stars: *** p<0.001, ** p<0.005, * p<0.05")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _write_svg_curves(curves: dict, path) -> None:
    """Minimal polyline plot of mean best fitness with CI bands."""
    width, height, margin = 720, 420, 50
    palette = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
    all_vals = np.concatenate([np.concatenate([m, lo, hi]) for m, lo, hi in curves.values()])
    y_min, y_max = float(all_vals.min()), float(all_vals.max())
    if y_max - y_min < 1e-9:
        y_max = y_min + 1.0
    x_max = max(len(m) for m, _, _ in curves.values()) - 1
    x_max = max(x_max, 1)

    def sx(g):
        return margin + (width - 2 * margin) * g / x_max

    def sy(v):
        return height - margin - (height - 2 * margin) * (v - y_min) / (y_max - y_min)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" stroke="black"/>',
        f'<text x="{width / 2}" y="{height - 12}" text-anchor="middle" font-size="12">generation</text>',
        f'<text x="14" y="{height / 2}" font-size="12" transform="rotate(-90 14 {height / 2})" '
        f'text-anchor="middle">best fitness</text>',
        f'<text x="{margin - 6}" y="{height - margin + 4}" text-anchor="end" font-size="10">{y_min:.2f}</text>',
        f'<text x="{margin - 6}" y="{margin + 4}" text-anchor="end" font-size="10">{y_max:.2f}</text>',
    ]
    for idx, (label, (mean, lo, hi)) in enumerate(sorted(curves.items())):
        color = palette[idx % len(palette)]
        xs = np.arange(len(mean))
        band = (
            " ".join(f"{sx(g):.2f},{sy(v):.2f}" for g, v in zip(xs, hi))
            + " "
            + " ".join(f"{sx(g):.2f},{sy(v):.2f}" for g, v in zip(xs[::-1], lo[::-1]))
        )
        line = " ".join(f"{sx(g):.2f},{sy(v):.2f}" for g, v in zip(xs, mean))
        parts.append(f'<polygon points="{band}" fill="{color}" opacity="0.15"/>')
        parts.append(f'<polyline points="{line}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        parts.append(
            f'<text x="{width - margin + 4}" y="{margin + 14 * idx + 10}" font-size="11" '
            f'fill="{color}">{label}</text>'
        )
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts))


def cmd_validate_body(args) -> int:
    try:
        body = load_body_file(args.body)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot load body from {args.body}: {exc}")
    ok, reason = validity_report(body)
    if ok:
        note = "" if body.is_canonical_size else " (non-canonical size)"
        print(f"valid {body.h}x{body.w} body{note}")
        return 0
    raise ConfigError(f"invalid body: {reason}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="voxevo", description=__doc__)
    parser.add_argument("--version", action="version", version=f"voxevo {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON config file; flags override its values")
        p.add_argument("--env", choices=("walker", "bridgewalker"))
        p.add_argument("--size", help="morphology space, e.g. 5x5 or 7x7")
        p.add_argument("--gens", type=int, help="generations to evolve")
        p.add_argument("--pop", type=int, help="population size (default 16)")
        p.add_argument("--seed", type=int, help="base random seed (default 0)")
        p.add_argument("--checkpoint-interval", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--threads", type=int, help=f"evaluation threads (or ${THREADS_ENV_VAR})")
        p.add_argument("--paper-scale", action="store_true", help="full-scale defaults: 10000 generations, 10 seeds")
        p.add_argument("--resume", action="store_true", help="continue from the checkpoint in --out")

    p_evolve = sub.add_parser("evolve", help="run brain-body (or body-only) evolution")
    add_common(p_evolve)
    p_evolve.add_argument("--controller", choices=("modular", "fixed"))
    p_evolve.add_argument("--seeds", type=int, help="number of consecutive seeds to run (default 1)")
    p_evolve.set_defaults(func=cmd_evolve)

    p_retrain = sub.add_parser("retrain", help="optimize a fresh modular controller for a frozen body")
    add_common(p_retrain)
    p_retrain.add_argument("--body", required=True, help="morphology or champion JSON file")
    p_retrain.set_defaults(func=cmd_retrain)

    p_cross = sub.add_parser("crosseval", help="score a body under the fixed controller")
    p_cross.add_argument("--body", required=True)
    p_cross.add_argument("--env", choices=("walker", "bridgewalker"), default="walker")
    p_cross.add_argument("--out", help="optional JSON output file")
    p_cross.set_defaults(func=cmd_crosseval)

    p_report = sub.add_parser("report", help="compare groups of finished runs")
    p_report.add_argument("run_dirs", nargs="+", help="run output directories")
    p_report.add_argument("--out", required=True, help="report output directory")
    p_report.add_argument("--bootstrap", type=int, default=analysis.BOOTSTRAP_RESAMPLES)
    p_report.set_defaults(func=cmd_report)

    p_val = sub.add_parser("validate-body", help="check a body JSON against the validity rules")
    p_val.add_argument("--body", required=True)
    p_val.set_defaults(func=cmd_validate_body)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 3
    except Exception as exc:  # runtime failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
