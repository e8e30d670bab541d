"""Command-line harness: ``hetflow generate|fit|run|compare|models``."""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

from . import perfmodel
from .errors import AuditError, ConfigurationError, FittingError, HetflowError, InputError
from .experiment import ExperimentPlan, execute, run_comparison, write_outcome
from .io import atomic_write_text, read_json, write_json
from .kinds import Design, TaskKind
from .metrics import format_comparison_csv, format_comparison_text
from .trace import parse_trace_csv
from .workload import WorkloadSpec, generate_workload, load_workload, write_manifest

log = logging.getLogger("hetflow")

EXIT_OK, EXIT_USAGE, EXIT_AUDIT = 0, 2, 3


def out_dir(args) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    return Path(os.environ.get("HETFLOW_OUT", "hetflow-out"))


def _config(args) -> dict:
    return read_json(args.config) if getattr(args, "config", None) else {}


def _workload_spec(args, seed: int) -> WorkloadSpec:
    return WorkloadSpec(args.count, args.mean, args.std, args.min, args.max, seed)


def add_workload_flags(p, count_default=200):
    p.add_argument("--count", type=int, default=count_default, help="number of images")
    p.add_argument("--mean", type=float, default=1304.85, help="mean image size (MB)")
    p.add_argument("--std", type=float, default=512.68, help="image size std (MB)")
    p.add_argument("--min", type=float, default=50.0, help="smallest image (MB)")
    p.add_argument("--max", type=float, default=2770.0, help="largest image (MB)")


def add_run_flags(p):
    p.add_argument("--config", help="run config JSON; flags override its values")
    p.add_argument("--manifest", help="workload manifest CSV (default: generate one)")
    p.add_argument("--backend", choices=("sim", "realtime"), default=None)
    p.add_argument("--poll", type=float, default=None, help="queue poll interval (s)")
    p.add_argument("--time-scale", type=float, default=None,
                   help="wall seconds per model second on the realtime backend")
    p.add_argument("--noise-std", type=float, default=None, help="override every model's noise (s)")
    p.add_argument("--models", help="model registry JSON")
    p.add_argument("--out", help="output directory (default $HETFLOW_OUT or ./hetflow-out)")
    add_workload_flags(p)


def _run_overrides(args, cfg: dict) -> dict:
    data = dict(cfg)
    if args.models:
        data["models"] = read_json(args.models)
    for key, val in (("backend", args.backend), ("poll_interval_s", args.poll),
                     ("time_scale", args.time_scale), ("noise_std", args.noise_std)):
        if val is not None:
            data[key] = val
    return data


def cmd_generate(args) -> int:
    images = generate_workload(_workload_spec(args, args.seed))
    path = Path(args.out) if args.out else out_dir(args) / "workload.csv"
    write_manifest(images, path)
    print(f"wrote {len(images)} images to {path}")
    return EXIT_OK


def _read_pairs(args) -> list[tuple[float, float]]:
    text = Path(args.input).read_text(encoding="utf-8")
    if not text.strip():
        raise InputError(f"{args.input} is empty")
    header = next(csv.reader(io.StringIO(text)))
    if "task_id" in header:
        if not args.manifest:
            raise InputError("fitting a trace needs --manifest for image sizes")
        sizes = {img.id: img.size_mb for img in load_workload(args.manifest)}
        kind = TaskKind.parse(args.kind)
        try:
            return [(sizes[r.image_id], r.duration) for r in parse_trace_csv(text, args.input)
                    if r.kind is kind and r.outcome == "ok"]
        except KeyError as exc:
            raise InputError(f"trace image {exc} missing from manifest") from exc
    pairs = []
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if lineno == 1 or not row:
            continue
        try:
            pairs.append((float(row[0]), float(row[1])))
        except (ValueError, IndexError) as exc:
            raise InputError(f"{args.input}:{lineno}: expected size_mb,duration_s") from exc
    return pairs


def cmd_fit(args) -> int:
    pairs = _read_pairs(args)
    lo, hi = args.range
    if args.bins_csv:
        in_range = [p for p in pairs if lo <= p[0] <= hi]
        bins = perfmodel.bin_by_size(in_range, args.bin_width, (lo, hi))
        atomic_write_text(args.bins_csv, perfmodel.format_bins_csv(bins))
    if not args.all_bins:
        pairs = perfmodel.restrict_to_representative_bins(pairs, tuple(args.bins), args.bin_width, (lo, hi))
    fit = perfmodel.fit_linear(pairs)
    print(f"alpha={fit.alpha:.6g} beta={fit.beta:.6g} r_squared={fit.r_squared:.6f} "
          f"s_error={fit.s_error:.6g} n={fit.n_points}")
    if args.json:
        write_json(args.json, fit.to_dict())
    return EXIT_OK


def cmd_run(args) -> int:
    from .designs import load_run_config

    data = _run_overrides(args, _config(args))
    cfg = load_run_config(data, design=args.design, seed=args.seed)
    if args.manifest:
        workload = load_workload(args.manifest)
    else:
        workload = generate_workload(_workload_spec(args, cfg.config.seed))
    outcome = execute(cfg, workload)
    paths = write_outcome(outcome, cfg, workload, out_dir(args))
    r = outcome.report
    print(f"{cfg.design.value} seed={cfg.config.seed} backend={cfg.backend} images={len(workload)} "
          f"ttc={r.ttc:.1f}s gpu={r.utilization['gpu']['mean_pct']:.1f}% "
          f"cpu={r.utilization['cpu']['mean_pct']:.2f}% overhead={r.overheads.total:.2f}s")
    for name, p in paths.items():
        print(f"  {name}: {p}")
    return EXIT_OK


def _seeds(spec: str) -> list[int]:
    if "," in spec or "-" in spec.lstrip("-"):
        seeds = []
        for part in spec.split(","):
            if "-" in part:
                a, b = part.split("-")
                seeds.extend(range(int(a), int(b) + 1))
            else:
                seeds.append(int(part))
        return seeds
    return list(range(int(spec)))


def cmd_compare(args) -> int:
    data = _run_overrides(args, _config(args))
    out = out_dir(args)
    plan = ExperimentPlan(
        designs=[Design.parse(d) for d in args.designs.split(",")],
        seeds=_seeds(args.seeds),
        workload=_workload_spec(args, 0),
        manifest=Path(args.manifest) if args.manifest else None,
        run=data,
        backend=data.get("backend", "sim"),
        out_dir=out / "runs" if args.keep_runs else None,
    )
    result = run_comparison(plan, keep_traces=False)
    atomic_write_text(out / "comparison.csv", format_comparison_csv(result.rows))
    text = format_comparison_text(result.rows)
    atomic_write_text(out / "comparison.txt", text)
    summary = {
        "designs": [d.value for d in plan.designs],
        "seeds": plan.seeds,
        "mean_ttc_s": result.mean_ttc,
        "wins": dict(result.wins),
        "max_overhead_frac": max(row["overhead_frac"] for row in result.rows),
    }
    write_json(out / "summary.json", summary)
    print(text, end="")
    print("mean TTC: " + ", ".join(f"{d}={t:.1f}s" for d, t in result.mean_ttc.items()))
    print("lowest-TTC wins: " + ", ".join(f"{d}={result.wins.get(d, 0)}" for d in summary["designs"]))
    return EXIT_OK


def cmd_models(args) -> int:
    reg = perfmodel.default_registry()
    path = Path(args.out) if args.out else out_dir(args) / "models.json"
    write_json(path, reg.to_json())
    print(f"wrote model registry to {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hetflow", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic workload manifest")
    add_workload_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="manifest path (default $HETFLOW_OUT/workload.csv)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("fit", help="fit T(x) = alpha*x + beta to (size, duration) data")
    p.add_argument("input", help="CSV of size_mb,duration_s or a trace CSV")
    p.add_argument("--manifest", help="workload manifest (needed for trace input)")
    p.add_argument("--kind", default="t1", choices=("t1", "t2"))
    p.add_argument("--bins", type=int, nargs=2, default=list(perfmodel.REPRESENTATIVE_BINS),
                   metavar=("FIRST", "LAST"), help="representative bin range, 1-based")
    p.add_argument("--all-bins", action="store_true", help="fit every point, no bin restriction")
    p.add_argument("--bin-width", type=float, default=perfmodel.DEFAULT_BIN_WIDTH_MB)
    p.add_argument("--range", type=float, nargs=2, default=list(perfmodel.DEFAULT_BIN_RANGE_MB),
                   metavar=("LO", "HI"))
    p.add_argument("--bins-csv", help="also write per-bin statistics here")
    p.add_argument("--json", help="write the fit result as JSON")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("run", help="run one design on one seed")
    p.add_argument("--design", choices=[d.value for d in Design], default=None)
    p.add_argument("--seed", type=int, default=None)
    add_run_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="run designs over seeds and compare")
    p.add_argument("--designs", default="d1,d2,d2a")
    p.add_argument("--seeds", default="10", help="count (e.g. 10) or list/range (e.g. 0,3,5-7)")
    p.add_argument("--keep-runs", action="store_true", help="write every run's files under runs/")
    add_run_flags(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("models", help="write the default model registry JSON")
    p.add_argument("--out")
    p.set_defaults(func=cmd_models)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except AuditError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_AUDIT
    except (HetflowError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
