"""Command-line harness: ``generate``, ``train``, ``report`` and ``audit``.

Defaults are written under ``$MMCRL_OUT`` (or ``./runs``) as
``<root>/<benchmark>/bundle`` and ``<root>/<benchmark>/seed<k>``.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .audit import audit_bundle
from .benchmarks import BENCHMARKS, get_benchmark
from .bundle import generate, load_bundle, save_bundle
from .metrics import EvalReport
from .trainer import TrainConfig, TrainingAborted, fit

OUT_ENV = "MMCRL_OUT"
ALPHAS = ("alg", "rec", "spr", "acy", "nll")
METRICS = ("mcc", "r2", "enshd")
COLUMN_TITLES = {"mod2": "2 Modalities", "mod3": "3 Modalities", "mod4": "4 Modalities"}
GENERATE_KEYS = ("seed", "n", "edge_density", "mechanism", "noise", "mixer_depth", "enforce_b1", "mixer_kind")


def default_root() -> Path:
    return Path(os.environ.get(OUT_ENV, "runs"))


@dataclass
class ExperimentSpec:
    benchmark: str = "mod2"
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    out: Path | None = None
    bundle: Path | None = None
    generate: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        get_benchmark(self.benchmark)
        if not self.seeds:
            raise ValueError("seed list must not be empty")
        unknown = set(self.generate) - set(GENERATE_KEYS)
        if unknown:
            raise ValueError(f"unknown generate keys: {sorted(unknown)}")

    def to_dict(self) -> dict:
        """Config-file form of this spec; ``--config`` accepts it back unchanged."""
        return {"benchmark": self.benchmark, "seeds": list(self.seeds), "out": str(self.out_dir),
                "bundle": str(self.bundle_dir), "generate": dict(self.generate), "train": self.train.to_dict()}

    @property
    def out_dir(self) -> Path:
        return Path(self.out) if self.out is not None else default_root() / self.benchmark

    @property
    def bundle_dir(self) -> Path:
        return Path(self.bundle) if self.bundle is not None else self.out_dir / "bundle"


def parse_seeds(text: str) -> list[int]:
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        elif part:
            seeds.append(int(part))
    return seeds


def build_spec(args) -> ExperimentSpec:
    """Merge the JSON config file (if any) with command-line overrides."""
    raw = json.loads(Path(args.config).read_text()) if getattr(args, "config", None) else {}
    unknown = set(raw) - {"benchmark", "seeds", "out", "bundle", "generate", "train"}
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    train = dict(raw.get("train", {}))
    gen = dict(raw.get("generate", {}))
    benchmark = args.benchmark or raw.get("benchmark", "mod2")
    seeds = raw.get("seeds", [0, 1, 2])
    if getattr(args, "seeds", None):
        seeds = parse_seeds(args.seeds)
    for key in ("epochs", "tau", "k", "lr", "batch_size"):
        val = getattr(args, key, None)
        if val is not None:
            train[key] = val
    for a in ALPHAS:
        val = getattr(args, f"alpha_{a}", None)
        if val is not None:
            train[f"alpha_{a}"] = val
    for key in ("n", "edge_density"):
        val = getattr(args, key, None)
        if val is not None:
            gen[key] = val
    if getattr(args, "data_seed", None) is not None:
        gen["seed"] = args.data_seed
    if getattr(args, "no_b1", False):
        gen["enforce_b1"] = False
    out = args.out or raw.get("out")
    bundle = getattr(args, "bundle", None) or raw.get("bundle")
    return ExperimentSpec(benchmark, [int(s) for s in seeds], Path(out) if out else None,
                          Path(bundle) if bundle else None, gen, TrainConfig.from_dict(train))


def generate_bundle(spec: ExperimentSpec):
    bench = get_benchmark(spec.benchmark)
    opts = {"seed": 0, "n": bench.n, "edge_density": bench.edge_density, **bench.generator, **spec.generate}
    seed, n = opts.pop("seed"), opts.pop("n")
    gt = generate(bench.pattern, n, seed, benchmark=bench.name, **opts)
    save_bundle(gt, spec.bundle_dir)
    return gt


def cmd_generate(args) -> int:
    spec = build_spec(args)
    gt = generate_bundle(spec)
    flag = " (empty: metadata only)" if gt.n == 0 else ""
    print(f"wrote {spec.bundle_dir}: J={gt.pattern.J} L={gt.pattern.L} n={gt.n}{flag}")
    return 0


def cmd_train(args) -> int:
    spec = build_spec(args)
    if not (spec.bundle_dir / "metadata.json").exists():
        if spec.bundle is not None:
            print(f"error: no bundle at {spec.bundle_dir}", file=sys.stderr)
            return 2
        generate_bundle(spec)
        print(f"generated {spec.bundle_dir}")
    gt = load_bundle(spec.bundle_dir)
    spec.out_dir.mkdir(parents=True, exist_ok=True)
    (spec.out_dir / "experiment.json").write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n")
    failures = 0
    for seed in spec.seeds:
        cfg = TrainConfig.from_dict({**spec.train.to_dict(), "seed": seed})
        run_dir = spec.out_dir / f"seed{seed}"
        try:
            _, report = fit(cfg, gt, run_dir, benchmark=spec.benchmark)
        except (TrainingAborted, ValueError) as exc:
            failures += 1
            print(f"seed {seed}: FAILED ({exc})", file=sys.stderr)
            continue
        print(f"seed {seed}: mcc={report.mcc:.4f} r2={report.r2:.4f} enshd={report.enshd} -> {run_dir}")
    return 1 if failures else 0


@dataclass
class Aggregate:
    benchmark: str
    runs: int
    mean: dict
    std: dict
    stand_in_dims: bool

    def cell(self, metric: str) -> str:
        return f"{self.mean[metric]:.2f} ± {self.std[metric]:.2f}"


def aggregate_reports(reports: list[EvalReport]) -> Aggregate:
    if not reports:
        raise ValueError("nothing to aggregate")
    ids = {r.benchmark for r in reports}
    if len(ids) > 1:
        raise ValueError(f"refusing to aggregate mixed benchmarks: {sorted(ids)}")
    mean, std = {}, {}
    for m in METRICS:
        vals = np.array([float(getattr(r, m)) for r in reports])
        mean[m] = float(vals.mean())
        std[m] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
    return Aggregate(ids.pop(), len(reports), mean, std, any(r.stand_in_dims for r in reports))


def aggregate_csv(aggs: list[Aggregate]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["benchmark", "runs", *(f"{m}_{s}" for m in METRICS for s in ("mean", "std")), "stand_in_dims"])
    for a in aggs:
        w.writerow([a.benchmark, a.runs, *(f"{v:.10g}" for m in METRICS for v in (a.mean[m], a.std[m])),
                    a.stand_in_dims])
    return buf.getvalue()


def read_aggregate_csv(text: str) -> list[Aggregate]:
    out = []
    for row in csv.DictReader(io.StringIO(text)):
        out.append(Aggregate(row["benchmark"], int(row["runs"]),
                             {m: float(row[f"{m}_mean"]) for m in METRICS},
                             {m: float(row[f"{m}_std"]) for m in METRICS},
                             row["stand_in_dims"] == "True"))
    return out


def tables_text(aggs: list[Aggregate]) -> str:
    """Models x benchmarks tables, one per metric, with aligned columns."""
    aggs = sorted(aggs, key=lambda a: a.benchmark)
    heads = ["Models", *(COLUMN_TITLES.get(a.benchmark, a.benchmark) for a in aggs)]
    blocks = []
    for metric, title in (("r2", "R²"), ("mcc", "MCC"), ("enshd", "EnSHD")):
        row = ["Ours", *(a.cell(metric) for a in aggs)]
        widths = [max(len(h), len(c)) for h, c in zip(heads, row)]
        line = lambda cells: "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
        blocks.append(f"{title} (mean ± sample std)\n{line(heads)}\n{line(row)}\n")
    if any(a.stand_in_dims for a in aggs):
        blocks.append("note: benchmark dimensions are desk-scale stand-ins\n")
    return "\n".join(blocks)


def cmd_report(args) -> int:
    aggs = []
    for path in args.combine or []:
        aggs.extend(read_aggregate_csv(Path(path).read_text()))
    if args.runs:
        reports = [EvalReport.from_text((Path(d) / "report.txt").read_text()) for d in args.runs]
        try:
            aggs.append(aggregate_reports(reports))
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
    if not aggs:
        print("error: give run directories or --combine files", file=sys.stderr)
        return 2
    csv_text, text = aggregate_csv(aggs), tables_text(aggs)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.csv").write_text(csv_text)
        (out / "summary.txt").write_text(text)
    print(text, end="")
    return 0


def cmd_audit(args) -> int:
    if args.bundle_dir:
        path = Path(args.bundle_dir)
    else:
        path = ExperimentSpec(args.benchmark or "mod2", out=Path(args.out) if args.out else None).bundle_dir
    gt = load_bundle(path)
    text = audit_bundle(gt, seed=args.seed).to_text()
    (path / "audit.txt").write_text(text)
    print(text, end="")
    return 0


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with benchmark/seeds/out/bundle/generate/train sections")
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV}/<benchmark>)")
    p.add_argument("--benchmark", choices=sorted(BENCHMARKS))
    p.add_argument("--n", type=int, help="sample count")
    p.add_argument("--edge-density", type=float)
    p.add_argument("--data-seed", type=int, help="seed of the generated bundle")
    p.add_argument("--no-b1", action="store_true", help="disable the non-overlap check when sampling")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mmcrl", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a ground-truth bundle")
    _common(g)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train one run per seed and evaluate it")
    _common(t)
    t.add_argument("--bundle", help="bundle directory (generated when absent)")
    t.add_argument("--seeds", help="comma list or ranges, e.g. 0,1,2 or 0-4")
    t.add_argument("--epochs", type=int)
    t.add_argument("--tau", type=float)
    t.add_argument("--k", type=float)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch-size", type=int)
    for a in ALPHAS:
        t.add_argument(f"--alpha-{a}", type=float)
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("report", help="aggregate run reports as mean ± std tables")
    r.add_argument("runs", nargs="*", help="run directories of one benchmark")
    r.add_argument("--combine", nargs="+", help="summary.csv files to merge into one table")
    r.add_argument("--out", help="directory for summary.csv and summary.txt")
    r.set_defaults(func=cmd_report)

    a = sub.add_parser("audit", help="check the identifiability assumptions on a bundle")
    a.add_argument("bundle_dir", nargs="?")
    a.add_argument("--benchmark", choices=sorted(BENCHMARKS))
    a.add_argument("--out")
    a.add_argument("--seed", type=int, default=0)
    a.set_defaults(func=cmd_audit)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
