"""Command-line entry point: ``diffmatte <subcommand> ...``.

Exit codes: 0 success, 2 usage, 3 I/O, 4 validation, 5 numeric.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import logging
import os
import subprocess
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from diffmatte import __version__
from diffmatte.data import (
    PnmError,
    gen_dataset,
    read_dataset,
    read_pgm,
    read_ppm,
    read_trimap,
    write_dataset,
    write_pgm,
)
from diffmatte.data.io import list_files, sample_key
from diffmatte.diffusion import MODES, sample
from diffmatte.errors import DomainError, NumericError
from diffmatte.evaluation import evaluate_model, mean_report, step_curves
from diffmatte.metrics import MetricReport, evaluate
from diffmatte.net.checkpoint import CheckpointError, load_checkpoint
from diffmatte.plotting import line_plot
from diffmatte.schedules import KINDS
from diffmatte.training import TrainConfig, fit, format_train_config, parse_train_config

log = logging.getLogger("diffmatte")

EXIT_USAGE, EXIT_IO, EXIT_VALIDATION, EXIT_NUMERIC = 2, 3, 4, 5
METRIC_FIELDS = ("sad", "mse", "grad", "conn")


def default_seed() -> int:
    return int(os.environ.get("DIFFMATTE_SEED", "0"))


def version_string() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).parent, capture_output=True, text=True, timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}-{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


@dataclasses.dataclass
class RunManifest:
    command: str
    config: str
    seed: int
    version: str
    started: str
    finished: str = ""

    def write(self, directory) -> Path:
        path = Path(directory) / "manifest.txt"
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = [
            f"command = {self.command}",
            f"seed = {self.seed}",
            f"version = {self.version}",
            f"started = {self.started}",
            f"finished = {self.finished}",
        ]
        lines += [f"config.{line}" for line in self.config.splitlines() if line.strip()]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


def start_manifest(directory, argv, seed, config: str = "") -> RunManifest:
    manifest = RunManifest(" ".join(argv), config, seed, version_string(), _now())
    manifest.write(directory)
    return manifest


def finish_manifest(manifest: RunManifest, directory) -> None:
    manifest.finished = _now()
    manifest.write(directory)


def _fmt(v: float) -> str:
    return "nan" if not np.isfinite(v) else f"{v:.6f}"


def write_csv(path, header, rows) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def _parallel_map(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# gen-data ------------------------------------------------------------------


def cmd_gen_data(args, argv) -> int:
    out = Path(args.out)
    manifest = start_manifest(out, argv, args.seed, f"count = {args.count}\nsize = {args.size}")
    write_dataset(out, gen_dataset(args.count, args.size, args.seed))
    finish_manifest(manifest, out)
    return 0


# train ---------------------------------------------------------------------


def parse_overrides(items) -> dict[str, str]:
    out = {}
    for kv in items or []:
        key, sep, value = kv.partition("=")
        if not sep or not key.strip():
            raise DomainError(f"--set expects KEY=VALUE, got {kv!r}")
        out[key.strip()] = value.strip()
    return out


def _train_overrides(args) -> dict[str, str]:
    over = parse_overrides(args.set)
    for flag, key in (("schedule", "schedule.kind"), ("input_scale", "schedule.b"), ("nd", "decoder.n_d"),
                      ("nf", "decoder.n_f"), ("feature_stride", "decoder.feature_stride"), ("seed", "seed"),
                      ("epochs", "epochs"), ("data", "data.dir"), ("out", "out_dir")):
        value = getattr(args, flag, None)
        if value is not None:
            over[key] = str(value)
    return over


def load_training_data(cfg: TrainConfig):
    if cfg.data_dir:
        return read_dataset(cfg.data_dir)
    return gen_dataset(cfg.data_count, cfg.data_size, cfg.data_seed)


def cmd_train(args, argv) -> int:
    text = Path(args.config).read_text(encoding="utf-8") if args.config else ""
    cfg = parse_train_config(text, _train_overrides(args))
    if cfg.out_dir is None:
        raise DomainError("train needs an output directory (out_dir in the config or --out)")
    manifest = start_manifest(cfg.out_dir, argv, cfg.seed, format_train_config(cfg))
    dataset = load_training_data(cfg)
    result = fit(cfg, dataset)
    rows = [[i + 1, *(_fmt(getattr(h, k)) for k in ("sp_l1", "l2", "lap", "grad", "total"))]
            for i, h in enumerate(result.history)]
    write_csv(Path(cfg.out_dir) / "losses.csv", ["epoch", "sp_l1", "l2", "lap", "grad", "total"], rows)
    finish_manifest(manifest, cfg.out_dir)
    return 0


# infer ---------------------------------------------------------------------


def cmd_infer(args, argv) -> int:
    out = Path(args.out)
    dirs = [out.parent] + ([Path(args.trace_dir)] if args.trace_dir else [])
    config = f"steps = {args.steps}\nmode = {args.mode}"
    manifests = [start_manifest(d, argv, args.seed, config) for d in dirs]
    model = load_checkpoint(args.ckpt)
    image = read_ppm(args.image)
    trimap = read_trimap(args.trimap)
    trace = sample(model, image, trimap, args.steps, args.mode, np.random.default_rng(args.seed))
    write_pgm(out, trace.alpha, maxval=65535)
    if args.trace_dir:
        for i, pred in enumerate(trace.predictions):
            write_pgm(Path(args.trace_dir) / f"step_{i:03d}.pgm16", pred, maxval=65535)
    for manifest, d in zip(manifests, dirs):
        finish_manifest(manifest, d)
    return 0


# eval ----------------------------------------------------------------------


def _eval_one(paths) -> MetricReport:
    pred, gt, tri = paths
    return evaluate(read_pgm(pred), read_pgm(gt), read_trimap(tri))


def prediction_files(directory) -> dict[str, Path]:
    """Matte files keyed by sample; ``pred_*`` beats other names, which beat ``alpha_*``."""
    found: dict[str, Path] = {}
    files = [p for ext in (".pgm16", ".pgm") for p in Path(directory).glob(f"*{ext}") if not p.name.startswith("trimap_")]
    rank = lambda p: 2 if p.name.startswith("pred_") else 0 if p.name.startswith("alpha_") else 1  # noqa: E731
    for path in sorted(files, key=lambda p: (rank(p), p.name)):
        found[sample_key(path.name)] = path
    return found


def cmd_eval(args, argv) -> int:
    out = Path(args.out)
    manifest = start_manifest(out.parent, argv, args.seed)
    preds = prediction_files(args.pred)
    gts = list_files(args.gt, "alpha", ".pgm16")
    tris = list_files(args.trimap, "trimap", ".pgm")
    keys = sorted(set(preds) & set(gts) & set(tris))
    if not keys:
        raise FileNotFoundError("no matching prediction / ground truth / trimap files")
    reports = _parallel_map(_eval_one, [(preds[k], gts[k], tris[k]) for k in keys], args.jobs)
    rows = [[k, *(_fmt(getattr(r, f)) for f in METRIC_FIELDS)] for k, r in zip(keys, reports)]
    mean = mean_report(reports)
    rows.append(["mean", *(_fmt(getattr(mean, f)) for f in METRIC_FIELDS)])
    write_csv(out, ["name", *METRIC_FIELDS], rows)
    finish_manifest(manifest, out.parent)
    return 0


# sweep ---------------------------------------------------------------------


def _sweep_point(job):
    """Train (or reuse) a model for one grid setting and evaluate it; never raises."""
    kind, setting, base_text, overrides, train_dir, eval_dir, ckpt, steps, seed = job
    try:
        if kind == "steps":
            model = load_checkpoint(ckpt)
            steps = int(setting)
        else:
            key = {"schedule": "schedule.kind", "input_scale": "schedule.b", "nd": "decoder.n_d"}[kind]
            cfg = parse_train_config(base_text, {**overrides, key: setting, "out_dir": "none"})
            train_set = read_dataset(train_dir) if train_dir else gen_dataset(cfg.data_count, cfg.data_size, cfg.data_seed)
            model = fit(cfg, train_set).model
        eval_set = read_dataset(eval_dir) if eval_dir else gen_dataset(8, 64, seed + 1)
        return mean_report(evaluate_model(model, eval_set, steps, seed=seed)), "ok"
    except (ValueError, ArithmeticError, OSError, PnmError, CheckpointError) as exc:
        nan = float("nan")
        return MetricReport(nan, nan, nan, nan), f"failed: {type(exc).__name__}"


def cmd_sweep(args, argv) -> int:
    out = Path(args.out)
    grid = [g.strip() for g in args.grid.split(",") if g.strip()]
    if args.kind == "steps" and not args.ckpt:
        raise DomainError("a steps sweep needs --ckpt")
    base_text = Path(args.config).read_text(encoding="utf-8") if args.config else ""
    overrides = parse_overrides(args.set)
    if args.seed is not None:
        overrides.setdefault("seed", str(args.seed))
    manifest = start_manifest(out, argv, args.seed, base_text)
    jobs = [(args.kind, g, base_text, overrides, args.data, args.eval_data, args.ckpt, args.steps, args.seed) for g in grid]
    results = _parallel_map(_sweep_point, jobs, args.jobs)
    rows = [[g, *(_fmt(getattr(r, f)) for f in METRIC_FIELDS), status] for g, (r, status) in zip(grid, results)]
    write_csv(out / "sweep.csv", ["setting", *METRIC_FIELDS, "status"], rows)
    sads = [r.sad for r, _ in results]
    (out / "sweep.svg").write_text(
        line_plot({"SAD": (list(range(len(grid))), sads)}, f"{args.kind} sweep", args.kind, "SAD", xticks=grid),
        encoding="utf-8",
    )
    finish_manifest(manifest, out)
    return 0


# diagnose-consistent -------------------------------------------------------


def cmd_diagnose(args, argv) -> int:
    out = Path(args.out)
    manifest = start_manifest(out, argv, args.seed, f"steps = {args.steps}")
    model = load_checkpoint(args.ckpt)
    samples = read_dataset(args.data)
    self_curve, gt_curve = step_curves(model, samples, args.steps, seed=args.seed)
    rows = [[i + 1, _fmt(a), _fmt(b)] for i, (a, b) in enumerate(zip(self_curve, gt_curve))]
    write_csv(out / "consistent.csv", ["step", "sad_self", "sad_consistent"], rows)
    xs = list(range(1, args.steps + 1))
    svg = line_plot({"self re-noising": (xs, list(self_curve)), "ground-truth re-noising": (xs, list(gt_curve))},
                    "per-step SAD", "step", "SAD")
    (out / "consistent.svg").write_text(svg, encoding="utf-8")
    finish_manifest(manifest, out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="diffmatte", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic dataset")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=default_seed())
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model from a key = value config file")
    p.add_argument("--config")
    p.add_argument("--out", help="output directory (overrides out_dir)")
    p.add_argument("--data", help="dataset directory (overrides data.dir)")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--schedule", choices=KINDS)
    p.add_argument("--input-scale", type=float)
    p.add_argument("--nd", type=int)
    p.add_argument("--nf", type=int)
    p.add_argument("--feature-stride", type=int, choices=(16, 32))
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="predict an alpha matte")
    p.add_argument("--image", required=True)
    p.add_argument("--trimap", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--mode", choices=MODES, default="stochastic")
    p.add_argument("--seed", type=int, default=default_seed())
    p.add_argument("--out", required=True)
    p.add_argument("--trace-dir")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score predicted mattes against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--trimap", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seed", type=int, default=default_seed())
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="ablation sweep over one setting")
    p.add_argument("--kind", choices=("schedule", "input_scale", "nd", "steps"), required=True)
    p.add_argument("--grid", required=True, help="comma-separated settings")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="base training config for training sweeps")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--ckpt", help="checkpoint for a steps sweep")
    p.add_argument("--data", help="training dataset directory")
    p.add_argument("--eval-data", help="evaluation dataset directory")
    p.add_argument("--steps", type=int, default=1, help="sampling steps for training sweeps")
    p.add_argument("--seed", type=int, default=default_seed())
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("diagnose-consistent", help="per-step SAD with self vs ground-truth re-noising")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--seed", type=int, default=default_seed())
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_diagnose)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args, ["diffmatte", *argv])
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DomainError, CheckpointError, PnmError) as exc:
        code = EXIT_IO if isinstance(exc, (CheckpointError, PnmError)) else EXIT_VALIDATION
        print(f"{'I/O' if code == EXIT_IO else 'validation'} error: {exc}", file=sys.stderr)
        return code
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
