"""``sadm`` command line: train, finetune, sample, eval, verify, gradcheck, ablate.

Exit codes: 0 success, 1 usage or configuration error, 2 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import theory
from .autodiff import NonFiniteError
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, ExperimentConfig
from .datasets import DatasetError, format_float, sample, target_spec, write_points
from .experiments import ablation_table, evaluate, generate, run_ablation, sadm_gradcheck
from .sampler import SamplerError
from .trainer import LOG_FIELDS, TrainingDivergence, finetune, run_training

CHECKPOINT = "checkpoint.sadm"
LOCK = ".lock"


class UsageError(Exception):
    pass


class NumericFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="master seed (non-negative)")
    common.add_argument("--out", help="run directory (default: $SADM_OUT/<command>-seed<seed>)")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config value by dot path, e.g. trainer.batch_size=32")

    p = _Parser(prog="sadm", description="Structure-guided adversarial training of toy diffusion models.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", parents=[common], help="train a model")
    t.add_argument("--resume", action="store_true", help="continue from the run directory's checkpoint")
    t.add_argument("--max-steps", type=int, help="stop after this many total steps (resumable)")
    t.add_argument("--overwrite", action="store_true", help="replace an existing run directory")

    f = sub.add_parser("finetune", parents=[common], help="fine-tune a checkpoint on a target dataset")
    f.add_argument("--from", dest="source", required=True, help="checkpoint file or run directory")
    f.add_argument("--overwrite", action="store_true")

    s = sub.add_parser("sample", parents=[common], help="draw samples from a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--n", type=int, default=None, help="number of samples (default sampler.n_samples)")
    s.add_argument("--output", help="CSV path (default <out>/samples.csv)")

    e = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint against held-out data")
    e.add_argument("--checkpoint", required=True)

    v = sub.add_parser("verify", parents=[common], help="run the theory checks")
    v.add_argument("--seeds", type=int, default=20, help="seeds per Jensen configuration")
    v.add_argument("--n-mc", type=int, default=2000)

    sub.add_parser("gradcheck", parents=[common], help="finite-difference check of the full loss")

    a = sub.add_parser("ablate", parents=[common], help="compare instance_only, structure_guided, full_sadm")
    a.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds from --seed")
    return p


def resolve_config(args) -> ExperimentConfig:
    cfg = cfgmod.load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError(f"--seed must be non-negative, got {args.seed}")
        cfg = cfgmod.with_overrides(cfg, [f"seed={args.seed}"])
    return cfgmod.with_overrides(cfg, args.overrides)


def run_dir(args, cfg: ExperimentConfig) -> Path:
    if args.out:
        return Path(args.out)
    return Path(os.environ.get("SADM_OUT", "runs")) / f"{args.command}-seed{cfg.seed}"


@contextmanager
def locked(directory: Path):
    """Exclusive ownership of a run directory for the lifetime of the command."""
    directory.mkdir(parents=True, exist_ok=True)
    lock = directory / LOCK
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise UsageError(f"run directory {directory} is locked by another process "
                         f"(remove {lock} if that process is gone)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield directory
    finally:
        lock.unlink(missing_ok=True)


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return format_float(float(v))
    return str(v)


class RunLog:
    """CSV training log, one row per optimizer step, flushed as it goes."""

    def __init__(self, path: Path, append: bool = False):
        self.fh = open(path, "a" if append else "w", newline="")
        if not append:
            self.fh.write(",".join(LOG_FIELDS) + "\n")

    def write(self, row: dict) -> None:
        self.fh.write(",".join(_fmt(row[k]) for k in LOG_FIELDS) + "\n")
        self.fh.flush()

    def close(self) -> None:
        self.fh.close()


def truncate_log(path: Path, step: int) -> None:
    """Drop rows past ``step`` (written after the checkpoint a resume starts from)."""
    lines = path.read_text().splitlines(keepends=True)
    keep = lines[:1] + [ln for ln in lines[1:] if int(ln.split(",", 1)[0]) <= step]
    path.write_text("".join(keep))


def write_metrics(path: Path, metrics: dict) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "value"])
        for k, v in metrics.items():
            w.writerow([k, _fmt(v)])


def _prepare(directory: Path, overwrite: bool, cfg: ExperimentConfig) -> None:
    snap = directory / "config.json"
    if snap.exists() and not overwrite:
        raise UsageError(f"{directory} already holds a run; pass --overwrite or choose another --out")
    snap.write_text(cfgmod.dumps(cfg))


def cmd_train(args, cfg: ExperimentConfig) -> int:
    directory = run_dir(args, cfg)
    with locked(directory):
        ckpt, log_path = directory / CHECKPOINT, directory / "log.csv"
        data, _ = sample(cfg.dataset(), cfg.data.n_train)
        state = None
        if args.resume:
            if not ckpt.exists():
                raise UsageError(f"--resume: no checkpoint in {directory}")
            snap = directory / "config.json"
            if snap.exists() and cfgmod.load_config(snap) != cfg:
                raise UsageError("--resume: resolved config differs from the run's config.json")
            state = load_checkpoint(ckpt)
            truncate_log(log_path, state.step)
        else:
            _prepare(directory, args.overwrite, cfg)
        log = RunLog(log_path, append=args.resume)
        try:
            state, _ = run_training(cfg.train_config(), data, state=state, on_step=log.write,
                                    on_checkpoint=lambda st: save_checkpoint(st, ckpt),
                                    model_kwargs=cfg.model_kwargs(), wall_time=cfg.log.wall_time,
                                    max_steps=args.max_steps)
        finally:
            log.close()
        save_checkpoint(state, ckpt)
        if state.done:
            metrics = {"step": state.step, **evaluate(state.denoiser, cfg)}
            write_metrics(directory / "metrics.csv", metrics)
            print(" ".join(f"{k}={_fmt(v)}" for k, v in metrics.items()))
        else:
            print(f"stopped at step {state.step} ({state.phase}); resume with --resume")
    return 0


def _source_checkpoint(source: str) -> Path:
    p = Path(source)
    return p / CHECKPOINT if p.is_dir() else p


def cmd_finetune(args, cfg: ExperimentConfig) -> int:
    pretrained = load_checkpoint(_source_checkpoint(args.source))
    directory = run_dir(args, cfg)
    with locked(directory):
        _prepare(directory, args.overwrite, cfg)
        spec = target_spec(cfg.finetune.target, cfg.seed)
        data, _ = sample(spec, cfg.data.n_train)
        log = RunLog(directory / "log.csv")
        try:
            state, _ = finetune(pretrained, data, cfg.finetune_config(), base=pretrained.config,
                                on_step=log.write, wall_time=cfg.log.wall_time)
        finally:
            log.close()
        save_checkpoint(state, directory / CHECKPOINT)
        metrics = {"target": cfg.finetune.target, "freeze_mask": cfg.finetune.freeze_mask,
                   "sliced_w_pretrained": evaluate(pretrained.denoiser, cfg, spec)["sliced_w"],
                   "sliced_w_finetuned": evaluate(state.denoiser, cfg, spec)["sliced_w"]}
        write_metrics(directory / "metrics.csv", metrics)
        print(" ".join(f"{k}={_fmt(v)}" for k, v in metrics.items()))
    return 0


def cmd_sample(args, cfg: ExperimentConfig) -> int:
    state = load_checkpoint(args.checkpoint)
    n = args.n if args.n is not None else cfg.sampler.n_samples
    if n < 1:
        raise UsageError(f"--n must be positive, got {n}")
    points = generate(state.denoiser, cfg, n)
    out = Path(args.output) if args.output else run_dir(args, cfg) / "samples.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_points(out, points)
    print(f"wrote {n} samples to {out}")
    return 0


def cmd_eval(args, cfg: ExperimentConfig) -> int:
    state = load_checkpoint(args.checkpoint)
    metrics = evaluate(state.denoiser, cfg)
    directory = run_dir(args, cfg)
    directory.mkdir(parents=True, exist_ok=True)
    write_metrics(directory / "metrics.csv", metrics)
    print(" ".join(f"{k}={_fmt(v)}" for k, v in metrics.items()))
    return 0


def cmd_verify(args, cfg: ExperimentConfig) -> int:
    results = theory.run_all(args.seeds, args.n_mc, cfg.seed)
    report = theory.format_report(results)
    print(report)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "verify.txt").write_text(report + "\n")
    if not all(r.passed for r in results):
        raise NumericFailure("theory checks failed")
    return 0


def cmd_gradcheck(args, cfg: ExperimentConfig) -> int:
    t = cfg.trainer
    err = sadm_gradcheck(cfg.seed, relation=t.relation, distance=t.distance, struct_weight=t.struct_weight)
    print(f"max relative error {err:.3e} over all denoiser and encoder parameters")
    if not err < 1e-4:
        raise NumericFailure(f"gradient check failed: {err:.3e} >= 1e-4")
    return 0


def cmd_ablate(args, cfg: ExperimentConfig) -> int:
    if args.seeds < 1:
        raise UsageError(f"--seeds must be positive, got {args.seeds}")
    directory = run_dir(args, cfg)
    with locked(directory):
        seeds = range(cfg.seed, cfg.seed + args.seeds)

        def progress(row):
            print(f"seed {row['seed']} {row['mode']}: sliced_W={row['sliced_w']:.4f} "
                  f"({row['seconds']:.0f}s)", file=sys.stderr)

        res = run_ablation(cfg, seeds, progress=progress)
        with open(directory / "ablation.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            keys = ["seed", "mode", "sliced_w", "mode_coverage", "heatmap_gap"]
            w.writerow(keys)
            for row in res.rows:
                w.writerow([_fmt(row.get(k, "")) for k in keys])
        (directory / "config.json").write_text(cfgmod.dumps(cfg))
        print(ablation_table(res))
    return 0


COMMANDS = {"train": cmd_train, "finetune": cmd_finetune, "sample": cmd_sample, "eval": cmd_eval,
            "verify": cmd_verify, "gradcheck": cmd_gradcheck, "ablate": cmd_ablate}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = resolve_config(args)
        return COMMANDS[args.command](args, cfg)
    except (UsageError, ConfigError, DatasetError, CheckpointError, FileNotFoundError) as exc:
        print(f"sadm: error: {exc}", file=sys.stderr)
        return 1
    except TrainingDivergence as exc:
        print(f"sadm: numeric failure at step {exc.step}: {exc}", file=sys.stderr)
        return 2
    except (NumericFailure, NonFiniteError, SamplerError, FloatingPointError) as exc:
        print(f"sadm: numeric failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
