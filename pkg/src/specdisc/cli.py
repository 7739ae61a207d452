"""Command line: ``specdisc {train,heatmap,gradcheck}``.

Exit codes: 0 ok, 1 gradient check failed, 2 configuration or input error,
3 numerical abort during training.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import time
from typing import Sequence

from . import checkpoint as ckpt
from . import gradcheck
from .data import render_sample
from .discriminators import VARIANTS, build
from .export import discriminating_maps, write_heatmaps
from .generator import build_generator
from .runconfig import RunConfig, RunConfigError
from .tensor import no_grad
from .trainer import CsvLossWriter, NumericalAbort, make_optimizers, train

log = logging.getLogger("specdisc")

EXIT_OK, EXIT_GRADCHECK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def build_models(cfg: RunConfig):
    gen = build_generator(cfg.generator(), seed=cfg.seed)
    disc = build(cfg.discriminator(), seed=cfg.seed + 1)
    return gen, disc


def load_run(path: str):
    """Rebuild generator and discriminator from a checkpoint; returns ``(cfg, gen, disc, meta)``."""
    tensors, meta = ckpt.load(path)
    cfg = RunConfig.from_mapping(ckpt.run_config_from_meta(meta))
    gen, disc = build_models(cfg)
    ckpt.restore_module(gen, tensors, "generator")
    ckpt.restore_module(disc, tensors, "discriminator")
    return cfg, gen, disc, meta


def _checkpoint_prefix(out_dir: str, iteration: int) -> str:
    return os.path.join(out_dir, "checkpoints", f"iter_{iteration:06d}")


def _truncate_losses(path: str, last_iter: int) -> None:
    """Drop rows past ``last_iter`` so a resumed run continues the file cleanly."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    kept = rows[:1] + [r for r in rows[1:] if r and int(r[0]) <= last_iter]
    with open(path, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(kept)


def cmd_train(cfg: RunConfig, resume: str | None = None, on_report=None) -> int:
    """Train, writing ``losses.csv``, periodic checkpoints and ``final``.

    ``on_report`` additionally receives every :class:`LossReport` (which also
    carries the spectrogram and duration parts of ``L_tts``).
    """
    out_dir = cfg["out_dir"]
    every = int(cfg["checkpoint_every"])
    train_cfg = cfg.train()
    gen, disc = build_models(cfg)
    opts = make_optimizers(gen, disc, train_cfg)
    start = 1
    if resume:
        tensors, meta = ckpt.load(resume)
        saved = RunConfig.from_mapping(ckpt.run_config_from_meta(meta))
        mismatched = [k for k in ("disc.variant", "disc.channels", "data.n_mels", "data.seed", "seed")
                      if saved[k] != cfg[k]]
        if mismatched:
            raise RunConfigError(f"checkpoint was trained with different {', '.join(mismatched)}")
        start = ckpt.restore_training_state(tensors, meta, gen, disc, opts) + 1
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "run.cfg"), "w") as fh:
        fh.write(cfg.dumps())
    loss_path = os.path.join(out_dir, "losses.csv")
    if resume and os.path.exists(loss_path):
        _truncate_losses(loss_path, start - 1)
        stream = open(loss_path, "a", newline="")
        writer = CsvLossWriter(stream, header=False)
    else:
        stream = open(loss_path, "w", newline="")
        writer = CsvLossWriter(stream)
    flat = cfg.to_flat()
    t0 = time.perf_counter()

    def report(rep):
        writer.write(rep)
        if on_report is not None:
            on_report(rep)

    def on_iteration_end(it, g, d, o):
        if it % every == 0 or it == train_cfg.total_iters:
            ckpt.save_training_state(_checkpoint_prefix(out_dir, it), it, g, d, o, flat)
            log.info("iter %d  %.1fs", it, time.perf_counter() - t0)

    with stream:
        train(gen, disc, cfg.corpus(), train_cfg, on_report=report, on_iteration_end=on_iteration_end,
              start_iter=start, opts=opts)
    final = ckpt.save_training_state(os.path.join(out_dir, "final"), train_cfg.total_iters, gen, disc, opts, flat)
    log.info("done: %s", final)
    return EXIT_OK


def cmd_heatmap(checkpoint: str, sample: int, out_dir: str, source: str = "real",
                generator_checkpoint: str | None = None) -> dict[str, str]:
    cfg, gen, disc, _ = load_run(checkpoint)
    corpus_cfg = cfg.corpus()
    s = render_sample(corpus_cfg, sample)
    if source == "real":
        spec = s.target
    else:
        if generator_checkpoint is not None:
            _, gen, _, _ = load_run(generator_checkpoint)
        with no_grad():
            spec = gen(s.tokens, s.durations)[0].data
    maps = discriminating_maps(disc, spec)
    if "fine" not in maps:
        print(f"notice: variant {cfg.variant} has no fine map; writing input and coarse images only",
              file=sys.stderr)
    return write_heatmaps(maps, out_dir, f"sample{sample:03d}_{source}")


def cmd_gradcheck(seed: int = 0, registry=None, stream=None) -> int:
    stream = sys.stdout if stream is None else stream
    results = gradcheck.run_all(seed=seed, registry=registry)
    width = max(len(r.name) for r in results)
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(f"{r.name:<{width}}  {r.max_rel_error:.3e}  {status}", file=stream)
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"gradient check failed for: {', '.join(failed)}", file=stream)
        return EXIT_GRADCHECK
    print(f"all {len(results)} checks passed (tolerance {gradcheck.TOLERANCE:g})", file=stream)
    return EXIT_OK


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="specdisc", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=("train", "heatmap", "gradcheck"))
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--checkpoint", help="checkpoint manifest (heatmap input, or train resume point)")
    p.add_argument("--sample", type=int, default=0, help="corpus sample index for heatmap")
    p.add_argument("--input", choices=("real", "fake"), default="real",
                   help="heatmap input: the corpus target or the generator's output")
    p.add_argument("--generator", help="checkpoint whose generator makes the fake input (default: --checkpoint)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    p.add_argument("-q", "--quiet", action="store_true")
    return p


def _run_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    overrides = {}
    for item in args.set:
        key, sep, val = item.partition("=")
        if not sep:
            raise RunConfigError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = val
    if args.variant:
        overrides["disc.variant"] = args.variant
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.out:
        overrides["out_dir"] = args.out
    cfg.update(overrides)
    return cfg


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    try:
        if args.command == "gradcheck":
            seed = args.seed if args.seed is not None else (_run_config(args).seed if args.config else 0)
            return cmd_gradcheck(seed)
        if args.command == "heatmap":
            if not args.checkpoint:
                raise RunConfigError("heatmap needs --checkpoint")
            paths = cmd_heatmap(args.checkpoint, args.sample, args.out or ".", args.input, args.generator)
            for p in paths.values():
                print(p)
            return EXIT_OK
        return cmd_train(_run_config(args), resume=args.checkpoint)
    except (RunConfigError, ckpt.CheckpointError, FileNotFoundError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
