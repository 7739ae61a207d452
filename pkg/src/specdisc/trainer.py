"""LS-GAN training of the generator against a spectrogram discriminator.

One iteration on a batch:

1. generate fake spectrograms (no graph);
2. discriminator step on ``mse(1, real maps) + mse(0, fake maps)``;
3. with the *updated* discriminator frozen, extract real features (no graph)
   and regenerate fakes with a graph; generator step on
   ``L_tts + lambda_a * L_adv + lambda_f * L_fm``.

Batch losses are means over samples.  The generator runs sample by sample;
the discriminator sees the whole batch in one packed pass.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields
from typing import Callable, Iterable, Sequence, TextIO

import numpy as np

from ._alloc import tune_allocator
from .data import CorpusConfig, SynthSample, batch_iter
from .discriminators import Discriminator, DiscriminatorOutput
from .generator import Generator, duration_loss, spec_loss
from .optim import Lookahead, make_optimizer
from .tensor import Tensor, add, backward, mae, mse, no_grad, scale

UNET_LAMBDAS = (0.2, 2.0)
ENCODER_ONLY_LAMBDAS = (1.0, 10.0)
CSV_COLUMNS = ("iter", "L_d", "L_a", "L_f", "L_tts", "L_g", "lr")


class NumericalAbort(FloatingPointError):
    """A loss term became NaN or infinite."""

    def __init__(self, term: str, value: float, iteration: int):
        self.term, self.value, self.iteration = term, value, iteration
        super().__init__(f"non-finite {term} = {value} at iteration {iteration}")


def default_lambdas(variant: str) -> tuple[float, float]:
    """``(lambda_a, lambda_f)``: U-Net variants use the smaller weights."""
    return ENCODER_ONLY_LAMBDAS if variant.lower() == "s-t" else UNET_LAMBDAS


@dataclass
class TrainConfig:
    lambda_a: float | None = None  # None -> variant default
    lambda_f: float | None = None
    lambda_dur: float = 0.02
    batch_size: int = 4
    total_iters: int = 2000
    lr_start: float = 1e-3
    lr_floor: float = 1e-5
    decay_start_iter: int = 20000
    decay_mode: str = "begin"  # "begin": decay starts at decay_start_iter; "complete": reaches floor there
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lookahead_k: int = 5
    lookahead_alpha: float = 0.5
    freeze_discriminator: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.decay_mode not in ("begin", "complete"):
            raise ValueError(f"decay_mode must be 'begin' or 'complete', got {self.decay_mode!r}")
        for name in ("lambda_a", "lambda_f", "lambda_dur"):
            val = getattr(self, name)
            if val is not None and val < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0 < self.lr_floor <= self.lr_start:
            raise ValueError("need 0 < lr_floor <= lr_start")
        if self.batch_size < 1 or self.total_iters < 0:
            raise ValueError("batch_size must be positive and total_iters non-negative")

    def resolved(self, variant: str) -> "TrainConfig":
        la, lf = default_lambdas(variant)
        vals = {f.name: getattr(self, f.name) for f in fields(self)}
        vals["lambda_a"] = la if self.lambda_a is None else self.lambda_a
        vals["lambda_f"] = lf if self.lambda_f is None else self.lambda_f
        return TrainConfig(**vals)


@dataclass
class LossReport:
    iter: int
    L_d: float
    L_a: float
    L_f: float
    L_tts: float
    L_g: float
    lr: float
    L_spec: float = 0.0
    L_dur: float = 0.0

    def csv_row(self) -> list[str]:
        return [str(self.iter)] + [f"{getattr(self, c):.8e}" for c in CSV_COLUMNS[1:]]


def lr_at(iteration: int, cfg: TrainConfig) -> float:
    """Learning rate: constant, then exponential decay down to ``lr_floor``."""
    start, floor = cfg.lr_start, cfg.lr_floor
    if cfg.decay_mode == "complete":
        span, offset = cfg.decay_start_iter, 0
    else:
        span, offset = cfg.total_iters - cfg.decay_start_iter, cfg.decay_start_iter
    if iteration <= offset or span <= 0:
        return start
    kappa = math.log(start / floor) / span
    return max(start * math.exp(-kappa * (iteration - offset)), floor)


# -- losses ----------------------------------------------------------------------
def _maps(out: DiscriminatorOutput) -> list[Tensor]:
    return [out.coarse] if out.fine is None else [out.coarse, out.fine]


def discriminator_loss(out_real: DiscriminatorOutput, out_fake: DiscriminatorOutput) -> Tensor:
    """``mse(1, C_r) + mse(1, F_r) + mse(0, C_f) + mse(0, F_f)``; fine terms dropped when absent."""
    real, fake = _maps(out_real), _maps(out_fake)
    if len(real) != len(fake) or any(r.shape != f.shape for r, f in zip(real, fake)):
        raise ValueError("real and fake discriminator outputs differ in structure")
    loss = mse(real[0], 1.0)
    for m in real[1:]:
        loss = add(loss, mse(m, 1.0))
    for m in fake:
        loss = add(loss, mse(m, 0.0))
    return loss


def adversarial_loss(out_fake: DiscriminatorOutput) -> Tensor:
    maps = _maps(out_fake)
    loss = mse(maps[0], 1.0)
    for m in maps[1:]:
        loss = add(loss, mse(m, 1.0))
    return loss


def feature_matching_loss(hidden_fake: Sequence[Tensor], hidden_real: Sequence[Tensor]) -> Tensor:
    """Mean over layers of the MAE between fake and (constant) real features."""
    if len(hidden_fake) != len(hidden_real) or not hidden_fake:
        raise ValueError(f"hidden feature lists differ: {len(hidden_fake)} vs {len(hidden_real)}")
    total = None
    for hf, hr in zip(hidden_fake, hidden_real):
        term = mae(hf, hr.data)
        total = term if total is None else add(total, term)
    return scale(total, 1.0 / len(hidden_fake))


def generator_adv_losses(out_fake: DiscriminatorOutput, out_real: DiscriminatorOutput) -> tuple[Tensor, Tensor]:
    return adversarial_loss(out_fake), feature_matching_loss(out_fake.hidden, out_real.hidden)


def _mean(terms: list[Tensor]) -> Tensor:
    total = terms[0]
    for t in terms[1:]:
        total = add(total, t)
    return scale(total, 1.0 / len(terms))


def _check(name: str, value: float, iteration: int) -> float:
    if not math.isfinite(value):
        raise NumericalAbort(name, value, iteration)
    return value


# -- steps -------------------------------------------------------------------------
def make_optimizers(gen: Generator, disc: Discriminator | None, cfg: TrainConfig):
    def opt(module):
        return make_optimizer(module.parameters(), lr=cfg.lr_start, betas=(cfg.beta1, cfg.beta2), eps=cfg.eps,
                              k=cfg.lookahead_k, alpha=cfg.lookahead_alpha)

    return opt(gen), (None if disc is None else opt(disc))


def _generator_terms(gen: Generator, sample: SynthSample, cfg: TrainConfig):
    fake, dur_pred = gen(sample.tokens, sample.durations)
    l_spec = spec_loss(fake, sample.target)
    l_dur = duration_loss(dur_pred, sample.durations)
    l_tts = add(l_spec, scale(l_dur, cfg.lambda_dur))
    return fake, l_spec, l_dur, l_tts


def discriminator_step(gen: Generator, disc: Discriminator, batch: Sequence[SynthSample], cfg: TrainConfig,
                       opt_d: Lookahead, lr: float, iteration: int = 0) -> float:
    with no_grad():
        fakes = [gen(s.tokens, s.durations)[0] for s in batch]
    disc.zero_grad()
    with disc.shared_weights():
        outs = disc.forward_batch([Tensor(s.target) for s in batch] + fakes)
        n = len(batch)
        l_d = _mean([discriminator_loss(outs[i], outs[n + i]) for i in range(n)])
    _check("L_d", l_d.item(), iteration)
    backward(l_d)
    if not cfg.freeze_discriminator:
        opt_d.step(lr)
    disc.zero_grad()
    return l_d.item()


def train_step(gen: Generator, disc: Discriminator, batch: Sequence[SynthSample], cfg: TrainConfig,
               opts: tuple[Lookahead, Lookahead], iteration: int) -> LossReport:
    """One discriminator update followed by one generator update.

    ``cfg`` must have resolved lambdas (see :meth:`TrainConfig.resolved`).
    """
    if cfg.lambda_a is None or cfg.lambda_f is None:
        raise ValueError("unresolved lambda_a / lambda_f; call TrainConfig.resolved(variant)")
    opt_g, opt_d = opts
    lr = lr_at(iteration, cfg)
    l_d = discriminator_step(gen, disc, batch, cfg, opt_d, lr, iteration)

    gen.zero_grad()
    with disc.frozen(), disc.shared_weights():
        with no_grad():
            real_outs = disc.forward_batch([Tensor(s.target) for s in batch])
        gen_terms = [_generator_terms(gen, s, cfg) for s in batch]
        fake_outs = disc.forward_batch([t[0] for t in gen_terms])
        per = []
        for (_, l_spec, l_dur, l_tts), out_f, out_r in zip(gen_terms, fake_outs, real_outs):
            l_a, l_f = generator_adv_losses(out_f, out_r)
            l_g = add(add(l_tts, scale(l_a, cfg.lambda_a)), scale(l_f, cfg.lambda_f))
            per.append((l_g, l_tts, l_a, l_f, l_spec, l_dur))
    l_g = _mean([p[0] for p in per])
    values = {name: float(np.mean([p[i].item() for p in per]))
              for i, name in enumerate(("L_g", "L_tts", "L_a", "L_f", "L_spec", "L_dur"))}
    values["L_g"] = l_g.item()
    for name in ("L_tts", "L_a", "L_f", "L_g"):
        _check(name, values[name], iteration)
    backward(l_g)
    opt_g.step(lr)
    gen.zero_grad()
    return LossReport(iter=iteration, L_d=l_d, lr=lr, **values)


def supervised_step(gen: Generator, batch: Sequence[SynthSample], cfg: TrainConfig, opt_g: Lookahead,
                    iteration: int) -> LossReport:
    """Generator update on ``L_tts`` alone (the no-GAN baseline)."""
    lr = lr_at(iteration, cfg)
    gen.zero_grad()
    per = [_generator_terms(gen, s, cfg)[1:] for s in batch]
    l_tts = _mean([p[2] for p in per])
    value = _check("L_tts", l_tts.item(), iteration)
    backward(l_tts)
    opt_g.step(lr)
    gen.zero_grad()
    return LossReport(iter=iteration, L_d=0.0, L_a=0.0, L_f=0.0, L_tts=value, L_g=value, lr=lr,
                      L_spec=float(np.mean([p[0].item() for p in per])),
                      L_dur=float(np.mean([p[1].item() for p in per])))


class CsvLossWriter:
    def __init__(self, stream: TextIO, header: bool = True):
        self.stream = stream
        self.writer = csv.writer(stream, lineterminator="\n")
        if header:
            self.writer.writerow(CSV_COLUMNS)

    def write(self, report: LossReport) -> None:
        self.writer.writerow(report.csv_row())
        self.stream.flush()


def train(gen: Generator, disc: Discriminator | None, corpus_cfg: CorpusConfig, cfg: TrainConfig,
          on_report: Callable[[LossReport], None] | None = None,
          on_iteration_end: Callable[[int, Generator, Discriminator | None, tuple], None] | None = None,
          start_iter: int = 1, opts: tuple | None = None) -> list[LossReport]:
    """Run iterations ``start_iter .. cfg.total_iters``; ``disc=None`` trains without the GAN terms."""
    tune_allocator()
    if disc is not None:
        cfg = cfg.resolved(disc.config.variant)
    opts = make_optimizers(gen, disc, cfg) if opts is None else opts
    batches: Iterable = batch_iter(corpus_cfg, cfg.batch_size, epoch_seed=cfg.seed)
    for _ in range(start_iter - 1):
        next(batches)
    reports = []
    for it in range(start_iter, cfg.total_iters + 1):
        batch = next(batches)
        if disc is None:
            rep = supervised_step(gen, batch, cfg, opts[0], it)
        else:
            rep = train_step(gen, disc, batch, cfg, opts, it)
        reports.append(rep)
        if on_report is not None:
            on_report(rep)
        if on_iteration_end is not None:
            on_iteration_end(it, gen, disc, opts)
    return reports
