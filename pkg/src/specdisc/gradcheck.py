"""Finite-difference gradient checks for every differentiable op, layer, loss and model.

Each registered case builds small random inputs and a closure that maps their
current values to a scalar.  The analytic gradient from :func:`backward` is
compared against central differences; the error of one input tensor is
``||analytic - numeric|| / max(||analytic||, ||numeric||)``, and a case's error
is its worst input.  Large parameters are checked on a random subset of entries.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from . import conv as C
from . import tensor as T
from .data import CorpusConfig, render_sample
from .discriminators import DiscriminatorConfig, build
from .generator import GeneratorConfig, build_generator, tts_loss
from .layers import Conv1d, Conv2d, ConvTranspose1d, ConvTranspose2d, Embedding, Linear, Module
from .tensor import Tensor, backward, no_grad
from .trainer import adversarial_loss, discriminator_loss, feature_matching_loss

EPS = 1e-5
TOLERANCE = 1e-4

# A case returns (loss closure, inputs to check, max entries per input or None for all).
Case = Callable[[np.random.Generator], tuple[Callable[[], Tensor], list[Tensor], int | None]]
REGISTRY: dict[str, Case] = {}


def register(name: str):
    def deco(fn: Case) -> Case:
        if name in REGISTRY:
            raise ValueError(f"duplicate gradcheck case {name!r}")
        REGISTRY[name] = fn
        return fn

    return deco


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    entries: int

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error < TOLERANCE)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)


def check_gradients(fn: Callable[[], Tensor], inputs: Sequence[Tensor], rng: np.random.Generator,
                    max_entries: int | None = None, eps: float = EPS) -> tuple[float, int]:
    """Worst relative error over ``inputs`` and the number of entries probed."""
    for t in inputs:
        t.grad = None
    backward(fn())
    worst, probed = 0.0, 0
    for t in inputs:
        analytic_full = np.zeros(t.shape) if t.grad is None else t.grad
        flat = t.data.reshape(-1)
        if max_entries is None or flat.size <= max_entries:
            idx = np.arange(flat.size)
        else:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        numeric = np.empty(idx.size)
        with no_grad():
            for j, i in enumerate(idx):
                orig = flat[i]
                flat[i] = orig + eps
                fp = fn().item()
                flat[i] = orig - eps
                fm = fn().item()
                flat[i] = orig
                numeric[j] = (fp - fm) / (2 * eps)
        worst = max(worst, relative_error(analytic_full.reshape(-1)[idx], numeric))
        probed += idx.size
        t.grad = None
    return worst, probed


def run_case(name: str, seed: int = 0, registry: dict[str, Case] | None = None) -> CheckResult:
    registry = REGISTRY if registry is None else registry
    rng = np.random.default_rng([seed, _stable_hash(name)])
    fn, inputs, max_entries = registry[name](rng)
    err, n = check_gradients(fn, inputs, rng, max_entries)
    return CheckResult(name, err, n)


def run_all(seed: int = 0, registry: dict[str, Case] | None = None,
            names: Iterable[str] | None = None) -> list[CheckResult]:
    registry = REGISTRY if registry is None else registry
    return [run_case(n, seed, registry) for n in (registry if names is None else names)]


def _stable_hash(name: str) -> int:
    h = 2166136261
    for ch in name.encode():
        h = ((h ^ ch) * 16777619) & 0xFFFFFFFF
    return h


# -- helpers -------------------------------------------------------------------------
def _leaf(rng, *shape, away_from_zero: float = 0.0) -> Tensor:
    x = rng.normal(size=shape)
    if away_from_zero:
        x = np.where(np.abs(x) < away_from_zero, x + np.copysign(away_from_zero, x), x)
    return Tensor(x, requires_grad=True)


def _project(out: Tensor, rng) -> Callable[[Tensor], Tensor]:
    """Scalarize with a fixed random weighting so every output entry matters."""
    w = Tensor(rng.normal(size=out.shape))
    return lambda y: T.sum_all(T.mul(y, w))


def _scalarized(op: Callable[[], Tensor], rng) -> Callable[[], Tensor]:
    with no_grad():
        proj = _project(op(), rng)
    return lambda: proj(op())


def _module_case(module: Module, x: Tensor, rng, max_entries: int | None = None):
    fn = _scalarized(lambda: module(x), rng)
    return fn, [x, *module.parameters()], max_entries


# -- tensor ops ---------------------------------------------------------------------
@register("add")
def _add(rng):
    a, b = _leaf(rng, 3, 4), _leaf(rng, 3, 4)
    return _scalarized(lambda: T.add(a, b), rng), [a, b], None


@register("sub")
def _sub(rng):
    a, b = _leaf(rng, 3, 4), _leaf(rng, 1)
    return _scalarized(lambda: T.sub(a, b), rng), [a, b], None


@register("mul")
def _mul(rng):
    a, b = _leaf(rng, 3, 4), _leaf(rng, 3, 4)
    return _scalarized(lambda: T.mul(a, b), rng), [a, b], None


@register("scale")
def _scale(rng):
    a = _leaf(rng, 3, 4)
    return _scalarized(lambda: T.scale(a, -1.7), rng), [a], None


@register("neg")
def _neg(rng):
    a = _leaf(rng, 2, 5)
    return _scalarized(lambda: T.neg(a), rng), [a], None


@register("bias_add")
def _bias_add(rng):
    x, b = _leaf(rng, 3, 4, 5), _leaf(rng, 4)
    return _scalarized(lambda: T.bias_add(x, b, axis=1), rng), [x, b], None


@register("leaky_relu")
def _leaky(rng):
    x = _leaf(rng, 4, 6, away_from_zero=1e-2)
    return _scalarized(lambda: T.leaky_relu(x, 0.2), rng), [x], None


@register("matmul")
def _matmul(rng):
    a, b = _leaf(rng, 3, 4), _leaf(rng, 4, 2)
    return _scalarized(lambda: T.matmul(a, b), rng), [a, b], None


@register("sum")
def _sum(rng):
    x = _leaf(rng, 3, 4)
    return lambda: T.scale(T.sum_all(x), 0.3), [x], None


@register("mean")
def _mean(rng):
    x = _leaf(rng, 3, 4)
    return lambda: T.mean_all(x), [x], None


@register("mse")
def _mse(rng):
    x, target = _leaf(rng, 3, 4), rng.normal(size=(3, 4))
    return lambda: T.mse(x, target), [x], None


@register("mae")
def _mae(rng):
    target = rng.normal(size=(3, 4))
    x = Tensor(target + np.where(rng.random((3, 4)) < 0.5, -1, 1) * rng.uniform(0.1, 1, (3, 4)),
               requires_grad=True)
    return lambda: T.mae(x, target), [x], None


@register("reshape")
def _reshape(rng):
    x = _leaf(rng, 3, 4)
    return _scalarized(lambda: T.reshape(x, (2, 6)), rng), [x], None


@register("transpose")
def _transpose(rng):
    x = _leaf(rng, 2, 3, 4)
    return _scalarized(lambda: T.transpose(x, (2, 0, 1)), rng), [x], None


@register("concat")
def _concat(rng):
    a, b = _leaf(rng, 2, 3, 3), _leaf(rng, 1, 3, 3)
    return _scalarized(lambda: T.concat([a, b], axis=0), rng), [a, b], None


@register("slice")
def _slice(rng):
    x = _leaf(rng, 4, 5)
    rows = (np.array([0, 0, 3]), slice(None))  # repeated row exercises the scatter-add path
    return _scalarized(lambda: T.concat([T.index_select(x, (slice(1, 3), slice(None))),
                                         T.index_select(x, rows)], axis=0), rng), [x], None


@register("mask")
def _mask(rng):
    x = _leaf(rng, 3, 5)
    return _scalarized(lambda: T.mask_axis(x, np.array([1, 0, 1, 1, 0], bool), axis=1), rng), [x], None


@register("pad")
def _pad(rng):
    x = _leaf(rng, 2, 3)
    return _scalarized(lambda: T.pad_trailing(x, (1, 2)), rng), [x], None


@register("crop")
def _crop(rng):
    x = _leaf(rng, 4, 5)
    return _scalarized(lambda: T.crop(x, (3, 2)), rng), [x], None


@register("repeat")
def _repeat(rng):
    x = _leaf(rng, 2, 3)
    return _scalarized(lambda: T.repeat_interleave(x, [2, 1, 3], axis=1), rng), [x], None


@register("embedding")
def _embedding(rng):
    table = _leaf(rng, 5, 3)
    return _scalarized(lambda: T.embedding_lookup(table, [4, 0, 4, 2]), rng), [table], None


# -- convolution kernels ----------------------------------------------------------------
@register("conv2d")
def _conv2d(rng):
    x, w, b = _leaf(rng, 2, 6, 5), _leaf(rng, 3, 2, 3, 2), _leaf(rng, 3)
    return _scalarized(lambda: C.conv2d(x, w, b, stride=(2, 1), padding=(1, 1)), rng), [x, w, b], None


@register("conv_transpose2d")
def _convt2d(rng):
    x, w, b = _leaf(rng, 3, 3, 4), _leaf(rng, 3, 2, 4, 4), _leaf(rng, 2)
    return _scalarized(lambda: C.conv_transpose2d(x, w, b, stride=2, padding=1), rng), [x, w, b], None


@register("conv1d")
def _conv1d(rng):
    x, w, b = _leaf(rng, 3, 9), _leaf(rng, 2, 3, 4), _leaf(rng, 2)
    return _scalarized(lambda: C.conv1d(x, w, b, stride=2, padding=1), rng), [x, w, b], None


@register("conv_transpose1d")
def _convt1d(rng):
    x, w, b = _leaf(rng, 2, 5), _leaf(rng, 2, 3, 4), _leaf(rng, 3)
    return _scalarized(lambda: C.conv_transpose1d(x, w, b, stride=2, padding=1, output_padding=1), rng), \
        [x, w, b], None


@register("weight_norm")
def _weight_norm(rng):
    v0, g0 = _leaf(rng, 3, 2, 2, 2), _leaf(rng, 3)
    v1, g1 = _leaf(rng, 2, 3, 2, 2), _leaf(rng, 3)
    return _scalarized(lambda: T.add(C.weight_norm(v0, g0, 0), T.transpose(
        C.weight_norm(v1, g1, 1), (1, 0, 2, 3))), rng), [v0, g0, v1, g1], None


# -- layers --------------------------------------------------------------------------
@register("layer.Conv2d")
def _l_conv2d(rng):
    return _module_case(Conv2d(2, 3, 4, 2, 1, rng=rng), _leaf(rng, 2, 8, 6), rng)


@register("layer.ConvTranspose2d")
def _l_convt2d(rng):
    return _module_case(ConvTranspose2d(3, 2, 4, 2, 1, rng=rng), _leaf(rng, 3, 4, 3), rng)


@register("layer.Conv1d")
def _l_conv1d(rng):
    return _module_case(Conv1d(3, 4, 3, 1, 1, rng=rng), _leaf(rng, 3, 7), rng)


@register("layer.ConvTranspose1d")
def _l_convt1d(rng):
    return _module_case(ConvTranspose1d(4, 2, 4, 2, 1, rng=rng), _leaf(rng, 4, 5), rng)


@register("layer.Linear")
def _l_linear(rng):
    return _module_case(Linear(4, 3, rng=rng), _leaf(rng, 5, 4), rng)


@register("layer.Embedding")
def _l_embedding(rng):
    emb = Embedding(6, 3, rng=rng)
    return _scalarized(lambda: emb([1, 5, 1, 0]), rng), emb.parameters(), None


# -- losses ------------------------------------------------------------------------
def _fake_output(rng, shapes, fine=True):
    from .discriminators import DiscriminatorOutput

    coarse = _leaf(rng, *shapes[0])
    fine_t = _leaf(rng, *shapes[1]) if fine else None
    hidden = [_leaf(rng, *s) for s in shapes[2:]]
    return DiscriminatorOutput(coarse, fine_t, hidden)


_SHAPES = [(1, 2, 2), (1, 16, 8), (4, 16, 8), (6, 8, 4)]


@register("loss.discriminator")
def _loss_d(rng):
    real, fake = _fake_output(rng, _SHAPES), _fake_output(rng, _SHAPES)
    return lambda: discriminator_loss(real, fake), [real.coarse, real.fine, fake.coarse, fake.fine], None


@register("loss.adversarial")
def _loss_a(rng):
    fake = _fake_output(rng, _SHAPES)
    return lambda: adversarial_loss(fake), [fake.coarse, fake.fine], None


@register("loss.feature_matching")
def _loss_f(rng):
    fake = _fake_output(rng, _SHAPES)
    real_hidden = [Tensor(h.data + rng.choice([-1, 1], h.shape) * rng.uniform(0.05, 1, h.shape))
                   for h in fake.hidden]
    return lambda: feature_matching_loss(fake.hidden, real_hidden), list(fake.hidden), None


@register("loss.tts")
def _loss_tts(rng):
    target = rng.normal(size=(1, 6, 4))
    spec = Tensor(target + rng.choice([-1, 1], target.shape) * rng.uniform(0.05, 1, target.shape),
                  requires_grad=True)
    dur_t = np.array([2, 3, 1])
    dur = Tensor(dur_t + np.array([0.4, -0.7, 0.3]), requires_grad=True)
    return lambda: tts_loss(spec, target, dur, dur_t, 0.02), [spec, dur], None


# -- whole models ------------------------------------------------------------------
_MODEL_ENTRIES = 5


def _generic_biases(module: Module, rng) -> None:
    """Move biases off their zero init.

    With zero biases, zero-padded regions give pre-activations of exactly 0,
    which sit on the LeakyReLU corner where no derivative exists.
    """
    for name, p in module.named_parameters():
        if name.endswith("bias"):
            p.data = rng.normal(0.0, 0.1, size=p.shape)


def _disc_case(variant: str, rng):
    cfg = DiscriminatorConfig(variant=variant, n_mels=16)
    disc = build(cfg, seed=int(rng.integers(1 << 31)))
    _generic_biases(disc, rng)
    spec = _leaf(rng, 1, 19, 16)

    def loss():
        out = disc(spec)
        total = T.add(T.mse(out.coarse, 0.7), T.mean_all(T.mul(out.hidden[-1], out.hidden[-1])))
        if out.fine is not None:
            total = T.add(total, T.mse(out.fine, 0.3))
        return total

    return loss, [spec, *disc.parameters()], _MODEL_ENTRIES


@register("model.discriminator.m-tf")
def _disc_mtf(rng):
    return _disc_case("m-tf", rng)


@register("model.discriminator.m-t")
def _disc_mt(rng):
    return _disc_case("m-t", rng)


@register("model.discriminator.s-t")
def _disc_st(rng):
    return _disc_case("s-t", rng)


@register("model.generator")
def _generator(rng):
    gen = build_generator(GeneratorConfig(), seed=int(rng.integers(1 << 31)))
    _generic_biases(gen, rng)
    sample = render_sample(CorpusConfig(), 1)

    def loss():
        spec, dur = gen(sample.tokens, sample.durations)
        return tts_loss(spec, sample.target, dur, sample.durations)

    return loss, gen.parameters(), _MODEL_ENTRIES


@register("model.generator_loss_end_to_end")
def _end_to_end(rng):
    """L_g through the generator and a frozen M-TF discriminator."""
    from .trainer import generator_adv_losses

    gen = build_generator(GeneratorConfig(), seed=int(rng.integers(1 << 31)))
    disc = build(DiscriminatorConfig(variant="m-tf", n_mels=16), seed=int(rng.integers(1 << 31)))
    _generic_biases(disc, rng)
    _generic_biases(gen, rng)
    for p in disc.parameters():
        p.requires_grad = False
    sample = render_sample(CorpusConfig(), 2)
    with no_grad():
        real = disc(Tensor(sample.target))

    def loss():
        spec, dur = gen(sample.tokens, sample.durations)
        l_a, l_f = generator_adv_losses(disc(spec), real)
        l_tts = tts_loss(spec, sample.target, dur, sample.durations)
        return T.add(T.add(l_tts, T.scale(l_a, 0.2)), T.scale(l_f, 2.0))

    return loss, gen.parameters(), _MODEL_ENTRIES


def kernel_op_names() -> list[str]:
    """Names of the primitive ops (those recorded on the tape)."""
    return [n for n in REGISTRY if "." not in n]
