"""Deterministic synthetic (tokens, durations, log-mel) corpus.

Each vocabulary symbol owns a fixed spectral template: two or three Gaussian
formant bumps over the mel bins, modulated by a harmonic ripple.  A sample is a
random token sequence with random integer durations; frame ``t`` of token ``i``
is that token's template, optionally with additive noise before the log.

Random draws use counter-based Philox streams keyed on ``(seed, stream)`` so a
sample depends only on the corpus seed and its index.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass
from typing import Iterator

import numpy as np

LOG_MIN, LOG_MAX = -8.0, 4.0
_TEMPLATE_STREAM = 1 << 40
_FLOOR = 0.1


@dataclass(frozen=True)
class CorpusConfig:
    vocab_size: int = 12
    samples: int = 8
    min_tokens: int = 3
    max_tokens: int = 6
    min_duration: int = 2
    max_duration: int = 8
    n_mels: int = 16
    noise_std: float = 0.01
    seed: int = 0

    def __post_init__(self):
        for name in ("vocab_size", "samples", "min_tokens", "min_duration", "n_mels"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.max_tokens < self.min_tokens or self.max_duration < self.min_duration:
            raise ValueError("empty token-length or duration range")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")


@dataclass
class SynthSample:
    index: int
    tokens: np.ndarray  # [L] int
    durations: np.ndarray  # [L] int, frames per token
    target: np.ndarray  # (1, T, N) log-mel

    @property
    def frames(self) -> int:
        return int(self.durations.sum())


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[seed & (2**64 - 1), stream]))


def _to_log(mag: np.ndarray) -> np.ndarray:
    return np.clip(np.log(np.maximum(mag, np.exp(LOG_MIN))), LOG_MIN, LOG_MAX)


def template_magnitude(cfg: CorpusConfig, symbol: int) -> np.ndarray:
    """Linear-magnitude spectral profile ``[N]`` of one vocabulary symbol."""
    rng = _rng(cfg.seed, _TEMPLATE_STREAM + symbol)
    n = cfg.n_mels
    bins = np.arange(n, dtype=np.float64)
    bumps = np.zeros(n)
    for _ in range(int(rng.integers(2, 4))):
        center = rng.uniform(0, n - 1)
        width = max(0.7, rng.uniform(0.04, 0.12) * n)
        bumps += rng.uniform(0.5, 3.0) * np.exp(-0.5 * ((bins - center) / width) ** 2)
    spacing = rng.uniform(2.5, 6.0)
    phase = rng.uniform(0, 2 * np.pi)
    ripple = 0.7 + 0.3 * np.cos(2 * np.pi * bins / spacing + phase)
    return _FLOOR + bumps * ripple


def template_column(cfg: CorpusConfig, symbol: int) -> np.ndarray:
    """Noise-free log-mel column ``[N]`` for ``symbol``."""
    return _to_log(template_magnitude(cfg, symbol))


def render_sample(cfg: CorpusConfig, index: int) -> SynthSample:
    if not 0 <= index < cfg.samples:
        raise IndexError(f"sample index {index} outside [0, {cfg.samples})")
    rng = _rng(cfg.seed, index)
    length = int(rng.integers(cfg.min_tokens, cfg.max_tokens + 1))
    tokens = rng.integers(0, cfg.vocab_size, size=length)
    durations = rng.integers(cfg.min_duration, cfg.max_duration + 1, size=length)
    mags = np.stack([template_magnitude(cfg, int(s)) for s in tokens])
    frames = np.repeat(mags, durations, axis=0)
    if cfg.noise_std > 0:
        frames = frames + cfg.noise_std * rng.standard_normal(frames.shape)
    return SynthSample(index, tokens.astype(np.int64), durations.astype(np.int64), _to_log(frames)[None])


def corpus(cfg: CorpusConfig) -> list[SynthSample]:
    return [render_sample(cfg, i) for i in range(cfg.samples)]


def batch_iter(cfg: CorpusConfig, batch_size: int, epoch_seed: int = 0,
               epochs: int | None = None) -> Iterator[list[SynthSample]]:
    """Shuffled mini-batches; epoch ``e`` uses the permutation keyed on ``(epoch_seed, e)``.

    The last batch of an epoch is short when ``batch_size`` does not divide the corpus.
    """
    if not 1 <= batch_size <= cfg.samples:
        raise ValueError(f"batch_size must be in [1, {cfg.samples}], got {batch_size}")
    samples = corpus(cfg)
    epoch = 0
    while epochs is None or epoch < epochs:
        order = _rng(epoch_seed, epoch).permutation(cfg.samples)
        for start in range(0, cfg.samples, batch_size):
            yield [samples[i] for i in order[start : start + batch_size]]
        epoch += 1


def dump_corpus(cfg: CorpusConfig, out_dir: str) -> list[str]:
    """Write one text file per sample plus ``manifest.txt``; returns the sample paths.

    Sample file: ``T N L`` header, a tokens line, a durations line, then T rows of N floats.
    """
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for s in corpus(cfg):
        path = os.path.join(out_dir, f"sample_{s.index:05d}.txt")
        t, n = s.target.shape[1:]
        with open(path, "w") as fh:
            fh.write(f"{t} {n} {len(s.tokens)}\n")
            fh.write(" ".join(str(int(x)) for x in s.tokens) + "\n")
            fh.write(" ".join(str(int(x)) for x in s.durations) + "\n")
            for row in s.target[0]:
                fh.write(" ".join(repr(float(x)) for x in row) + "\n")
        paths.append(path)
    with open(os.path.join(out_dir, "manifest.txt"), "w") as fh:
        for key, val in asdict(cfg).items():
            fh.write(f"{key} = {val}\n")
        for p in paths:
            fh.write(f"file = {os.path.basename(p)}\n")
    return paths


def load_sample_file(path: str, index: int = -1) -> SynthSample:
    with open(path) as fh:
        t, n, length = (int(x) for x in fh.readline().split())
        tokens = np.array(fh.readline().split(), dtype=np.int64)
        durations = np.array(fh.readline().split(), dtype=np.int64)
        rows = np.array([[float(x) for x in fh.readline().split()] for _ in range(t)])
    if tokens.size != length or durations.size != length or rows.shape != (t, n):
        raise ValueError(f"malformed sample file {path}")
    return SynthSample(index, tokens, durations, rows[None])
