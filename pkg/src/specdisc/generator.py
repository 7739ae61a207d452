"""Toy non-autoregressive spectrogram generator.

tokens -> embedding -> 2 x conv1d encoder -> per-token duration head
       -> repeat-upsampling by durations -> 2 x conv1d decoder -> linear to mel bins
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import Conv1d, Embedding, Linear, Module
from .tensor import Tensor, add, leaky_relu, mae, mse, repeat_interleave, reshape, scale, transpose


@dataclass
class GeneratorConfig:
    vocab_size: int = 12
    embed_dim: int = 32
    enc_channels: int = 64
    dec_channels: int = 64
    enc_kernel: int = 3
    dec_kernel: int = 3
    n_mels: int = 16
    leaky_alpha: float = 0.2

    def __post_init__(self):
        for name in ("vocab_size", "embed_dim", "enc_channels", "dec_channels", "enc_kernel", "dec_kernel", "n_mels"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be positive")
        if self.enc_kernel % 2 == 0 or self.dec_kernel % 2 == 0:
            raise ValueError("generator kernels must be odd")


class Generator(Module):
    def __init__(self, config: GeneratorConfig, rng: np.random.Generator):
        self.config = config
        c = config
        self.embedding = Embedding(c.vocab_size, c.embed_dim, rng=rng)
        self.encoder = [
            Conv1d(c.embed_dim, c.enc_channels, c.enc_kernel, 1, c.enc_kernel // 2, rng=rng),
            Conv1d(c.enc_channels, c.enc_channels, c.enc_kernel, 1, c.enc_kernel // 2, rng=rng),
        ]
        self.duration_head = Linear(c.enc_channels, 1, rng=rng)
        self.decoder = [
            Conv1d(c.enc_channels, c.dec_channels, c.dec_kernel, 1, c.dec_kernel // 2, rng=rng),
            Conv1d(c.dec_channels, c.dec_channels, c.dec_kernel, 1, c.dec_kernel // 2, rng=rng),
        ]
        self.projection = Linear(c.dec_channels, c.n_mels, rng=rng)

    def encode(self, tokens) -> tuple[Tensor, Tensor]:
        """Token-level features ``[C, L]`` and predicted durations ``[L]``."""
        h = transpose(self.embedding(tokens))
        for layer in self.encoder:
            h = leaky_relu(layer(h), self.config.leaky_alpha)
        dur = reshape(self.duration_head(transpose(h)), (h.shape[1],))
        return h, dur

    def upsample(self, h: Tensor, durations) -> Tensor:
        return repeat_interleave(h, durations, axis=1)

    def __call__(self, tokens, durations=None) -> tuple[Tensor, Tensor]:
        """Return ``(spectrogram (1, T, N), predicted durations [L])``.

        With ``durations=None`` (inference) the rounded predictions drive the
        upsampling, floored at one frame per token.
        """
        tokens = np.asarray(tokens, dtype=np.int64)
        h, dur_pred = self.encode(tokens)
        if durations is None:
            durations = predicted_frames(dur_pred)
        durations = np.asarray(durations, dtype=np.int64)
        if durations.shape != tokens.shape:
            raise ValueError(f"need one duration per token: {durations.shape} vs {tokens.shape}")
        if np.any(durations < 1):
            raise ValueError(f"durations must be positive, got {durations.tolist()}")
        x = self.upsample(h, durations)
        for layer in self.decoder:
            x = leaky_relu(layer(x), self.config.leaky_alpha)
        mel = self.projection(transpose(x))  # [T, N]
        return reshape(mel, (1, *mel.shape)), dur_pred


def predicted_frames(dur_pred: Tensor) -> np.ndarray:
    return np.maximum(np.rint(dur_pred.data), 1).astype(np.int64)


def build_generator(config: GeneratorConfig | None = None, seed: int = 0) -> Generator:
    return Generator(GeneratorConfig() if config is None else config, np.random.default_rng(seed))


def spec_loss(pred: Tensor, target) -> Tensor:
    return add(mse(pred, target), mae(pred, target))


def duration_loss(pred: Tensor, target) -> Tensor:
    target = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    return add(mse(pred, target), mae(pred, target))


def tts_loss(pred_spec: Tensor, target_spec, pred_dur: Tensor, target_dur, lambda_dur: float = 0.02) -> Tensor:
    """Spectrogram MSE+MAE plus ``lambda_dur`` times duration MSE+MAE."""
    return add(spec_loss(pred_spec, target_spec), scale(duration_loss(pred_dur, target_dur), lambda_dur))
