"""Spectrogram discriminators: S-T, M-T and M-TF.

* ``m-tf`` treats the spectrogram ``(1, T, N)`` as a one-channel image and runs
  a 2-D U-Net: an encoder down to ``(256, T/8, N/8)`` with a coarse head, and a
  decoder of transposed convolutions with skip concatenations ending in a fine
  head at input resolution.
* ``m-t`` is the same U-Net in 1-D: mel bins are channels, convolutions run
  along time only.
* ``s-t`` is the 1-D encoder with the coarse head, no decoder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .layers import Conv1d, Conv2d, ConvTranspose1d, ConvTranspose2d, Module
from .tensor import Tensor, concat, index_select, leaky_relu, mask_axis, pad_trailing, reshape, transpose

VARIANTS = ("s-t", "m-t", "m-tf")


class ConfigError(ValueError):
    pass


@dataclass
class DiscriminatorConfig:
    variant: str = "m-tf"
    channels: tuple[int, ...] = (32, 64, 128, 256)
    strides: tuple[int, ...] = (2, 2, 2)
    in_kernel: int = 3
    enc_kernel: int = 4
    head_kernel: int = 3
    leaky_alpha: float = 0.2
    n_mels: int = 80  # input channels of the 1-D variants

    def __post_init__(self):
        self.variant = self.variant.lower()
        self.channels = tuple(int(c) for c in self.channels)
        self.strides = tuple(int(s) for s in self.strides)
        self.validate()

    @property
    def reduction(self) -> int:
        return math.prod(self.strides)

    @property
    def multiscale(self) -> bool:
        return self.variant != "s-t"

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown discriminator variant {self.variant!r}; expected one of {VARIANTS}")
        if len(self.channels) != len(self.strides) + 1:
            raise ConfigError("need one more channel width than encoder strides")
        if any(c < 1 for c in self.channels) or any(s < 1 for s in self.strides):
            raise ConfigError("channel widths and strides must be positive")
        if self.reduction != 8:
            raise ConfigError(f"encoder strides {self.strides} reduce by {self.reduction}, must reduce by 8")
        for s in self.strides:
            if self.enc_kernel < s or (self.enc_kernel - s) % 2:
                raise ConfigError(f"kernel {self.enc_kernel} cannot invert stride {s} exactly "
                                  "(need kernel >= stride with even difference)")
        if self.in_kernel % 2 == 0 or self.head_kernel % 2 == 0:
            raise ConfigError("input and head kernels must be odd to preserve resolution")
        if self.leaky_alpha < 0:
            raise ConfigError("leaky_alpha must be non-negative")


@dataclass
class DiscriminatorOutput:
    coarse: Tensor
    fine: Tensor | None
    hidden: list[Tensor] = field(default_factory=list)


class Discriminator(Module):
    def __init__(self, config: DiscriminatorConfig, rng: np.random.Generator):
        self.config = config
        ch, k = config.channels, config.enc_kernel
        two_d = config.variant == "m-tf"
        Conv = Conv2d if two_d else Conv1d
        ConvT = ConvTranspose2d if two_d else ConvTranspose1d
        in_ch = 1 if two_d else config.n_mels

        self.input_conv = Conv(in_ch, ch[0], config.in_kernel, 1, config.in_kernel // 2, rng=rng)
        self.encoder = [
            Conv(ch[i], ch[i + 1], k, s, (k - s) // 2, rng=rng) for i, s in enumerate(config.strides)
        ]
        self.coarse_head = Conv(ch[-1], 1, config.head_kernel, 1, config.head_kernel // 2, rng=rng)
        self.decoder = []
        self.fine_head = None
        if config.multiscale:
            n = len(config.strides)
            for j in range(n):
                c_in = ch[n - j] * (1 if j == 0 else 2)
                s = config.strides[n - 1 - j]
                self.decoder.append(ConvT(c_in, ch[n - 1 - j], k, s, (k - s) // 2, rng=rng))
            self.fine_head = Conv(2 * ch[0], 1, config.head_kernel, 1, config.head_kernel // 2, rng=rng)

    def _prepare(self, spec: Tensor) -> tuple[Tensor, int, int]:
        """Validate, lay out as ``[C, T, ...]`` and zero-pad time (and bins for M-TF) to multiples of 8."""
        if spec.ndim == 2:
            spec = reshape(spec, (1, *spec.shape))
        if spec.ndim != 3 or spec.shape[0] != 1 or spec.shape[1] < 1 or spec.shape[2] < 1:
            raise ValueError(f"expected a spectrogram of shape (1, T, N), got {spec.shape}")
        if not np.all(np.isfinite(spec.data)):
            raise ValueError("spectrogram contains non-finite values")
        _, t, n = spec.shape
        r = self.config.reduction
        if self.config.variant == "m-tf":
            return pad_trailing(spec, (0, -t % r, -n % r)), t, n
        if n != self.config.n_mels:
            raise ValueError(f"1-D discriminator expects {self.config.n_mels} mel bins, got {n}")
        x = transpose(reshape(spec, (t, n)))  # [N, T]: bins as channels
        return pad_trailing(x, (0, -t % r)), t, n

    def __call__(self, spec: Tensor) -> DiscriminatorOutput:
        return self.forward_batch([spec])[0]

    def forward_batch(self, specs: Sequence[Tensor]) -> list[DiscriminatorOutput]:
        """Discriminate several spectrograms in one pass.

        Inputs are packed along the time axis, separated by zero gaps one
        bottleneck cell wide, and every layer output is re-zeroed on the gaps.
        Each segment therefore sees exactly the zero padding it would see on
        its own, and per-sample outputs equal separate calls up to rounding.
        """
        if not specs:
            return []
        r = self.config.reduction
        prepared = [self._prepare(s) for s in specs]
        if len({p[0].shape[2:] for p in prepared}) > 1:
            raise ValueError("all spectrograms in a batch need the same number of mel bins")
        pieces, starts, pos = [], [], 0
        for i, (x, _, _) in enumerate(prepared):
            if i:
                gap = zeros_like_time(x, r)
                pieces.append(gap)
                pos += r
            starts.append(pos)
            pieces.append(x)
            pos += x.shape[1]
        packed = pieces[0] if len(pieces) == 1 else concat(pieces, axis=1)
        lengths = [x.shape[1] for x, _, _ in prepared]

        factors = [1]
        for st in self.config.strides:
            factors.append(factors[-1] * st)
        masks = None
        if len(specs) > 1:
            masks = {}
            for f in factors:
                keep = np.zeros(pos // f, dtype=bool)
                for a, ln in zip(starts, lengths):
                    keep[a // f : (a + ln) // f] = True
                masks[f] = keep

        def gate(h: Tensor, level: int) -> Tensor:
            return h if masks is None else mask_axis(h, masks[factors[level]], axis=1)

        coarse, fine, hidden, levels = self._forward(packed, gate)
        if len(specs) == 1:
            _, t, n = prepared[0]
            if fine is not None:
                fine = index_select(fine, (slice(None), slice(0, t)) + ((slice(0, n),) if fine.ndim == 3 else ()))
            return [DiscriminatorOutput(coarse=coarse, fine=fine, hidden=hidden)]

        outs = []
        for (x, t, n), a, ln in zip(prepared, starts, lengths):
            def seg(h: Tensor, level: int) -> Tensor:
                f = factors[level]
                return index_select(h, (slice(None), slice(a // f, (a + ln) // f)))

            c = seg(coarse, len(self.config.strides))
            fm = None
            if fine is not None:
                fm = index_select(fine, (slice(None), slice(a, a + t)) + ((slice(0, n),) if fine.ndim == 3 else ()))
            outs.append(DiscriminatorOutput(coarse=c, fine=fm,
                                            hidden=[seg(h, lv) for h, lv in zip(hidden, levels)]))
        return outs

    def _forward(self, x: Tensor, gate):
        alpha = self.config.leaky_alpha
        h = gate(self.input_conv(x), 0)
        hidden, levels, skips = [h], [0], [h]
        for i, layer in enumerate(self.encoder):
            h = gate(leaky_relu(layer(h), alpha), i + 1)
            hidden.append(h)
            levels.append(i + 1)
            skips.append(h)
        coarse = self.coarse_head(h)
        fine = None
        if self.config.multiscale:
            d = h
            n = len(self.decoder)
            for j, layer in enumerate(self.decoder):
                if j > 0:
                    d = concat([d, skips[n - j]], axis=0)
                d = gate(leaky_relu(layer(d), alpha), n - 1 - j)
                hidden.append(d)
                levels.append(n - 1 - j)
            fine = self.fine_head(concat([d, skips[0]], axis=0))
        return coarse, fine, hidden, levels

    def bottleneck_channels(self) -> int:
        return self.encoder[-1].out_channels


def zeros_like_time(x: Tensor, length: int) -> Tensor:
    """Constant zeros shaped like ``x`` but ``length`` long on axis 1."""
    shape = list(x.shape)
    shape[1] = length
    return Tensor(np.zeros(shape))


def build(config: DiscriminatorConfig | None = None, seed: int = 0) -> Discriminator:
    """Construct a discriminator with parameters drawn deterministically from ``seed``."""
    config = DiscriminatorConfig() if config is None else config
    config.validate()
    return Discriminator(config, np.random.default_rng(seed))


def coarse_shape(config: DiscriminatorConfig, t: int, n: int) -> tuple[int, ...]:
    r = config.reduction
    if config.variant == "m-tf":
        return (1, -(-t // r), -(-n // r))
    return (1, -(-t // r))


def fine_shape(config: DiscriminatorConfig, t: int, n: int) -> tuple[int, ...] | None:
    if not config.multiscale:
        return None
    return (1, t, n) if config.variant == "m-tf" else (1, t)
