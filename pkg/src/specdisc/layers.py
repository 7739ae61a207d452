"""Layer vocabulary: weight-normalized (transposed) convolutions, embedding, linear."""

from __future__ import annotations

from contextlib import contextmanager
from typing import Iterator

import numpy as np

from . import conv as F
from .tensor import ShapeError, Tensor, bias_add, embedding_lookup, matmul, transpose


class Module:
    """Parameter container.  Parameters are the ``Tensor`` attributes, in definition order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, val in vars(self).items():
            if name.startswith("_"):
                continue
            key = f"{prefix}{name}"
            if isinstance(val, Tensor):
                yield key, val
            elif isinstance(val, Module):
                yield from val.named_parameters(key + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{key}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for k, p in params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.shape:
                raise ShapeError(f"load[{k}]", p.shape, arr.shape)
            p.data = arr.copy()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def modules(self) -> Iterator["Module"]:
        yield self
        for val in vars(self).values():
            if isinstance(val, Module):
                yield from val.modules()
            elif isinstance(val, (list, tuple)):
                for item in val:
                    if isinstance(item, Module):
                        yield from item.modules()

    @contextmanager
    def shared_weights(self):
        """Compute each reparameterized weight once and reuse it for every call in the block.

        Parameters must not change inside the block.
        """
        mods = [m for m in self.modules() if isinstance(m, _WeightNormConv)]
        for m in mods:
            m._share, m._shared = True, None
        try:
            yield self
        finally:
            for m in mods:
                m._share, m._shared = False, None

    @contextmanager
    def frozen(self):
        """Treat parameters as constants inside the block (no graph, no grads)."""
        params = self.parameters()
        for p in params:
            p.requires_grad = False
        try:
            yield self
        finally:
            for p in params:
                p.requires_grad = True

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


def _tuple(v, n: int) -> tuple[int, ...]:
    if np.isscalar(v):
        return (int(v),) * n
    v = tuple(int(x) for x in v)
    if len(v) != n:
        raise ValueError(f"expected {n} values, got {v}")
    return v


class _WeightNormConv(Module):
    """Shared init for the four convolution flavours.

    ``weight_v`` is ``[out, in, *kernel]`` for convolutions and
    ``[in, out, *kernel]`` for transposed ones; either way the effective kernel
    is ``weight_g[o] * weight_v[o] / ||weight_v[o]||`` per output channel ``o``.
    """

    ndim = 2
    out_axis = 0

    def __init__(self, in_channels: int, out_channels: int, kernel, stride=1, padding=0,
                 rng: np.random.Generator | None = None):
        if in_channels < 1 or out_channels < 1:
            raise ValueError("channel counts must be positive")
        rng = np.random.default_rng() if rng is None else rng
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = _tuple(kernel, self.ndim)
        self.stride = _tuple(stride, self.ndim)
        self.padding = _tuple(padding, self.ndim)
        fan_in = in_channels * int(np.prod(self.kernel))
        shape = (out_channels, in_channels) if self.out_axis == 0 else (in_channels, out_channels)
        v = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(*shape, *self.kernel))
        norm = np.sqrt(np.sum(v * v, axis=tuple(i for i in range(v.ndim) if i != self.out_axis)))
        if np.any(norm == 0):
            raise ValueError("zero-norm weight direction at init")
        self.weight_v = Tensor(v, requires_grad=True)
        self.weight_g = Tensor(norm, requires_grad=True)
        self.bias = Tensor(np.zeros(out_channels), requires_grad=True)

    def effective_weight(self) -> Tensor:
        cached = getattr(self, "_shared", None)
        if cached is not None:
            return cached
        w = F.weight_norm(self.weight_v, self.weight_g, self.out_axis)
        if getattr(self, "_share", False):
            self._shared = w
        return w

    def _check_input(self, x: Tensor) -> None:
        if x.ndim != self.ndim + 1 or x.shape[0] != self.in_channels:
            raise ShapeError(type(self).__name__, x.shape, (self.in_channels, "..."),
                             detail=f"expected {self.in_channels} input channels")


class Conv2d(_WeightNormConv):
    def __call__(self, x: Tensor) -> Tensor:
        self._check_input(x)
        return F.conv2d(x, self.effective_weight(), self.bias, self.stride, self.padding)

    def output_shape(self, h: int, w: int) -> tuple[int, int]:
        return tuple(F.conv_out_size(n, k, s, p)
                     for n, k, s, p in zip((h, w), self.kernel, self.stride, self.padding))


class ConvTranspose2d(_WeightNormConv):
    out_axis = 1

    def __init__(self, in_channels, out_channels, kernel, stride=1, padding=0, output_padding=0, rng=None):
        super().__init__(in_channels, out_channels, kernel, stride, padding, rng)
        self.output_padding = _tuple(output_padding, 2)

    def __call__(self, x: Tensor) -> Tensor:
        self._check_input(x)
        return F.conv_transpose2d(x, self.effective_weight(), self.bias, self.stride, self.padding,
                                  self.output_padding)

    def output_shape(self, h: int, w: int) -> tuple[int, int]:
        return tuple(F.conv_transpose_out_size(n, k, s, p, op) for n, k, s, p, op in
                     zip((h, w), self.kernel, self.stride, self.padding, self.output_padding))


class Conv1d(_WeightNormConv):
    ndim = 1

    def __call__(self, x: Tensor) -> Tensor:
        self._check_input(x)
        return F.conv1d(x, self.effective_weight(), self.bias, self.stride[0], self.padding[0])

    def output_shape(self, t: int) -> tuple[int]:
        return (F.conv_out_size(t, self.kernel[0], self.stride[0], self.padding[0]),)


class ConvTranspose1d(_WeightNormConv):
    ndim = 1
    out_axis = 1

    def __init__(self, in_channels, out_channels, kernel, stride=1, padding=0, output_padding=0, rng=None):
        super().__init__(in_channels, out_channels, kernel, stride, padding, rng)
        self.output_padding = _tuple(output_padding, 1)

    def __call__(self, x: Tensor) -> Tensor:
        self._check_input(x)
        return F.conv_transpose1d(x, self.effective_weight(), self.bias, self.stride[0], self.padding[0],
                                  self.output_padding[0])

    def output_shape(self, t: int) -> tuple[int]:
        return (F.conv_transpose_out_size(t, self.kernel[0], self.stride[0], self.padding[0],
                                          self.output_padding[0]),)


class Embedding(Module):
    def __init__(self, vocab_size: int, dim: int, rng: np.random.Generator | None = None):
        rng = np.random.default_rng() if rng is None else rng
        self.vocab_size = vocab_size
        self.dim = dim
        self.table = Tensor(rng.normal(0.0, 1.0, size=(vocab_size, dim)), requires_grad=True)

    def __call__(self, ids) -> Tensor:
        """``[L]`` ids -> ``[L, dim]`` rows."""
        return embedding_lookup(self.table, ids)


class Linear(Module):
    """``y = x @ W + b`` on row vectors ``x: [M, in]``; ``W`` is ``[in, out]``."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator | None = None):
        rng = np.random.default_rng() if rng is None else rng
        self.in_features = in_features
        self.out_features = out_features
        w = rng.normal(0.0, np.sqrt(1.0 / in_features), size=(in_features, out_features))
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(out_features), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return bias_add(matmul(x, self.weight), self.bias, axis=1)

    def channels_first(self, x: Tensor) -> Tensor:
        """Apply to ``[in, T]`` and return ``[out, T]``."""
        return transpose(self(transpose(x)))
