"""Convolution kernels (numpy, im2col) and their differentiable wrappers.

Layouts: inputs are ``[C, H, W]`` (2-D) or ``[C, T]`` (1-D).  Convolution
weights are ``[out, in, kh, kw]``; transposed-convolution weights are
``[in, out, kh, kw]`` so both matrix products run on free reshapes.  The 1-D
ops run the 2-D kernels with a height-1 axis.
"""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor, _make

Pair = tuple[int, int]

_AXES = ("height", "width")


def conv_out_size(n: int, k: int, s: int, p: int) -> int:
    return (n + 2 * p - k) // s + 1


def conv_transpose_out_size(n: int, k: int, s: int, p: int, op: int = 0) -> int:
    return (n - 1) * s - 2 * p + k + op


# Convolutions with at most this many output channels and unit stride skip the
# patch matrix and accumulate one small matmul per kernel tap instead.
_TAP_MAX_OUT = 4


def _im2col(xp: np.ndarray, kh: int, kw: int, sh: int, sw: int, ho: int, wo: int) -> np.ndarray:
    """``[C, Hp, Wp]`` -> ``[C*kh*kw, ho*wo]`` patch matrix."""
    c = xp.shape[0]
    cols = np.empty((c, kh, kw, ho, wo))
    for a in range(kh):
        for b in range(kw):
            cols[:, a, b] = xp[:, a : a + sh * (ho - 1) + 1 : sh, b : b + sw * (wo - 1) + 1 : sw]
    return cols.reshape(c * kh * kw, ho * wo)


def _use_taps(o, stride, padding, kh, kw) -> bool:
    return o <= _TAP_MAX_OUT and tuple(stride) == (1, 1) and padding[0] < kh and padding[1] < kw


def _flat_padded(xp: np.ndarray, kw: int) -> np.ndarray:
    """``[C, Hp, Wp]`` -> ``[C, Hp*Wp + kw]`` with a zero tail.

    For unit stride, tap ``(a, b)`` of output row-major position ``i*Wp + j``
    reads flat index ``i*Wp + j + a*Wp + b``, so each tap is a contiguous
    window of this buffer.  Columns ``j >= Wo`` are junk and dropped.
    """
    c, hp, wp = xp.shape
    flat = np.zeros((c, hp * wp + kw))
    flat[:, : hp * wp] = xp.reshape(c, hp * wp)
    return flat


def _tap_forward(flat, w, wp, ho, wo):
    o, _, kh, kw = w.shape
    n = ho * wp
    out = np.zeros((o, n))
    for a in range(kh):
        for b in range(kw):
            off = a * wp + b
            out += w[:, :, a, b] @ flat[:, off : off + n]
    return np.ascontiguousarray(out.reshape(o, ho, wp)[:, :, :wo])


def _tap_extend(g, wp):
    o, ho, wo = g.shape
    ge = np.zeros((o, ho, wp))
    ge[:, :, :wo] = g
    return ge.reshape(o, ho * wp)


def _col2im(cols: np.ndarray, c: int, kh: int, kw: int, sh: int, sw: int,
            ho: int, wo: int, hp: int, wp: int) -> np.ndarray:
    """Adjoint of :func:`_im2col`: scatter-add patches into ``[c, hp, wp]``."""
    cols = cols.reshape(c, kh, kw, ho, wo)
    out = np.zeros((c, hp, wp))
    for a in range(kh):
        for b in range(kw):
            out[:, a : a + sh * (ho - 1) + 1 : sh, b : b + sw * (wo - 1) + 1 : sw] += cols[:, a, b]
    return out


def _check_conv(x: np.ndarray, w: np.ndarray, op: str) -> None:
    if x.ndim != 3 or w.ndim != 4:
        raise ShapeError(op, x.shape, w.shape, detail="expected input [C,H,W] and weight [O,I,kh,kw]")
    if x.shape[0] != w.shape[1]:
        raise ShapeError(op, x.shape, w.shape,
                         detail=f"input has {x.shape[0]} channels, weight expects {w.shape[1]}")


def conv2d_forward_np(x, w, b, stride: Pair, padding: Pair):
    """Cross-correlation.  Returns ``(out, cols)``; ``cols`` feeds the backward."""
    _check_conv(x, w, "conv2d")
    o, c, kh, kw = w.shape
    (sh, sw), (ph, pw) = stride, padding
    h, wd = x.shape[1:]
    ho, wo = conv_out_size(h, kh, sh, ph), conv_out_size(wd, kw, sw, pw)
    for name, n, k, p, out in zip(_AXES, (h, wd), (kh, kw), (ph, pw), (ho, wo)):
        if out < 1:
            raise ShapeError("conv2d", x.shape, w.shape,
                             detail=f"{name} axis: size {n} with padding {p} is smaller than kernel {k}")
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw))) if ph or pw else x
    if _use_taps(o, stride, padding, kh, kw):
        flat = _flat_padded(xp, kw)
        out = _tap_forward(flat, w, xp.shape[2], ho, wo)
        if b is not None:
            out += b[:, None, None]
        return out, flat
    cols = _im2col(xp, kh, kw, sh, sw, ho, wo)
    out = (w.reshape(o, -1) @ cols).reshape(o, ho, wo)
    if b is not None:
        out += b[:, None, None]
    return out, cols


def conv2d_backward_np(g, x_shape, w, cols, stride: Pair, padding: Pair, need_x=True, need_w=True):
    """Gradients ``(dx, dw, db)`` for :func:`conv2d_forward_np`; skipped ones are None."""
    o, c, kh, kw = w.shape
    (sh, sw), (ph, pw) = stride, padding
    ho, wo = g.shape[1:]
    h, wd = x_shape[1:]
    if _use_taps(o, stride, padding, kh, kw):  # forward kept the flat input, not a patch matrix
        return _tap_backward(g, cols, w, h, wd, ph, pw, need_x, need_w)
    g2 = g.reshape(o, ho * wo)
    dw = (g2 @ cols.T).reshape(w.shape) if need_w else None
    db = g2.sum(axis=1)
    if not need_x:
        return None, dw, db
    dcols = w.reshape(o, -1).T @ g2
    dxp = _col2im(dcols, c, kh, kw, sh, sw, ho, wo, h + 2 * ph, wd + 2 * pw)
    dx = dxp[:, ph : ph + h, pw : pw + wd]
    return np.ascontiguousarray(dx), dw, db


def _tap_backward(g, flat, w, h, wd, ph, pw, need_x, need_w):
    o, c, kh, kw = w.shape
    ho = g.shape[1]
    wp = wd + 2 * pw
    n = ho * wp
    db = g.sum(axis=(1, 2))
    dw = None
    if need_w:
        ge = _tap_extend(g, wp)
        dw = np.empty(w.shape)
        for a in range(kh):
            for b in range(kw):
                off = a * wp + b
                dw[:, :, a, b] = ge @ flat[:, off : off + n].T
    dx = None
    if need_x:
        # unit stride: the input gradient is a convolution of g with the flipped kernel
        wf = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
        dx, _ = conv2d_forward_np(g, wf, None, (1, 1), (kh - 1 - ph, kw - 1 - pw))
    return dx, dw, db


def _check_convt(x: np.ndarray, w: np.ndarray, op: str) -> None:
    if x.ndim != 3 or w.ndim != 4:
        raise ShapeError(op, x.shape, w.shape, detail="expected input [C,H,W] and weight [I,O,kh,kw]")
    if x.shape[0] != w.shape[0]:
        raise ShapeError(op, x.shape, w.shape,
                         detail=f"input has {x.shape[0]} channels, weight expects {w.shape[0]}")


def conv_transpose2d_forward_np(x, w, b, stride: Pair, padding: Pair, output_padding: Pair = (0, 0)):
    """Transposed convolution (adjoint of conv2d w.r.t. its input); ``w`` is ``[in, out, kh, kw]``."""
    _check_convt(x, w, "conv_transpose2d")
    c, o, kh, kw = w.shape
    (sh, sw), (ph, pw), (oh, ow) = stride, padding, output_padding
    h, wd = x.shape[1:]
    hout = conv_transpose_out_size(h, kh, sh, ph, oh)
    wout = conv_transpose_out_size(wd, kw, sw, pw, ow)
    for name, n, out in zip(_AXES, (h, wd), (hout, wout)):
        if out < 1:
            raise ShapeError("conv_transpose2d", x.shape, w.shape,
                             detail=f"{name} axis: input size {n} gives empty output")
    hf, wf = (h - 1) * sh + kh + oh, (wd - 1) * sw + kw + ow
    cols = w.reshape(c, o * kh * kw).T @ x.reshape(c, h * wd)
    full = _col2im(cols, o, kh, kw, sh, sw, h, wd, hf, wf)
    out = np.ascontiguousarray(full[:, ph : ph + hout, pw : pw + wout])
    if b is not None:
        out += b[:, None, None]
    return out


def conv_transpose2d_backward_np(g, x, w, stride: Pair, padding: Pair, output_padding: Pair = (0, 0),
                                 need_x=True, need_w=True):
    c, o, kh, kw = w.shape
    (sh, sw), (ph, pw), (oh, ow) = stride, padding, output_padding
    h, wd = x.shape[1:]
    hf, wf = (h - 1) * sh + kh + oh, (wd - 1) * sw + kw + ow
    if (ph, pw) == (0, 0) and g.shape[1:] == (hf, wf):
        full = g
    else:
        full = np.zeros((o, hf, wf))
        full[:, ph : ph + g.shape[1], pw : pw + g.shape[2]] = g
    gcols = _im2col(full, kh, kw, sh, sw, h, wd)  # [o*kh*kw, h*wd]
    w2 = w.reshape(c, o * kh * kw)
    dx = (w2 @ gcols).reshape(c, h, wd) if need_x else None
    dw = (x.reshape(c, h * wd) @ gcols.T).reshape(w.shape) if need_w else None
    db = g.sum(axis=(1, 2))
    return dx, dw, db


# -- differentiable wrappers ----------------------------------------------------
def _pair(v) -> Pair:
    return (int(v), int(v)) if np.isscalar(v) else (int(v[0]), int(v[1]))


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride=1, padding=0) -> Tensor:
    stride, padding = _pair(stride), _pair(padding)
    bd = None if b is None else b.data
    out, cols = conv2d_forward_np(x.data, w.data, bd, stride, padding)
    xs, wd = x.shape, w.data

    def bw(g):
        dx, dw, db = conv2d_backward_np(g, xs, wd, cols, stride, padding, x.requires_grad, w.requires_grad)
        return (dx, dw) if b is None else (dx, dw, db)

    inputs = (x, w) if b is None else (x, w, b)
    return _make("conv2d", out, inputs, bw)


def conv_transpose2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride=1, padding=0,
                     output_padding=0) -> Tensor:
    stride, padding, output_padding = _pair(stride), _pair(padding), _pair(output_padding)
    bd = None if b is None else b.data
    out = conv_transpose2d_forward_np(x.data, w.data, bd, stride, padding, output_padding)
    xd, wd = x.data, w.data

    def bw(g):
        dx, dw, db = conv_transpose2d_backward_np(g, xd, wd, stride, padding, output_padding,
                                                  x.requires_grad, w.requires_grad)
        return (dx, dw) if b is None else (dx, dw, db)

    inputs = (x, w) if b is None else (x, w, b)
    return _make("conv_transpose2d", out, inputs, bw)


def _check_1d(x: np.ndarray, w: np.ndarray, op: str) -> None:
    if x.ndim != 2 or w.ndim != 3:
        raise ShapeError(op, x.shape, w.shape, detail="expected input [C,T] and weight [O,I,k]")


def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    _check_1d(x.data, w.data, "conv1d")
    st, pd = (1, int(stride)), (0, int(padding))
    x4, w4 = x.data[:, None, :], w.data[:, :, None, :]
    bd = None if b is None else b.data
    if x.shape[0] == w.shape[1] and conv_out_size(x.shape[1], w.shape[2], st[1], pd[1]) < 1:
        raise ShapeError("conv1d", x.shape, w.shape,
                         detail=f"time axis: size {x.shape[1]} with padding {padding} is smaller than kernel")
    out, cols = conv2d_forward_np(x4, w4, bd, st, pd)
    xs = x4.shape

    def bw(g):
        dx, dw, db = conv2d_backward_np(g[:, None, :], xs, w4, cols, st, pd, x.requires_grad, w.requires_grad)
        dx = None if dx is None else dx[:, 0, :]
        dw = None if dw is None else dw[:, :, 0, :]
        return (dx, dw) if b is None else (dx, dw, db)

    inputs = (x, w) if b is None else (x, w, b)
    return _make("conv1d", out[:, 0, :], inputs, bw)


def conv_transpose1d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0,
                     output_padding: int = 0) -> Tensor:
    if x.ndim != 2 or w.ndim != 3:
        raise ShapeError("conv_transpose1d", x.shape, w.shape, detail="expected input [C,T] and weight [I,O,k]")
    st, pd, op = (1, int(stride)), (0, int(padding)), (0, int(output_padding))
    x4, w4 = x.data[:, None, :], w.data[:, :, None, :]
    bd = None if b is None else b.data
    out = conv_transpose2d_forward_np(x4, w4, bd, st, pd, op)

    def bw(g):
        dx, dw, db = conv_transpose2d_backward_np(g[:, None, :], x4, w4, st, pd, op,
                                                  x.requires_grad, w.requires_grad)
        dx = None if dx is None else dx[:, 0, :]
        dw = None if dw is None else dw[:, :, 0, :]
        return (dx, dw) if b is None else (dx, dw, db)

    inputs = (x, w) if b is None else (x, w, b)
    return _make("conv_transpose1d", out[:, 0, :], inputs, bw)


def weight_norm(v: Tensor, g: Tensor, axis: int = 0) -> Tensor:
    """Effective weight ``g[o] * v[o] / ||v[o]||`` with ``o`` indexing ``axis``."""
    if g.shape != (v.shape[axis],):
        raise ShapeError("weight_norm", v.shape, g.shape, detail=f"one gain per entry of axis {axis}")
    vd, gd = v.data, g.data
    letters = "abcdefgh"[: vd.ndim]
    reduce_to_axis = f"{letters},{letters}->{letters[axis]}"
    bshape = [1] * vd.ndim
    bshape[axis] = -1
    norm = np.sqrt(np.einsum(reduce_to_axis, vd, vd))
    if np.any(norm == 0):
        raise ValueError("weight_norm: direction tensor has a zero-norm output channel")
    gain = (gd / norm).reshape(bshape)

    def bw(G):
        proj = np.einsum(reduce_to_axis, G, vd) / norm  # = sum(G * unit)
        dv = G * gain
        dv -= (gain * (proj / norm).reshape(bshape)) * vd
        return dv, proj

    return _make("weight_norm", vd * gain, (v, g), bw)
