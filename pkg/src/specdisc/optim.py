"""RAdam wrapped in Lookahead."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .tensor import Tensor


def sma_length(t: int, beta2: float) -> float:
    """Length of the approximated simple moving average after ``t`` steps."""
    rho_inf = 2.0 / (1.0 - beta2) - 1.0
    b2t = beta2**t
    return rho_inf - 2.0 * t * b2t / (1.0 - b2t)


def rectification(t: int, beta2: float) -> float | None:
    """Variance rectification factor, or ``None`` when the SMA is too short (rho <= 4)."""
    rho_inf = 2.0 / (1.0 - beta2) - 1.0
    rho = sma_length(t, beta2)
    if rho <= 4.0:
        return None
    return math.sqrt((rho - 4) * (rho - 2) * rho_inf / ((rho_inf - 4) * (rho_inf - 2) * rho))


_CHUNK = 1 << 15  # elements per block; keeps the update's temporaries cache-resident


def radam_step(param: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray, t: int, lr: float,
               beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
               rectify: bool = True, force_adaptive: bool = False) -> None:
    """One in-place RAdam update of ``param``, ``m`` and ``v``; ``t`` is the 1-based step.

    ``rectify=False, force_adaptive=True`` turns this into plain Adam.
    """
    if not math.isfinite(float(grad.sum())):  # nan and inf survive the sum
        raise FloatingPointError("non-finite gradient passed to RAdam")
    bc1 = 1.0 - beta1**t
    r = rectification(t, beta2)
    if force_adaptive and r is None:
        r = 1.0
    if r is not None and not rectify:
        r = 1.0
    inv_bc2 = 1.0 / math.sqrt(1.0 - beta2**t)
    state = (param, m, v)
    work = [a if a.flags.c_contiguous else np.ascontiguousarray(a) for a in state]
    p_all, m_all, v_all = (a.reshape(-1) for a in work)
    g_all = np.ascontiguousarray(grad).reshape(-1)
    tmp_all = np.empty(min(_CHUNK, p_all.size))
    for lo in range(0, p_all.size, _CHUNK):
        hi = lo + _CHUNK
        p, g, mm, vv = p_all[lo:hi], g_all[lo:hi], m_all[lo:hi], v_all[lo:hi]
        tmp = tmp_all[: p.size]
        mm *= beta1
        np.multiply(g, 1.0 - beta1, out=tmp)
        mm += tmp
        vv *= beta2
        np.multiply(g, g, out=tmp)
        tmp *= 1.0 - beta2
        vv += tmp
        if r is None:
            np.multiply(mm, lr / bc1, out=tmp)
        else:
            # lr*r * (m/bc1) / (sqrt(v/bc2) + eps)
            np.sqrt(vv, out=tmp)
            tmp *= inv_bc2
            tmp += eps
            np.divide(mm, tmp, out=tmp)
            tmp *= lr * r / bc1
        p -= tmp
    for dst, src in zip(state, work):
        if dst is not src:
            dst[...] = src


class RAdam:
    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8,
                 rectify: bool = True, force_adaptive: bool = False):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.rectify = rectify
        self.force_adaptive = force_adaptive
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        for p, m, v in zip(self.params, self.m, self.v):
            grad = np.zeros_like(p.data) if p.grad is None else p.grad
            radam_step(p.data, grad, m, v, self.t, lr, self.beta1, self.beta2, self.eps,
                       self.rectify, self.force_adaptive)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def state_dict(self) -> dict:
        return {"t": self.t, "m": [a.copy() for a in self.m], "v": [a.copy() for a in self.v]}

    def load_state_dict(self, state: dict) -> None:
        self.t = int(state["t"])
        self.m = [np.array(a, dtype=np.float64) for a in state["m"]]
        self.v = [np.array(a, dtype=np.float64) for a in state["v"]]


def lookahead_sync(params: Sequence[np.ndarray], slow: Sequence[np.ndarray], alpha: float) -> None:
    """``slow <- slow + alpha * (fast - slow)``; ``fast <- slow`` (in place)."""
    for fast, phi in zip(params, slow):
        phi += alpha * (fast - phi)
        fast[...] = phi


class Lookahead:
    """Keeps slow weights and pulls the fast weights back to them every ``k`` inner steps."""

    def __init__(self, inner: RAdam, k: int = 5, alpha: float = 0.5):
        if k < 1:
            raise ValueError("lookahead k must be >= 1")
        self.inner = inner
        self.k = k
        self.alpha = alpha
        self.counter = 0
        self.slow = [p.data.copy() for p in inner.params]

    @property
    def params(self) -> list[Tensor]:
        return self.inner.params

    def step(self, lr: float | None = None) -> None:
        self.inner.step(lr)
        self.counter += 1
        if self.counter % self.k == 0:
            lookahead_sync([p.data for p in self.inner.params], self.slow, self.alpha)

    def zero_grad(self) -> None:
        self.inner.zero_grad()

    def state_dict(self) -> dict:
        state = self.inner.state_dict()
        state.update(counter=self.counter, slow=[a.copy() for a in self.slow])
        return state

    def load_state_dict(self, state: dict) -> None:
        self.inner.load_state_dict(state)
        self.counter = int(state["counter"])
        self.slow = [np.array(a, dtype=np.float64) for a in state["slow"]]


def make_optimizer(params: Sequence[Tensor], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8,
                   k: int = 5, alpha: float = 0.5) -> Lookahead:
    return Lookahead(RAdam(params, lr=lr, betas=betas, eps=eps), k=k, alpha=alpha)
