"""Independent reference implementations used as test oracles."""

import numpy as np


def conv2d_naive(x, w, b, stride, padding):
    """Direct nested-loop cross-correlation; ``w`` is ``[out, in, kh, kw]``."""
    c, h, wd = x.shape
    o, _, kh, kw = w.shape
    sh, sw = stride
    ph, pw = padding
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (wd + 2 * pw - kw) // sw + 1
    out = np.zeros((o, ho, wo))
    for oc in range(o):
        for i in range(ho):
            for j in range(wo):
                acc = 0.0 if b is None else b[oc]
                for ic in range(c):
                    for a in range(kh):
                        for bb in range(kw):
                            r, s = i * sh + a - ph, j * sw + bb - pw
                            if 0 <= r < h and 0 <= s < wd:
                                acc += x[ic, r, s] * w[oc, ic, a, bb]
                out[oc, i, j] = acc
    return out


def conv_transpose2d_naive(x, w, b, stride, padding, output_padding=(0, 0)):
    """Scatter form of the transposed convolution; ``w`` is ``[in, out, kh, kw]``."""
    c, h, wd = x.shape
    _, o, kh, kw = w.shape
    sh, sw = stride
    ph, pw = padding
    oh, ow = output_padding
    hout = (h - 1) * sh - 2 * ph + kh + oh
    wout = (wd - 1) * sw - 2 * pw + kw + ow
    out = np.zeros((o, hout, wout))
    for ic in range(c):
        for i in range(h):
            for j in range(wd):
                for oc in range(o):
                    for a in range(kh):
                        for bb in range(kw):
                            r, s = i * sh + a - ph, j * sw + bb - pw
                            if 0 <= r < hout and 0 <= s < wout:
                                out[oc, r, s] += x[ic, i, j] * w[ic, oc, a, bb]
    if b is not None:
        out += np.asarray(b)[:, None, None]
    return out


def numeric_grad(f, x, eps=1e-6):
    """Central differences of scalar ``f()`` with respect to array ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f()
        flat[i] = orig - eps
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * eps)
    return g


def rel_err(a, b):
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if scale == 0 else float(np.linalg.norm(a - b) / scale)


def adam_reference(x0, grad_fn, steps, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Textbook Adam trajectory of a parameter array."""
    x = np.array(x0, dtype=np.float64)
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    traj = []
    for t in range(1, steps + 1):
        g = grad_fn(x)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        mhat = m / (1 - beta1**t)
        vhat = v / (1 - beta2**t)
        x = x - lr * mhat / (np.sqrt(vhat) + eps)
        traj.append(x.copy())
    return traj


def radam_reference(x0, grad_fn, steps, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Textbook rectified Adam (momentum-only while the SMA length is <= 4)."""
    x = np.array(x0, dtype=np.float64)
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    rho_inf = 2 / (1 - beta2) - 1
    traj = []
    for t in range(1, steps + 1):
        g = grad_fn(x)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        mhat = m / (1 - beta1**t)
        rho = rho_inf - 2 * t * beta2**t / (1 - beta2**t)
        if rho > 4:
            r = np.sqrt((rho - 4) * (rho - 2) * rho_inf / ((rho_inf - 4) * (rho_inf - 2) * rho))
            x = x - lr * r * mhat / (np.sqrt(v / (1 - beta2**t)) + eps)
        else:
            x = x - lr * mhat
        traj.append(x.copy())
    return traj
