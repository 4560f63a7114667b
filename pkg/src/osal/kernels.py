"""Hot numeric kernels with numba and pure-numpy implementations.

Convolutions and pooling dominate the per-stage cost of scoring a large
unlabeled pool with a convolutional encoder, so they get ``@njit`` loop
kernels plus vectorized numpy fallbacks. The active implementation is chosen
once at import time via :mod:`osal.backend`; both are importable directly
(``numpy_impl`` / ``numba_impl``) for cross-checks and benchmarks.

Conventions: batches are NCHW float64 arrays, convolutions are stride-1 and
take pre-padded inputs, pooling is 2x2/stride-2 in floor mode (odd trailing
rows and columns are ignored).
"""

import types

import numpy as np

from .backend import resolve_backend

BACKEND = resolve_backend()


# ---------------------------------------------------------------------------
# pure-numpy implementations
# ---------------------------------------------------------------------------

def _window_view(xp: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """Sliding-window view of shape [N, C, kh, kw, OH, OW] over the padded input."""
    n, c, hp, wp = xp.shape
    oh, ow = hp - kh + 1, wp - kw + 1
    sn, sc, sh, sw = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp, (n, c, kh, kw, oh, ow), (sn, sc, sh, sw, sh, sw), writeable=False
    )


def _np_conv2d_forward(xp, w, b):
    cols = _window_view(xp, w.shape[2], w.shape[3])
    # [N, OH, OW, F] <- sum over (C, kh, kw)
    out = np.tensordot(cols, w, axes=([1, 2, 3], [1, 2, 3]))
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    out += b[None, :, None, None]
    return out


def _np_conv2d_backward_weights(xp, gout):
    cols = _window_view(xp, xp.shape[2] - gout.shape[2] + 1, xp.shape[3] - gout.shape[3] + 1)
    # gw[f,c,kh,kw] = sum_{n,oh,ow} xp[n,c,oh+kh,ow+kw] * gout[n,f,oh,ow]
    gw = np.tensordot(gout, cols, axes=([0, 2, 3], [0, 4, 5]))
    return np.ascontiguousarray(gw)


def _np_maxpool2_forward(x):
    n, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    v = x[:, :, : h2 * 2, : w2 * 2].reshape(n, c, h2, 2, w2, 2)
    v = v.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2, w2, 4)
    idx = v.argmax(axis=4).astype(np.int64)
    out = np.take_along_axis(v, idx[..., None], axis=4)[..., 0]
    return out, idx


def _np_maxpool2_backward(gout, idx, h, w):
    n, c, h2, w2 = gout.shape
    gx = np.zeros((n, c, h, w), dtype=gout.dtype)
    view = gx[:, :, : h2 * 2, : w2 * 2].reshape(n, c, h2, 2, w2, 2)
    view = view.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2, w2, 4)
    np.put_along_axis(view, idx[..., None], gout[..., None], axis=4)
    back = view.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    gx[:, :, : h2 * 2, : w2 * 2] = back.reshape(n, c, h2 * 2, w2 * 2)
    return gx


def _np_pairwise_sq_dists(a, b):
    aa = np.sum(a * a, axis=1)[:, None]
    bb = np.sum(b * b, axis=1)[None, :]
    d = aa + bb - 2.0 * (a @ b.T)
    np.maximum(d, 0.0, out=d)
    return d


numpy_impl = types.SimpleNamespace(
    conv2d_forward=_np_conv2d_forward,
    conv2d_backward_weights=_np_conv2d_backward_weights,
    maxpool2_forward=_np_maxpool2_forward,
    maxpool2_backward=_np_maxpool2_backward,
    pairwise_sq_dists=_np_pairwise_sq_dists,
)


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

numba_impl = None

try:
    if BACKEND == "numpy":
        raise ImportError  # forced numpy: skip compiling the numba kernels
    from numba import njit

    @njit(cache=True)
    def _nb_conv2d_forward(xp, w, b):
        # scalar-broadcast accumulation: the inner (y, x) loops walk both the
        # input row and the output row contiguously
        n, c, hp, wp = xp.shape
        f, _, kh, kw = w.shape
        oh, ow = hp - kh + 1, wp - kw + 1
        out = np.empty((n, f, oh, ow), dtype=np.float64)
        for i in range(n):
            for j in range(f):
                for y in range(oh):
                    for x in range(ow):
                        out[i, j, y, x] = b[j]
            for ch in range(c):
                for u in range(kh):
                    for v in range(kw):
                        for j in range(f):
                            wv = w[j, ch, u, v]
                            for y in range(oh):
                                for x in range(ow):
                                    out[i, j, y, x] += xp[i, ch, y + u, x + v] * wv
        return out

    @njit(cache=True)
    def _nb_conv2d_backward_weights(xp, gout):
        n, c, hp, wp = xp.shape
        _, f, oh, ow = gout.shape
        kh, kw = hp - oh + 1, wp - ow + 1
        gw = np.zeros((f, c, kh, kw), dtype=np.float64)
        for i in range(n):
            for j in range(f):
                for ch in range(c):
                    for u in range(kh):
                        for v in range(kw):
                            acc = 0.0
                            for y in range(oh):
                                for x in range(ow):
                                    acc += xp[i, ch, y + u, x + v] * gout[i, j, y, x]
                            gw[j, ch, u, v] += acc
        return gw

    @njit(cache=True)
    def _nb_maxpool2_forward(x):
        n, c, h, w = x.shape
        h2, w2 = h // 2, w // 2
        out = np.empty((n, c, h2, w2), dtype=np.float64)
        idx = np.empty((n, c, h2, w2), dtype=np.int64)
        for i in range(n):
            for ch in range(c):
                for y in range(h2):
                    for x2 in range(w2):
                        best = x[i, ch, 2 * y, 2 * x2]
                        arg = 0
                        k = 0
                        for u in range(2):
                            for v in range(2):
                                val = x[i, ch, 2 * y + u, 2 * x2 + v]
                                if val > best:
                                    best = val
                                    arg = k
                                k += 1
                        out[i, ch, y, x2] = best
                        idx[i, ch, y, x2] = arg
        return out, idx

    @njit(cache=True)
    def _nb_maxpool2_backward(gout, idx, h, w):
        n, c, h2, w2 = gout.shape
        gx = np.zeros((n, c, h, w), dtype=np.float64)
        for i in range(n):
            for ch in range(c):
                for y in range(h2):
                    for x2 in range(w2):
                        k = idx[i, ch, y, x2]
                        u, v = k // 2, k % 2
                        gx[i, ch, 2 * y + u, 2 * x2 + v] += gout[i, ch, y, x2]
        return gx

    @njit(cache=True)
    def _nb_pairwise_sq_dists(a, b):
        n, d = a.shape
        m = b.shape[0]
        out = np.empty((n, m), dtype=np.float64)
        for i in range(n):
            for j in range(m):
                acc = 0.0
                for k in range(d):
                    diff = a[i, k] - b[j, k]
                    acc += diff * diff
                out[i, j] = acc
        return out

    numba_impl = types.SimpleNamespace(
        conv2d_forward=_nb_conv2d_forward,
        conv2d_backward_weights=_nb_conv2d_backward_weights,
        maxpool2_forward=_nb_maxpool2_forward,
        maxpool2_backward=_nb_maxpool2_backward,
        pairwise_sq_dists=_nb_pairwise_sq_dists,
    )
except ImportError:
    numba_impl = None

if BACKEND == "numba":
    _active = numba_impl
else:
    _active = numpy_impl

conv2d_forward = _active.conv2d_forward
conv2d_backward_weights = _active.conv2d_backward_weights
maxpool2_forward = _active.maxpool2_forward
maxpool2_backward = _active.maxpool2_backward
pairwise_sq_dists = _active.pairwise_sq_dists


def conv2d_backward_input(gout, w):
    """Gradient of a stride-1 convolution w.r.t. its (padded) input.

    Full correlation of ``gout`` with the kernel flipped in both spatial
    axes, expressed through the forward kernel so both backends share it.
    """
    kh, kw = w.shape[2], w.shape[3]
    gpad = np.pad(gout, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
    wflip = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    zero = np.zeros(wflip.shape[0], dtype=np.float64)
    return conv2d_forward(np.ascontiguousarray(gpad), wflip, zero)
