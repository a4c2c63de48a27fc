"""Hot numeric kernels with a numba fast path and a pure-numpy fallback.

The backend is chosen once at import time from the ``EVACT_BACKEND``
environment variable: ``numba`` (require numba, fail loudly if missing),
``numpy`` (force the fallback), or unset (numba when importable, numpy
otherwise). Both implementations are importable directly so tests and
benchmarks can compare them regardless of the active backend.

All kernels are float64 and single-threaded; results are deterministic
within a backend.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import ShapeError

_FLAG = os.environ.get("EVACT_BACKEND", "").strip().lower()
if _FLAG not in ("", "numba", "numpy"):
    raise ImportError(f"EVACT_BACKEND must be 'numba' or 'numpy', got {_FLAG!r}")

if _FLAG == "numpy":
    _HAVE_NUMBA = False
else:
    try:
        from numba import njit

        _HAVE_NUMBA = True
    except ImportError:
        if _FLAG == "numba":
            raise
        _HAVE_NUMBA = False


def conv_out_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def _check_conv_shapes(x, w, stride, padding):
    if x.ndim != 3 or w.ndim != 4:
        raise ShapeError(f"conv2d expects x [C,H,W] and w [O,C,kh,kw], got {x.shape} and {w.shape}")
    c_in, h, wd = x.shape
    c_out, c_w, kh, kw = w.shape
    if c_w != c_in:
        raise ShapeError(f"conv2d channel mismatch: x has {c_in} channels, w expects {c_w}")
    ho = conv_out_size(h, kh, stride, padding)
    wo = conv_out_size(wd, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError(
            f"conv2d kernel {kh}x{kw} larger than padded input "
            f"{h + 2 * padding}x{wd + 2 * padding} (x {x.shape}, w {w.shape})"
        )
    return ho, wo


# ---------------------------------------------------------------------------
# pure-numpy implementations
# ---------------------------------------------------------------------------

def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Gather sliding-window patches into a [C*kh*kw, ho*wo] matrix."""
    c = xp.shape[0]
    cols = np.empty((c, kh, kw, ho, wo), dtype=xp.dtype)
    for a in range(kh):
        for b in range(kw):
            cols[:, a, b] = xp[:, a : a + stride * ho : stride, b : b + stride * wo : stride]
    return cols.reshape(c * kh * kw, ho * wo)


def conv2d_forward_numpy(x: np.ndarray, w: np.ndarray, stride: int, padding: int) -> np.ndarray:
    ho, wo = _check_conv_shapes(x, w, stride, padding)
    c_out, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding))) if padding else x
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    return (w.reshape(c_out, -1) @ cols).reshape(c_out, ho, wo)


def conv2d_backward_numpy(gy, x, w, stride, padding, need_dx=True):
    ho, wo = _check_conv_shapes(x, w, stride, padding)
    c_in, h, wd = x.shape
    c_out, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding))) if padding else x
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    gy_flat = gy.reshape(c_out, -1)
    gw = (gy_flat @ cols.T).reshape(w.shape)
    if not need_dx:
        return None, gw
    gcols = (w.reshape(c_out, -1).T @ gy_flat).reshape(c_in, kh, kw, ho, wo)
    gxp = np.zeros_like(xp)
    for a in range(kh):
        for b in range(kw):
            gxp[:, a : a + stride * ho : stride, b : b + stride * wo : stride] += gcols[:, a, b]
    gx = gxp[:, padding : padding + h, padding : padding + wd] if padding else gxp
    return gx, gw


def bucket_events_numpy(frames, ts, xs, ys, ps, t0, duration):
    """Accumulate event counts into frames [T,2,H,W] in place."""
    n_frames = frames.shape[0]
    if duration > 0:
        k = ((ts - t0) * np.uint64(n_frames)) // np.uint64(duration)
        k = np.minimum(k.astype(np.int64), n_frames - 1)
    else:
        k = np.zeros(len(ts), dtype=np.int64)
    ch = np.where(ps > 0, 0, 1)
    np.add.at(frames, (k, ch, ys.astype(np.int64), xs.astype(np.int64)), 1.0)


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if _HAVE_NUMBA:

    @njit(cache=True)
    def _conv2d_fwd_nb(xp, w, stride, ho, wo):  # pragma: no cover - measured via wrapper
        c_out, c_in, kh, kw = w.shape
        y = np.zeros((c_out, ho, wo))
        for o in range(c_out):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for c in range(c_in):
                        for a in range(kh):
                            for b in range(kw):
                                acc += xp[c, i * stride + a, j * stride + b] * w[o, c, a, b]
                    y[o, i, j] = acc
        return y

    @njit(cache=True)
    def _conv2d_bwd_nb(gy, xp, w, stride, need_dx):  # pragma: no cover
        c_out, c_in, kh, kw = w.shape
        ho, wo = gy.shape[1], gy.shape[2]
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(w)
        for o in range(c_out):
            for i in range(ho):
                for j in range(wo):
                    g = gy[o, i, j]
                    for c in range(c_in):
                        for a in range(kh):
                            for b in range(kw):
                                gw[o, c, a, b] += xp[c, i * stride + a, j * stride + b] * g
                                if need_dx:
                                    gxp[c, i * stride + a, j * stride + b] += w[o, c, a, b] * g
        return gxp, gw

    @njit(cache=True)
    def _bucket_nb(frames, ts, xs, ys, ps, t0, duration):  # pragma: no cover
        n_frames = frames.shape[0]
        for i in range(ts.shape[0]):
            if duration > 0:
                k = np.int64((ts[i] - t0) * np.uint64(n_frames) // np.uint64(duration))
                if k >= n_frames:
                    k = n_frames - 1
            else:
                k = 0
            ch = 0 if ps[i] > 0 else 1
            frames[k, ch, np.int64(ys[i]), np.int64(xs[i])] += 1.0

    def conv2d_forward_numba(x, w, stride, padding):
        ho, wo = _check_conv_shapes(x, w, stride, padding)
        xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding))) if padding else x
        return _conv2d_fwd_nb(np.ascontiguousarray(xp), np.ascontiguousarray(w), stride, ho, wo)

    def conv2d_backward_numba(gy, x, w, stride, padding, need_dx=True):
        _check_conv_shapes(x, w, stride, padding)
        h, wd = x.shape[1], x.shape[2]
        xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding))) if padding else x
        gxp, gw = _conv2d_bwd_nb(
            np.ascontiguousarray(gy), np.ascontiguousarray(xp), np.ascontiguousarray(w), stride, need_dx
        )
        if not need_dx:
            return None, gw
        gx = gxp[:, padding : padding + h, padding : padding + wd] if padding else gxp
        return gx, gw

    def bucket_events_numba(frames, ts, xs, ys, ps, t0, duration):
        _bucket_nb(frames, ts, xs, ys, ps, np.uint64(t0), np.uint64(duration))


# ---------------------------------------------------------------------------
# backend selection
# ---------------------------------------------------------------------------

if _HAVE_NUMBA:
    BACKEND = "numba"
    conv2d_forward = conv2d_forward_numba
    conv2d_backward = conv2d_backward_numba
    bucket_events = bucket_events_numba
else:
    BACKEND = "numpy"
    conv2d_forward = conv2d_forward_numpy
    conv2d_backward = conv2d_backward_numpy
    bucket_events = bucket_events_numpy


def backend_name() -> str:
    """Active kernel backend, 'numba' or 'numpy'."""
    return BACKEND
