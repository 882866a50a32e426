"""Scan-kernel dispatch: compiled extension when available, numpy otherwise.

Both implementations share the recurrence definition documented in _scan.pyx
and the same summation order. Set EVDERAIN_PURE_PY=1 before import to force
the numpy path (used by the implementation-comparison benchmark).
"""

from __future__ import annotations

import os

import numpy as np

try:
    from . import _scan as _scan_ext
except ImportError:  # extension not built; the fallback covers everything
    _scan_ext = None

_FORCE_PURE = os.environ.get("EVDERAIN_PURE_PY", "") not in ("", "0")

HAVE_EXTENSION = _scan_ext is not None


def active_impl():
    return "cython" if (HAVE_EXTENSION and not _FORCE_PURE) else "python"


# chunk length for the vectorized fallback; bounds the (chunk, C, N) temporaries
_NP_CHUNK = 4096


def _scan_forward_np(x, dt, B, Ct, A, D, h, y, hist, save_hist):
    length = x.shape[0]
    for start in range(0, length, _NP_CHUNK):
        stop = min(start + _NP_CHUNK, length)
        abar = np.exp(dt[start:stop, :, None] * A[None, :, :])
        u = (dt[start:stop] * x[start:stop])[:, :, None] * B[start:stop, None, :]
        for i in range(stop - start):
            hc = abar[i] * h + u[i]
            h[...] = hc
            t = start + i
            y[t] = hc @ Ct[t] + D * x[t]
            if save_hist:
                hist[t] = hc


def _scan_backward_np(x, dt, B, Ct, A, D, h0, hist, gy,
                      gx, gdt, gB, gCt, gA, gD):
    length = x.shape[0]
    gh = np.zeros_like(A)
    for t in range(length - 1, -1, -1):
        hprev = hist[t - 1] if t > 0 else h0
        abar = np.exp(dt[t][:, None] * A)
        dyt = gy[t]
        gD += dyt * x[t]
        gx[t] += dyt * D
        gCt[t] += hist[t].T @ dyt
        ghn = gh + dyt[:, None] * Ct[t][None, :]
        gab = ghn * hprev
        gdt[t] += (gab * A * abar).sum(axis=1) + (ghn * B[t][None, :]).sum(axis=1) * x[t]
        gA += gab * dt[t][:, None] * abar
        gB[t] += ghn.T @ (dt[t] * x[t])
        gx[t] += (ghn * B[t][None, :]).sum(axis=1) * dt[t]
        gh = ghn * abar


def scan_forward(x, dt, B, Ct, A, D, h, y, hist, save_hist):
    if HAVE_EXTENSION and not _FORCE_PURE:
        _scan_ext.scan_forward(x, dt, B, Ct, A, D, h, y, hist, save_hist)
    else:
        _scan_forward_np(x, dt, B, Ct, A, D, h, y, hist, save_hist)


def scan_backward(x, dt, B, Ct, A, D, h0, hist, gy, gx, gdt, gB, gCt, gA, gD):
    if HAVE_EXTENSION and not _FORCE_PURE:
        _scan_ext.scan_backward(x, dt, B, Ct, A, D, h0, hist, gy, gx, gdt, gB, gCt, gA, gD)
    else:
        _scan_backward_np(x, dt, B, Ct, A, D, h0, hist, gy, gx, gdt, gB, gCt, gA, gD)


def scan_forward_impl(impl, x, dt, B, Ct, A, D, h, y, hist, save_hist):
    """Run a specific implementation by name ("cython" or "python")."""
    if impl == "cython":
        if _scan_ext is None:
            raise RuntimeError("compiled scan extension is not available")
        _scan_ext.scan_forward(x, dt, B, Ct, A, D, h, y, hist, save_hist)
    elif impl == "python":
        _scan_forward_np(x, dt, B, Ct, A, D, h, y, hist, save_hist)
    else:
        raise ValueError(f"unknown impl {impl!r}")


def scan_backward_impl(impl, x, dt, B, Ct, A, D, h0, hist, gy,
                       gx, gdt, gB, gCt, gA, gD):
    if impl == "cython":
        if _scan_ext is None:
            raise RuntimeError("compiled scan extension is not available")
        _scan_ext.scan_backward(x, dt, B, Ct, A, D, h0, hist, gy,
                                gx, gdt, gB, gCt, gA, gD)
    elif impl == "python":
        _scan_backward_np(x, dt, B, Ct, A, D, h0, hist, gy, gx, gdt, gB, gCt, gA, gD)
    else:
        raise ValueError(f"unknown impl {impl!r}")
