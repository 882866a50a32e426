"""Selective state-space scan: linear-time sequence mixing.

The recurrence uses zero-order-hold discretization with the standard
simplification abar = exp(dt * A), bbar = dt * B. Step size dt, input
projection B and output projection C are produced per step from the input
(dt through softplus so it stays positive); A is a per-channel diagonal
initialized negative so the state decays; D is a per-channel skip weight.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import kernels
from .autodiff import Tensor
from .errors import NumericError, ShapeError


@dataclass(slots=True)
class SSMParams:
    A: Tensor      # (channels, N), negative at init
    W_dt: Tensor   # (channels, channels)
    b_dt: Tensor   # (channels,)
    W_B: Tensor    # (channels, N)
    W_C: Tensor    # (channels, N)
    D: Tensor      # (channels,)

    @property
    def channels(self):
        return self.A.data.shape[0]

    @property
    def state_dim(self):
        return self.A.data.shape[1]

    def tensors(self):
        return {"A": self.A, "W_dt": self.W_dt, "b_dt": self.b_dt,
                "W_B": self.W_B, "W_C": self.W_C, "D": self.D}


def init_ssm_params(channels, state_dim, rng, dt_init=0.05):
    """Deterministic init: A[c, n] = -(n + 1), dt bias set so softplus ~ dt_init."""
    a = -np.tile(np.arange(1.0, state_dim + 1.0), (channels, 1))
    bias = float(np.log(np.expm1(dt_init)))  # inverse softplus
    return SSMParams(
        A=Tensor(a, requires_grad=True),
        W_dt=Tensor(rng.normal(0.0, 1.0 / np.sqrt(channels), (channels, channels)),
                    requires_grad=True),
        b_dt=Tensor(np.full(channels, bias), requires_grad=True),
        W_B=Tensor(rng.normal(0.0, 1.0 / np.sqrt(channels), (channels, state_dim)),
                   requires_grad=True),
        W_C=Tensor(rng.normal(0.0, 1.0 / np.sqrt(channels), (channels, state_dim)),
                   requires_grad=True),
        D=Tensor(np.ones(channels), requires_grad=True),
    )


def _recurrence(x, dt, B, Ct, A, D, block=None):
    """Differentiable scan over precomputed per-step parameters.

    Forward runs in chunks of `block` steps (None = whole sequence) with the
    hidden state carried across chunks; chunking never changes the arithmetic.
    """
    length, channels = x.data.shape
    state_dim = A.data.shape[1]
    if dt.data.shape != (length, channels):
        raise ShapeError(f"scan: dt {dt.data.shape} vs x {x.data.shape}")
    if B.data.shape != (length, state_dim) or Ct.data.shape != (length, state_dim):
        raise ShapeError(
            f"scan: B {B.data.shape} / C {Ct.data.shape} vs (L, N) = ({length}, {state_dim})"
        )

    recording = ad._tls().tape is not None and any(
        t.requires_grad for t in (x, dt, B, Ct, A, D)
    )
    y = np.empty((length, channels))
    hist = np.empty((length, channels, state_dim)) if recording else np.empty((1, 1, 1))
    h = np.zeros((channels, state_dim))
    h0 = np.zeros((channels, state_dim))
    step = length if not block else max(1, int(block))
    for start in range(0, length, step):
        stop = min(start + step, length)
        kernels.scan_forward(
            x.data[start:stop], dt.data[start:stop],
            B.data[start:stop], Ct.data[start:stop],
            A.data, D.data, h, y[start:stop],
            hist[start:stop] if recording else hist, recording,
        )
    out = Tensor(y)

    def vjp(g):
        gx = np.zeros_like(x.data)
        gdt = np.zeros_like(dt.data)
        gB = np.zeros_like(B.data)
        gCt = np.zeros_like(Ct.data)
        gA = np.zeros_like(A.data)
        gD = np.zeros_like(D.data)
        kernels.scan_backward(
            x.data, dt.data, B.data, Ct.data, A.data, D.data,
            h0, hist, np.ascontiguousarray(g),
            gx, gdt, gB, gCt, gA, gD,
        )
        return gx, gdt, gB, gCt, gA, gD

    return ad._record(out, (x, dt, B, Ct, A, D), vjp)


def _check_finite(x):
    finite = np.isfinite(x.data).all(axis=1)
    if not finite.all():
        step = int(np.argmin(finite))
        raise NumericError(f"non-finite scan input at step {step}")


def _project(x, params):
    dt = ad.softplus(ad.linear(x, params.W_dt, params.b_dt))
    B = ad.matmul(x, params.W_B)
    Ct = ad.matmul(x, params.W_C)
    return dt, B, Ct


def selective_scan(x, params):
    """Reference scan over a (length, channels) sequence; differentiable."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.data.ndim != 2 or x.data.shape[0] < 1:
        raise ShapeError(f"selective_scan: expected (L >= 1, channels), got {x.data.shape}")
    if x.data.shape[1] != params.channels:
        raise ShapeError(
            f"selective_scan: input channels {x.data.shape[1]} vs params {params.channels}"
        )
    _check_finite(x)
    dt, B, Ct = _project(x, params)
    return _recurrence(x, dt, B, Ct, params.A, params.D)


def scan_blocked(x, params, block):
    """Chunked scan; output equals selective_scan for any block size."""
    if block < 1:
        raise ValueError(f"block must be >= 1, got {block}")
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.data.ndim != 2 or x.data.shape[0] < 1:
        raise ShapeError(f"scan_blocked: expected (L >= 1, channels), got {x.data.shape}")
    _check_finite(x)
    dt, B, Ct = _project(x, params)
    return _recurrence(x, dt, B, Ct, params.A, params.D, block=block)


def raw_scan(x, dt, B, Ct, A, D, block=None):
    """Scan with explicit per-step parameters; used by tests and the benchmark
    so timing excludes the projection layers."""
    wrap = lambda v: v if isinstance(v, Tensor) else Tensor(v)
    return _recurrence(
        wrap(x), wrap(dt), wrap(B), wrap(Ct), wrap(A), wrap(D), block=block
    )
