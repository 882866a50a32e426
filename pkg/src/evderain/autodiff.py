"""Dense fp64 tensors with tape-based reverse-mode differentiation.

The op set is exactly what the network, the losses, and the scan kernel need;
there is no general broadcasting. All data is float64. Recording happens on
an explicitly opened Tape: ops executed while a tape is active and touching a
requires_grad tensor append a node (output, parents, vjp closure); backward()
replays the tape in reverse and accumulates d(loss)/d(tensor) into .grad.
Without an active tape every op is forward-only and thread-safe.

Engine state (thread-local): the active tape, a training flag consulted by
batchnorm1d, and a flag freezing batchnorm running statistics so gradient
checks can re-run a training-mode forward without side effects.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np

from .errors import ContractError, RangeError, ShapeError
from .fft import next_pow2, padded_fft

_state = threading.local()


def _tls():
    if not hasattr(_state, "tape"):
        _state.tape = None
        _state.training = False
        _state.freeze_bn = False
    return _state


class Tensor:
    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Ordered record of executed ops; execution order is topological."""

    def __init__(self):
        self._nodes = []  # (out, parents, vjp)

    def __enter__(self):
        tls = _tls()
        if tls.tape is not None:
            raise ContractError("a tape is already active on this thread")
        tls.tape = self
        return self

    def __exit__(self, *exc):
        _tls().tape = None
        return False

    def __len__(self):
        return len(self._nodes)

    def backward(self, loss):
        """Accumulate d(loss)/d(t) into t.grad for every tensor on the tape.

        Repeated calls without clearing grads add up (two calls double them).
        """
        if loss.data.size != 1:
            raise ContractError(f"loss must be scalar, got shape {loss.data.shape}")
        pending = {id(loss): np.ones_like(loss.data)}
        touched = {id(loss): loss}
        for out, parents, vjp in reversed(self._nodes):
            g = pending.pop(id(out), None)
            if g is None:
                continue
            grads = vjp(g)
            for parent, pg in zip(parents, grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + pg
                else:
                    pending[key] = pg
                    touched[key] = parent
            touched[id(out)] = out
            if out.requires_grad:
                out.grad = g if out.grad is None else out.grad + g
        for key, g in pending.items():
            t = touched[key]
            if t.requires_grad:
                t.grad = g if t.grad is None else t.grad + g


def backward(loss):
    tape = _tls().tape
    if tape is None:
        raise ContractError("backward requires an active Tape")
    tape.backward(loss)


@contextmanager
def no_grad():
    tls = _tls()
    saved, tls.tape = tls.tape, None
    try:
        yield
    finally:
        tls.tape = saved


@contextmanager
def training_mode(flag=True):
    tls = _tls()
    saved, tls.training = tls.training, flag
    try:
        yield
    finally:
        tls.training = saved


@contextmanager
def frozen_bn_stats():
    tls = _tls()
    saved, tls.freeze_bn = tls.freeze_bn, True
    try:
        yield
    finally:
        tls.freeze_bn = saved


def is_training():
    return _tls().training


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out, parents, vjp):
    tape = _tls().tape
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        tape._nodes.append((out, parents, vjp))
    return out


def _same_shape(a, b, op):
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: shapes {a.data.shape} and {b.data.shape} differ")


# ---------------------------------------------------------------------------
# elementwise and linear-algebra ops


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape(a, b, "add")
    out = Tensor(a.data + b.data)
    return _record(out, (a, b), lambda g: (g, g))


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape(a, b, "sub")
    out = Tensor(a.data - b.data)
    return _record(out, (a, b), lambda g: (g, -g))


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape(a, b, "mul")
    out = Tensor(a.data * b.data)
    return _record(out, (a, b), lambda g: (g * b.data, g * a.data))


def scale(a, s):
    a = _as_tensor(a)
    s = float(s)
    out = Tensor(a.data * s)
    return _record(out, (a,), lambda g: (g * s,))


def add_scalar(a, s):
    a = _as_tensor(a)
    s = float(s)
    out = Tensor(a.data + s)
    return _record(out, (a,), lambda g: (g,))


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: shapes {a.data.shape} and {b.data.shape} incompatible")
    out = Tensor(a.data @ b.data)
    return _record(out, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def linear(x, w, b=None):
    """x (n, k) @ w (k, m) + b (m,)."""
    x, w = _as_tensor(x), _as_tensor(w)
    if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[0]:
        raise ShapeError(f"linear: shapes {x.data.shape} and {w.data.shape} incompatible")
    y = x.data @ w.data
    if b is None:
        out = Tensor(y)
        return _record(out, (x, w), lambda g: (g @ w.data.T, x.data.T @ g))
    b = _as_tensor(b)
    if b.data.shape != (w.data.shape[1],):
        raise ShapeError(f"linear: bias {b.data.shape} does not match output {w.data.shape[1]}")
    out = Tensor(y + b.data)
    return _record(out, (x, w, b), lambda g: (g @ w.data.T, x.data.T @ g, g.sum(axis=0)))


# ---------------------------------------------------------------------------
# convolutions and normalization (channels-first layout: (C, L))


def conv1d(x, w, b=None, depthwise=False):
    """Same-padded 1D convolution over (channels, length) input.

    Dense: w is (C_out, C_in, k). Depthwise: w is (C, k) and channels map
    one-to-one. The kernel size must be odd so "same" zero padding is
    symmetric and length is preserved.
    """
    x, w = _as_tensor(x), _as_tensor(w)
    if x.data.ndim != 2:
        raise ShapeError(f"conv1d: input must be (channels, length), got {x.data.shape}")
    k = w.data.shape[-1]
    if k % 2 == 0:
        raise ShapeError(f"conv1d: kernel size must be odd for same padding, got {k}")
    c_in, length = x.data.shape
    pad = k // 2
    xp = np.zeros((c_in, length + 2 * pad))
    xp[:, pad:pad + length] = x.data

    if depthwise:
        if w.data.ndim != 2 or w.data.shape[0] != c_in:
            raise ShapeError(f"conv1d depthwise: weight {w.data.shape} vs input {x.data.shape}")
        y = np.zeros((c_in, length))
        for j in range(k):
            y += w.data[:, j:j + 1] * xp[:, j:j + length]
        c_out = c_in
        cols = None
    else:
        if w.data.ndim != 3 or w.data.shape[1] != c_in:
            raise ShapeError(f"conv1d: weight {w.data.shape} vs input {x.data.shape}")
        c_out = w.data.shape[0]
        # im2col: one (c_out, c_in*k) x (c_in*k, length) product
        s0, s1 = xp.strides
        cols = np.lib.stride_tricks.as_strided(
            xp, shape=(c_in, k, length), strides=(s0, s1, s1)
        ).reshape(c_in * k, length)
        y = w.data.reshape(c_out, c_in * k) @ cols

    parents = (x, w)
    if b is not None:
        b = _as_tensor(b)
        if b.data.shape != (c_out,):
            raise ShapeError(f"conv1d: bias {b.data.shape} does not match channels {c_out}")
        y = y + b.data[:, None]
        parents = (x, w, b)

    def vjp(g):
        gxp = np.zeros_like(xp)
        if depthwise:
            gw = np.zeros_like(w.data)
            for j in range(k):
                gw[:, j] = (g * xp[:, j:j + length]).sum(axis=1)
                gxp[:, j:j + length] += w.data[:, j:j + 1] * g
        else:
            gw = (g @ cols.T).reshape(w.data.shape)
            gcols = (w.data.reshape(c_out, c_in * k).T @ g).reshape(c_in, k, length)
            for j in range(k):
                gxp[:, j:j + length] += gcols[:, j]
        gx = gxp[:, pad:pad + length]
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=1)

    return _record(Tensor(y), parents, vjp)


def batchnorm1d(x, gamma, beta, running_mean, running_var,
                momentum=0.1, eps=1e-5):
    """Per-channel normalization of a (channels, length) tensor.

    Training mode (engine state) normalizes with batch statistics over the
    length axis and updates the running buffers in place (unless frozen);
    inference mode applies the exact affine map built from the running stats.
    """
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    if x.data.ndim != 2:
        raise ShapeError(f"batchnorm1d: input must be (channels, length), got {x.data.shape}")
    c = x.data.shape[0]
    for name, t in (("gamma", gamma), ("beta", beta)):
        if t.data.shape != (c,):
            raise ShapeError(f"batchnorm1d: {name} {t.data.shape} does not match channels ({c},)")

    tls = _tls()
    if tls.training:
        mu = x.data.mean(axis=1)
        var = x.data.var(axis=1)
        if not tls.freeze_bn:
            running_mean.data[...] = (1 - momentum) * running_mean.data + momentum * mu
            running_var.data[...] = (1 - momentum) * running_var.data + momentum * var
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mu[:, None]) * inv[:, None]
        out = Tensor(gamma.data[:, None] * xhat + beta.data[:, None])

        def vjp(g):
            n = x.data.shape[1]
            dxhat = g * gamma.data[:, None]
            gx = (inv[:, None] / n) * (
                n * dxhat
                - dxhat.sum(axis=1, keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=1, keepdims=True)
            )
            return gx, (g * xhat).sum(axis=1), g.sum(axis=1)

        return _record(out, (x, gamma, beta), vjp)

    std = np.sqrt(running_var.data + eps)
    xhat = (x.data - running_mean.data[:, None]) / std[:, None]
    out = Tensor(gamma.data[:, None] * xhat + beta.data[:, None])

    def vjp(g):
        return g * (gamma.data / std)[:, None], (g * xhat).sum(axis=1), g.sum(axis=1)

    return _record(out, (x, gamma, beta), vjp)


# ---------------------------------------------------------------------------
# nonlinearities


def sigmoid(x):
    x = _as_tensor(x)
    s = 0.5 * (1.0 + np.tanh(0.5 * x.data))  # overflow-free logistic
    out = Tensor(s)
    return _record(out, (x,), lambda g: (g * s * (1.0 - s),))


def silu(x):
    x = _as_tensor(x)
    s = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    out = Tensor(x.data * s)
    return _record(out, (x,), lambda g: (g * (s + x.data * s * (1.0 - s)),))


def softplus(x):
    x = _as_tensor(x)
    out = Tensor(np.log1p(np.exp(-np.abs(x.data))) + np.maximum(x.data, 0.0))
    s = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _record(out, (x,), lambda g: (g * s,))


def exp(x):
    x = _as_tensor(x)
    y = np.exp(x.data)
    out = Tensor(y)
    return _record(out, (x,), lambda g: (g * y,))


def log(x, floor=None):
    """Natural log; with floor set, inputs are clamped below at floor and the
    derivative uses the clamped value (zero slope has no meaning here)."""
    x = _as_tensor(x)
    v = x.data if floor is None else np.maximum(x.data, floor)
    out = Tensor(np.log(v))
    return _record(out, (x,), lambda g: (g / v,))


def softmax(x, axis=-1):
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(s)

    def vjp(g):
        dot = (g * s).sum(axis=axis, keepdims=True)
        return (s * (g - dot),)

    return _record(out, (x,), vjp)


# ---------------------------------------------------------------------------
# indexing, shaping, reductions


def embedding_lookup(table, ids):
    """Rows of table (V, C) selected by integer ids (n,)."""
    table = _as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise RangeError(
            f"embedding id out of range: max id {ids.max()}, table size {table.data.shape[0]}"
        )
    out = Tensor(table.data[ids])

    def vjp(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return (gt,)

    return _record(out, (table,), vjp)


def concat(parts, axis=0):
    parts = [_as_tensor(p) for p in parts]
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record(out, tuple(parts), vjp)


def tensor_slice(x, start, stop, axis=0):
    x = _as_tensor(x)
    idx = [slice(None)] * x.data.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    out = Tensor(x.data[idx])

    def vjp(g):
        gx = np.zeros_like(x.data)
        gx[idx] = g
        return (gx,)

    return _record(out, (x,), vjp)


def transpose(x):
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"transpose: expected 2D tensor, got {x.data.shape}")
    out = Tensor(x.data.T.copy())
    return _record(out, (x,), lambda g: (g.T,))


def reshape(x, shape):
    x = _as_tensor(x)
    try:
        out = Tensor(x.data.reshape(shape).copy())
    except ValueError as exc:
        raise ShapeError(f"reshape: {x.data.shape} -> {shape}") from exc
    return _record(out, (x,), lambda g: (g.reshape(x.data.shape),))


def tsum(x, axis=None):
    x = _as_tensor(x)
    out = Tensor(np.sum(x.data, axis=axis))

    def vjp(g):
        if axis is None:
            return (np.full_like(x.data, float(g)),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.data.shape).copy(),)

    return _record(out, (x,), vjp)


def tmean(x, axis=None):
    x = _as_tensor(x)
    out = Tensor(np.mean(x.data, axis=axis))
    count = x.data.size if axis is None else x.data.shape[axis]

    def vjp(g):
        if axis is None:
            return (np.full_like(x.data, float(g) / count),)
        return (np.broadcast_to(np.expand_dims(g / count, axis), x.data.shape).copy(),)

    return _record(out, (x,), vjp)


def tmax(x):
    """Maximum over all elements; the subgradient routes to the first argmax."""
    x = _as_tensor(x)
    flat_idx = int(np.argmax(x.data))
    out = Tensor(x.data.reshape(-1)[flat_idx])

    def vjp(g):
        gx = np.zeros_like(x.data)
        gx.reshape(-1)[flat_idx] = float(g)
        return (gx,)

    return _record(out, (x,), vjp)


def clamp_min(x, floor):
    """Elementwise max(x, floor) for a constant floor; gradient passes where
    x >= floor and is zero below."""
    x = _as_tensor(x)
    floor = float(floor)
    out = Tensor(np.maximum(x.data, floor))
    return _record(out, (x,), lambda g: (np.where(x.data >= floor, g, 0.0),))


def div_by_scalar(x, s):
    """x / s with s a scalar tensor."""
    x, s = _as_tensor(x), _as_tensor(s)
    if s.data.size != 1:
        raise ShapeError(f"div_by_scalar: divisor must be scalar, got {s.data.shape}")
    sv = float(s.data)
    out = Tensor(x.data / sv)

    def vjp(g):
        gs = -(g * x.data).sum() / (sv * sv)
        return g / sv, np.full_like(s.data, gs)

    return _record(out, (x, s), vjp)


def segment_mean(x, segment_ids, num_segments):
    """Per-segment mean of rows of x (n, c); empty segments yield zero rows."""
    x = _as_tensor(x)
    ids = np.asarray(segment_ids, dtype=np.int64)
    if ids.shape != (x.data.shape[0],):
        raise ShapeError(f"segment_mean: ids {ids.shape} vs rows {x.data.shape[0]}")
    if ids.size and (ids.min() < 0 or ids.max() >= num_segments):
        raise RangeError(f"segment id out of range [0, {num_segments})")
    sums = np.zeros((num_segments, x.data.shape[1]))
    np.add.at(sums, ids, x.data)
    counts = np.bincount(ids, minlength=num_segments).astype(np.float64)
    denom = np.maximum(counts, 1.0)
    out = Tensor(sums / denom[:, None])

    def vjp(g):
        return ((g / denom[:, None])[ids],)

    return _record(out, (x,), vjp)


def gather_rows(x, indices):
    """Rows of x (n, c) selected by integer indices (m,)."""
    x = _as_tensor(x)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= x.data.shape[0]):
        raise RangeError(f"gather index out of range [0, {x.data.shape[0]})")
    out = Tensor(x.data[idx])

    def vjp(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return (gx,)

    return _record(out, (x,), vjp)


def rfft_magnitude(x):
    """Magnitude spectrum |DFT(x)| of a real sequence.

    The input is zero-padded to the next power of two; the output has the
    padded length (full spectrum, unnormalized transform), so bin 0 equals
    sum(x) and Parseval reads sum|F|^2 = P * sum(x^2) with P the padded
    length. At bins where |F| = 0 the modulus is not differentiable and the
    subgradient 0 is used.
    """
    x = _as_tensor(x)
    if x.data.ndim != 1:
        raise ShapeError(f"rfft_magnitude: expected 1D sequence, got {x.data.shape}")
    spec = padded_fft(x.data)
    mag = np.abs(spec)
    out = Tensor(mag)
    n = x.data.shape[0]

    def vjp(g):
        safe = np.where(mag > 0.0, mag, 1.0)
        w = g * np.conj(spec) / safe
        w[mag == 0.0] = 0.0
        grad_full = np.real(padded_fft(w))
        return (grad_full[:n].copy(),)

    return _record(out, (x,), vjp)


# ---------------------------------------------------------------------------
# gradient checking


class GradCheckReport:
    def __init__(self, max_rel_error, checked, failed, tol):
        self.max_rel_error = max_rel_error
        self.checked = checked
        self.failed = failed  # list of (input index, flat element index, rel error)
        self.tol = tol

    @property
    def passed(self):
        return not self.failed

    def __repr__(self):
        return (
            f"GradCheckReport(max_rel_error={self.max_rel_error:.3e}, "
            f"checked={self.checked}, failed={len(self.failed)}, tol={self.tol})"
        )


def grad_check(f, inputs, h=1e-5, tol=1e-4, max_checks_per_input=None, seed=0):
    """Compare reverse-mode gradients of scalar f(*inputs) to central differences.

    Elements are checked exhaustively, or on a seeded random sample of
    max_checks_per_input elements per input when that is set and smaller.
    The relative error denominator is max(|ad|, |fd|, 1e-6).
    """
    inputs = [t if isinstance(t, Tensor) else Tensor(t, requires_grad=True) for t in inputs]
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    with Tape() as tape:
        loss = f(*inputs)
        if loss.data.size != 1:
            raise ContractError("grad_check requires a scalar-valued function")
        tape.backward(loss)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    rng = np.random.default_rng(seed)
    max_err = 0.0
    checked = 0
    failed = []
    for i, t in enumerate(inputs):
        flat = t.data.reshape(-1)
        n = flat.size
        if max_checks_per_input is not None and n > max_checks_per_input:
            picks = rng.choice(n, size=max_checks_per_input, replace=False)
        else:
            picks = np.arange(n)
        for j in picks:
            orig = flat[j]
            flat[j] = orig + h
            with no_grad():
                fp = float(f(*inputs).data)
            flat[j] = orig - h
            with no_grad():
                fm = float(f(*inputs).data)
            flat[j] = orig
            fd = (fp - fm) / (2 * h)
            ad = analytic[i].reshape(-1)[j]
            err = abs(ad - fd) / max(abs(ad), abs(fd), 1e-6)
            checked += 1
            if err > tol:
                failed.append((i, int(j), err))
            max_err = max(max_err, err)
    return GradCheckReport(max_err, checked, failed, tol)
