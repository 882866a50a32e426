"""Space-filling-curve serialization of 4D event clouds.

Events are ordered window by window; inside a window they are sorted by the
key of their quantized (x, y, z) cell on a z-order (Morton) or Hilbert curve.
The two "transposed" variants swap the x and y axes before encoding, giving
four scanning modes in total. Sorting is stable, so events sharing a cell
keep their input order.

Morton codes interleave coordinate bits directly. Hilbert keys use the
transpose-based construction (Skilling, "Programming the Hilbert curve"):
coordinates are folded into Gray-code form, then the per-axis words are
bit-interleaved into a single integer key.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import RangeError
from .events import flatten_arrays

SCAN_MODES = ("zorder", "zorder-transposed", "hilbert", "hilbert-transposed")

MAX_BITS = 21  # 3 * 21 = 63 key bits, fits a signed 64-bit integer

_U = np.uint64


@dataclass(frozen=True, slots=True)
class SerializedCloud:
    order: np.ndarray  # permutation of flattened event indices
    mode: str
    grid_bits: int

    def inverse(self) -> np.ndarray:
        inv = np.empty_like(self.order)
        inv[self.order] = np.arange(len(self.order))
        return inv


def _as_u64(a, bits):
    arr = np.asarray(a)
    if arr.size and (arr.min() < 0 or arr.max() >= (1 << bits)):
        raise RangeError(
            f"coordinate out of range for {bits}-bit grid: "
            f"min={arr.min()}, max={arr.max()}"
        )
    return arr.astype(np.uint64)


def _check_bits(bits):
    if not 1 <= bits <= MAX_BITS:
        raise RangeError(f"bits must be in [1, {MAX_BITS}], got {bits}")


def _spread3(v):
    # insert two zero bits between the low 21 bits of each element
    v = v & _U(0x1FFFFF)
    v = (v | (v << _U(32))) & _U(0x1F00000000FFFF)
    v = (v | (v << _U(16))) & _U(0x1F0000FF0000FF)
    v = (v | (v << _U(8))) & _U(0x100F00F00F00F00F)
    v = (v | (v << _U(4))) & _U(0x10C30C30C30C30C3)
    v = (v | (v << _U(2))) & _U(0x1249249249249249)
    return v


def _compact3(v):
    v = v & _U(0x1249249249249249)
    v = (v | (v >> _U(2))) & _U(0x10C30C30C30C30C3)
    v = (v | (v >> _U(4))) & _U(0x100F00F00F00F00F)
    v = (v | (v >> _U(8))) & _U(0x1F0000FF0000FF)
    v = (v | (v >> _U(16))) & _U(0x1F00000000FFFF)
    v = (v | (v >> _U(32))) & _U(0x1FFFFF)
    return v


def _spread2(v):
    v = v & _U(0xFFFFFFFF)
    v = (v | (v << _U(16))) & _U(0x0000FFFF0000FFFF)
    v = (v | (v << _U(8))) & _U(0x00FF00FF00FF00FF)
    v = (v | (v << _U(4))) & _U(0x0F0F0F0F0F0F0F0F)
    v = (v | (v << _U(2))) & _U(0x3333333333333333)
    v = (v | (v << _U(1))) & _U(0x5555555555555555)
    return v


def _scalar_in(args):
    return all(np.isscalar(a) or np.asarray(a).ndim == 0 for a in args)


def _ret(keys, scalar):
    return int(keys[()]) if scalar else keys


def morton_encode(x, y, z, bits):
    """Interleave the low `bits` bits of x, y, z: x on bit 3i, y on 3i+1, z on 3i+2."""
    _check_bits(bits)
    scalar = _scalar_in((x, y, z))
    xs, ys, zs = _as_u64(x, bits), _as_u64(y, bits), _as_u64(z, bits)
    key = _spread3(xs) | (_spread3(ys) << _U(1)) | (_spread3(zs) << _U(2))
    return _ret(key, scalar)


def morton_decode(key, bits):
    """Inverse of morton_encode."""
    _check_bits(bits)
    scalar = _scalar_in((key,))
    k = np.asarray(key).astype(np.uint64)
    x = _compact3(k)
    y = _compact3(k >> _U(1))
    z = _compact3(k >> _U(2))
    if scalar:
        return int(x[()]), int(y[()]), int(z[()])
    return x, y, z


def morton_encode_2d(x, y, bits):
    """2D variant: x bits on even positions, y bits on odd positions."""
    _check_bits(bits)
    scalar = _scalar_in((x, y))
    xs, ys = _as_u64(x, bits), _as_u64(y, bits)
    key = _spread2(xs) | (_spread2(ys) << _U(1))
    return _ret(key, scalar)


def _axes_to_transpose(x, y, z, bits):
    X = [x.copy(), y.copy(), z.copy()]
    q = 1 << (bits - 1)
    while q > 1:
        p = _U(q - 1)
        qq = _U(q)
        for i in range(3):
            up = (X[i] & qq) != 0
            t = np.where(up, _U(0), (X[0] ^ X[i]) & p)
            X[0] = np.where(up, X[0] ^ p, X[0]) ^ t
            X[i] = X[i] ^ t
        q >>= 1
    for i in range(1, 3):
        X[i] = X[i] ^ X[i - 1]
    t = np.zeros_like(X[0])
    q = 1 << (bits - 1)
    while q > 1:
        t = np.where((X[2] & _U(q)) != 0, t ^ _U(q - 1), t)
        q >>= 1
    return [w ^ t for w in X]


def _transpose_to_axes(X, bits):
    n = 1 << bits
    t = X[2] >> _U(1)
    X[2] = X[2] ^ X[1]
    X[1] = X[1] ^ X[0]
    X[0] = X[0] ^ t
    q = 2
    while q != n:
        p = _U(q - 1)
        qq = _U(q)
        for i in (2, 1, 0):
            up = (X[i] & qq) != 0
            t = np.where(up, _U(0), (X[0] ^ X[i]) & p)
            X[0] = np.where(up, X[0] ^ p, X[0]) ^ t
            X[i] = X[i] ^ t
        q <<= 1
    return X


def hilbert_encode(x, y, z, bits):
    """Index along a 3D Hilbert curve over the 2^bits cube. Inverse: hilbert_decode."""
    _check_bits(bits)
    scalar = _scalar_in((x, y, z))
    xs = np.atleast_1d(_as_u64(x, bits))
    ys = np.atleast_1d(_as_u64(y, bits))
    zs = np.atleast_1d(_as_u64(z, bits))
    X = _axes_to_transpose(xs, ys, zs, bits)
    # bit j of axis i lands on key bit 3j + (2 - i): axis 0 is most significant
    key = (_spread3(X[0]) << _U(2)) | (_spread3(X[1]) << _U(1)) | _spread3(X[2])
    return _ret(key if not scalar else key.reshape(()), scalar)


def hilbert_decode(key, bits):
    """Inverse of hilbert_encode."""
    _check_bits(bits)
    scalar = _scalar_in((key,))
    k = np.atleast_1d(np.asarray(key)).astype(np.uint64)
    X = [_compact3(k >> _U(2)), _compact3(k >> _U(1)), _compact3(k)]
    x, y, z = _transpose_to_axes(X, bits)
    if scalar:
        return int(x[0]), int(y[0]), int(z[0])
    return x, y, z


def quantize_axis(values, extent, bits):
    """Map integers in [0, extent) onto the 2^bits grid, preserving order."""
    side = 1 << bits
    v = np.asarray(values, dtype=np.int64)
    q = (v * side) // max(int(extent), 1)
    return np.clip(q, 0, side - 1)


def quantize_unit(values, bits):
    """Map floats in [0, 1] onto the 2^bits grid by rounding to 2^bits - 1 levels."""
    side = 1 << bits
    q = np.rint(np.asarray(values, dtype=np.float64) * (side - 1)).astype(np.int64)
    return np.clip(q, 0, side - 1)


def curve_keys(qx, qy, qz, mode, bits):
    """Curve key per point for one scanning mode (transposed modes swap x/y)."""
    if mode not in SCAN_MODES:
        raise ValueError(f"unknown scan mode {mode!r}, expected one of {SCAN_MODES}")
    if mode.endswith("-transposed"):
        qx, qy = qy, qx
    if mode.startswith("zorder"):
        return morton_encode(qx, qy, qz, bits)
    return hilbert_encode(qx, qy, qz, bits)


def serialize_arrays(qx, qy, qz, window_ids, mode, bits):
    """Stable order: ascending window index, then curve key within the window."""
    keys = curve_keys(qx, qy, qz, mode, bits)
    return np.lexsort((keys, np.asarray(window_ids)))


def serialize(cloud, mode, grid_bits=10):
    """Serialize a 4D event cloud into a 1D scan order.

    Pixel coordinates are rescaled onto the 2^grid_bits grid by sensor extent;
    normalized time is quantized to 2^grid_bits - 1 levels.
    """
    arrays = flatten_arrays(cloud)
    qx = quantize_axis(arrays["x"], cloud.sensor_width, grid_bits)
    qy = quantize_axis(arrays["y"], cloud.sensor_height, grid_bits)
    qz = quantize_unit(arrays["z"], grid_bits)
    order = serialize_arrays(qx, qy, qz, arrays["window"], mode, grid_bits)
    return SerializedCloud(order=order, mode=mode, grid_bits=grid_bits)
