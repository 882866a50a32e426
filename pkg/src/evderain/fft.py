"""Iterative radix-2 FFT used by the frequency loss and the spectrum tools.

Unnormalized forward transform: F_k = sum_n x_n * exp(-2*pi*i*k*n/L), so
Parseval reads sum|F|^2 = L * sum|x|^2. Inputs are zero-padded to the next
power of two by the callers; fft_pow2 itself requires a power-of-two length.
"""

from __future__ import annotations

import numpy as np


def next_pow2(n: int) -> int:
    if n < 1:
        raise ValueError(f"length must be >= 1, got {n}")
    return 1 << (n - 1).bit_length()


def _bit_reverse_indices(n: int) -> np.ndarray:
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    bits = n.bit_length() - 1
    for _ in range(bits):
        rev = (rev << 1) | (idx & 1)
        idx >>= 1
    return rev


def fft_pow2(x: np.ndarray) -> np.ndarray:
    """Forward DFT of a power-of-two-length sequence (real or complex input)."""
    x = np.asarray(x)
    n = x.shape[0]
    if n & (n - 1):
        raise ValueError(f"fft_pow2 needs a power-of-two length, got {n}")
    out = x.astype(np.complex128)[_bit_reverse_indices(n)]
    half = 1
    while half < n:
        m = 2 * half
        tw = np.exp(-1j * np.pi * np.arange(half) / half)
        blocks = out.reshape(-1, m)
        even = blocks[:, :half].copy()
        odd = blocks[:, half:] * tw
        blocks[:, :half] = even + odd
        blocks[:, half:] = even - odd
        half = m
    return out


def padded_fft(x: np.ndarray) -> np.ndarray:
    """Zero-pad to the next power of two, then forward DFT."""
    x = np.asarray(x)
    n = next_pow2(x.shape[0])
    if n != x.shape[0]:
        pad = np.zeros(n, dtype=x.dtype)
        pad[: x.shape[0]] = x
        x = pad
    return fft_pow2(x)
