"""Training objective and evaluation metrics.

The objective is mean binary cross-entropy plus a weighted frequency-domain
term that compares the spectrum of the predicted rain probabilities against
the spectrum of the binary labels along the serialized event order:

    L_fft = (1/P) * sum_i (|F(p - y)|_i / max(max_j |F(p - y)|_j, eps) + eps') ** 2

with P the zero-padded FFT length. Since the transform is linear, the
spectrum difference is computed as the spectrum of (p - y). The normalizing
maximum is differentiated through its argmax bin (subgradient), which keeps
the whole loss consistent with finite differences; the eps floor contributes
no gradient when it is active.

Evaluation counts per-event agreement: SR = PB/TB (background kept),
NR = PR/TR (rain removed), DA = (SR + NR) / 2.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, UndefinedMetricError
from .fft import fft_pow2


@dataclass(slots=True)
class LossConfig:
    fft_weight: float = 0.1   # lambda
    eps: float = 1e-8         # floor for the normalizing maximum
    eps_prime: float = 1e-3   # additive stabilizer inside the square

    def __post_init__(self):
        if self.fft_weight < 0:
            raise ValueError("fft_weight must be >= 0")
        if self.eps <= 0 or self.eps_prime <= 0:
            raise ValueError("eps and eps_prime must be > 0")


@dataclass(slots=True)
class EvalReport:
    PB: int  # predicted background among true background
    TB: int  # true background
    PR: int  # predicted rain among true rain
    TR: int  # true rain
    SR: float | None
    NR: float | None
    DA: float | None

    def to_dict(self):
        return {"PB": self.PB, "TB": self.TB, "PR": self.PR, "TR": self.TR,
                "SR": self.SR, "NR": self.NR, "DA": self.DA}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def ce_loss(probs, labels):
    """Mean negative log-probability of the true class.

    probs is (N, 2) with rows summing to 1; labels is (N,) in {0, 1}. True-class
    probabilities are clamped below at 1e-12 before the log.
    """
    probs = probs if isinstance(probs, Tensor) else Tensor(probs)
    labels = np.asarray(labels, dtype=np.int64)
    n, c = probs.data.shape
    if labels.shape != (n,):
        raise ContractError(f"labels shape {labels.shape} vs probs {probs.data.shape}")
    onehot = np.zeros((n, c))
    onehot[np.arange(n), labels] = 1.0
    picked = ad.tsum(ad.mul(probs, Tensor(onehot)), axis=1)
    return ad.scale(ad.tmean(ad.log(picked, floor=1e-12)), -1.0)


def fft_loss(p, y, cfg: LossConfig):
    """Frequency alignment of a probability sequence and its label sequence."""
    p = p if isinstance(p, Tensor) else Tensor(p)
    y = y if isinstance(y, Tensor) else Tensor(np.asarray(y, dtype=np.float64))
    if p.data.ndim != 1 or p.data.shape != y.data.shape:
        raise ContractError(f"fft_loss: shapes {p.data.shape} and {y.data.shape}")
    if p.data.shape[0] == 0:
        raise ContractError("fft_loss: empty sequence")
    diff = ad.sub(p, y)
    mag = ad.rfft_magnitude(diff)
    denom = ad.clamp_min(ad.tmax(mag), cfg.eps)
    shifted = ad.add_scalar(ad.div_by_scalar(mag, denom), cfg.eps_prime)
    return ad.tmean(ad.mul(shifted, shifted))


def fft_loss_windowed(p, y, window_ids, cfg: LossConfig):
    """Mean of per-window fft_loss so window edges add no spectral artifacts."""
    window_ids = np.asarray(window_ids)
    parts = []
    for w in np.unique(window_ids):
        sel = np.flatnonzero(window_ids == w)
        pw = ad.gather_rows(_as_col(p), sel)
        yw = np.asarray(y, dtype=np.float64)[sel]
        parts.append(fft_loss(_as_flat(pw), yw, cfg))
    acc = parts[0]
    for term in parts[1:]:
        acc = ad.add(acc, term)
    return ad.scale(acc, 1.0 / len(parts))


def _as_col(p):
    p = p if isinstance(p, Tensor) else Tensor(p)
    if p.data.ndim == 1:
        return ad.reshape(p, (-1, 1))
    return p


def _as_flat(p):
    if p.data.ndim == 2 and p.data.shape[1] == 1:
        return ad.reshape(p, (-1,))
    return p


def total_loss(probs, labels, cfg: LossConfig, use_fft=True, window_ids=None):
    """ce + lambda * fft on the rain-probability column.

    probs and labels must be ordered by the serialized event order. With
    window_ids, the fft term is averaged per temporal window. The fft term is
    skipped entirely when use_fft is False or lambda is 0.
    """
    probs = probs if isinstance(probs, Tensor) else Tensor(probs)
    labels = np.asarray(labels, dtype=np.int64)
    ce = ce_loss(probs, labels)
    if not use_fft or cfg.fft_weight == 0.0:
        return ce
    rain_col = ad.tensor_slice(probs, 1, 2, axis=1)
    rain = _as_flat(rain_col)
    if window_ids is None:
        reg = fft_loss(rain, labels.astype(np.float64), cfg)
    else:
        reg = fft_loss_windowed(rain, labels.astype(np.float64), window_ids, cfg)
    return ad.add(ce, ad.scale(reg, cfg.fft_weight))


def evaluate(predictions, labels):
    """Confusion counts and SR/NR/DA ratios for binary predictions."""
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.shape != labels.shape:
        raise ContractError(
            f"predictions {predictions.shape} and labels {labels.shape} differ"
        )
    tb = int((labels == 0).sum())
    tr = int((labels == 1).sum())
    pb = int(((predictions == 0) & (labels == 0)).sum())
    pr = int(((predictions == 1) & (labels == 1)).sum())
    sr = pb / tb if tb > 0 else None
    nr = pr / tr if tr > 0 else None
    da = (sr + nr) / 2 if (sr is not None and nr is not None) else None
    report = EvalReport(PB=pb, TB=tb, PR=pr, TR=tr, SR=sr, NR=nr, DA=da)
    if tb == 0 or tr == 0:
        raise UndefinedMetricError(
            f"metrics undefined: TB={tb}, TR={tr}", report=report
        )
    return report


def merge_reports(reports):
    """Pool confusion counts across files, then recompute the ratios."""
    pb = sum(r.PB for r in reports)
    tb = sum(r.TB for r in reports)
    pr = sum(r.PR for r in reports)
    tr = sum(r.TR for r in reports)
    sr = pb / tb if tb > 0 else None
    nr = pr / tr if tr > 0 else None
    da = (sr + nr) / 2 if (sr is not None and nr is not None) else None
    return EvalReport(PB=pb, TB=tb, PR=pr, TR=tr, SR=sr, NR=nr, DA=da)


@dataclass(slots=True)
class LabelSpectrum:
    bin_freqs: np.ndarray   # normalized bin centers in [0, 0.5]
    bin_power: np.ndarray   # summed |F|^2 per bin (DC included in bin 0)
    peak_frequency: float   # argmax of raw non-DC half-spectrum power, k/P
    run_lengths: dict       # {length of a consecutive 1-run: count}
    length: int
    fft_length: int         # power-of-two prefix actually transformed


def run_length_histogram(labels):
    labels = np.asarray(labels, dtype=np.int64)
    hist = {}
    run = 0
    for v in labels:
        if v == 1:
            run += 1
        elif run:
            hist[run] = hist.get(run, 0) + 1
            run = 0
    if run:
        hist[run] = hist.get(run, 0) + 1
    return hist


def label_spectrum(labels, bins=64):
    """Binned power spectrum, peak frequency and run histogram of a label sequence.

    The sequence is truncated to the largest power of two for the transform
    (zero-padding would wrap a mostly-constant label sequence into a
    rectangular pulse whose sinc lobe swamps the low-frequency bins). The run
    histogram uses the full sequence.
    """
    labels = np.asarray(labels, dtype=np.float64)
    if labels.ndim != 1 or labels.shape[0] < 2:
        raise ContractError("label_spectrum needs a 1D sequence of length >= 2")
    padded = 1 << (labels.shape[0].bit_length() - 1)
    power = np.abs(fft_pow2(labels[:padded])) ** 2
    half = power[: padded // 2 + 1]
    freqs = np.arange(half.shape[0]) / padded

    edges = np.linspace(0.0, 0.5, bins + 1)
    idx = np.clip(np.searchsorted(edges, freqs, side="right") - 1, 0, bins - 1)
    bin_power = np.zeros(bins)
    np.add.at(bin_power, idx, half)
    centers = 0.5 * (edges[:-1] + edges[1:])

    nondc = half[1:]
    peak = float((np.argmax(nondc) + 1) / padded) if nondc.size and nondc.max() > 0 else 0.0
    return LabelSpectrum(
        bin_freqs=centers,
        bin_power=bin_power,
        peak_frequency=peak,
        run_lengths=run_length_histogram(labels.astype(np.int64)),
        length=int(labels.shape[0]),
        fft_length=padded,
    )
