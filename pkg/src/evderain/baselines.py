"""Classical event-denoising filters used as comparison points.

Simplified reconstructions of the time-surface and density-filter families;
no fidelity to any published implementation is claimed. Their role in the
harness is to show that plain support filters do not separate rain from
background structure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(slots=True)
class FilterConfig:
    ts_tau_us: float = 20_000.0     # time-surface decay
    ts_threshold: float = 0.35      # keep iff decayed 8-neighbor support exceeds this
    density_radius_px: int = 1      # half-width of the spatial box
    density_window_us: int = 10_000  # |dt| bound (symmetric, non-causal)
    density_min_support: int = 2    # neighbors needed, excluding the event itself

    def __post_init__(self):
        if self.ts_tau_us <= 0:
            raise ValueError("ts_tau_us must be > 0")
        if self.density_min_support < 1:
            raise ValueError("density_min_support must be >= 1")


_NEIGHBORS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


def ts_filter(events, cfg: FilterConfig):
    """Causal time-surface filter: one pass, per-pixel last-event timestamps.

    An event is kept (prediction 0) iff the sum of exp(-(t - t_last)/tau)
    over its 8-neighborhood exceeds the threshold; pixels that never fired
    contribute nothing.
    """
    if not len(events):
        return np.zeros(0, dtype=np.int64)
    w = max(e.x for e in events) + 2
    h = max(e.y for e in events) + 2
    last = np.full((w, h), -1.0)
    preds = np.empty(len(events), dtype=np.int64)
    for i, e in enumerate(events):
        support = 0.0
        for dx, dy in _NEIGHBORS:
            nx, ny = e.x + dx, e.y + dy
            if 0 <= nx < w and 0 <= ny < h and last[nx, ny] >= 0:
                support += np.exp(-(e.t - last[nx, ny]) / cfg.ts_tau_us)
        preds[i] = 0 if support > cfg.ts_threshold else 1
        last[e.x, e.y] = e.t
    return preds


def density_filter(events, cfg: FilterConfig):
    """Symmetric space-time box filter (non-causal by construction).

    An event is kept iff at least density_min_support other events fall in
    its |dx| <= r, |dy| <= r, |dt| <= window box.
    """
    n = len(events)
    if not n:
        return np.zeros(0, dtype=np.int64)
    ts = np.array([e.t for e in events], dtype=np.int64)
    xs = np.array([e.x for e in events], dtype=np.int64)
    ys = np.array([e.y for e in events], dtype=np.int64)
    preds = np.empty(n, dtype=np.int64)
    r = cfg.density_radius_px
    for i in range(n):
        lo = np.searchsorted(ts, ts[i] - cfg.density_window_us, side="left")
        hi = np.searchsorted(ts, ts[i] + cfg.density_window_us, side="right")
        near = (
            (np.abs(xs[lo:hi] - xs[i]) <= r)
            & (np.abs(ys[lo:hi] - ys[i]) <= r)
        )
        support = int(near.sum()) - 1  # the event itself always matches
        preds[i] = 0 if support >= cfg.density_min_support else 1
    return preds
