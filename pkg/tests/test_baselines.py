import numpy as np

from evderain.baselines import FilterConfig, density_filter, ts_filter
from evderain.events import Event


def ts_oracle(events, cfg):
    """Brute-force recomputation: last prior event per neighbor pixel."""
    preds = []
    for i, e in enumerate(events):
        support = 0.0
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                if dx == 0 and dy == 0:
                    continue
                last = None
                for other in events[:i]:
                    if other.x == e.x + dx and other.y == e.y + dy:
                        last = other.t
                if last is not None:
                    support += np.exp(-(e.t - last) / cfg.ts_tau_us)
        preds.append(0 if support > cfg.ts_threshold else 1)
    return np.array(preds)


def density_oracle(events, cfg):
    preds = []
    for i, e in enumerate(events):
        support = 0
        for j, other in enumerate(events):
            if j == i:
                continue
            if (abs(other.x - e.x) <= cfg.density_radius_px
                    and abs(other.y - e.y) <= cfg.density_radius_px
                    and abs(other.t - e.t) <= cfg.density_window_us):
                support += 1
        preds.append(0 if support >= cfg.density_min_support else 1)
    return np.array(preds)


def random_stream(n, seed, size=12, span=40_000):
    rng = np.random.default_rng(seed)
    ts = np.sort(rng.integers(0, span, size=n))
    return [
        Event(int(rng.integers(0, size)), int(rng.integers(0, size)), int(t),
              int(rng.choice([-1, 1])), None)
        for t in ts
    ]


class TestTsFilter:
    def test_isolated_event_removed(self):
        preds = ts_filter([Event(5, 5, 100, 1, None)], FilterConfig())
        assert preds.tolist() == [1]

    def test_saturated_neighborhood_keeps_later_events(self):
        events = [Event(5, 5, t, 1, None) for t in range(0, 5000, 500)]
        events += [Event(5, 6, t + 100, 1, None) for t in range(0, 5000, 500)]
        events.sort(key=lambda e: e.t)
        preds = ts_filter(events, FilterConfig())
        assert preds[-1] == 0 and preds[-2] == 0
        assert preds[0] == 1  # nothing before the first event

    def test_matches_bruteforce_oracle(self):
        cfg = FilterConfig()
        for seed in range(5):
            events = random_stream(120, seed)
            assert np.array_equal(ts_filter(events, cfg), ts_oracle(events, cfg))

    def test_causality(self):
        cfg = FilterConfig()
        events = random_stream(80, 7)
        base = ts_filter(events, cfg)
        extended = events + [Event(1, 1, events[-1].t + 10, 1, None)]
        again = ts_filter(extended, cfg)
        assert np.array_equal(base, again[:-1])

    def test_output_length_and_binary(self):
        events = random_stream(50, 3)
        preds = ts_filter(events, FilterConfig())
        assert len(preds) == 50
        assert set(np.unique(preds)).issubset({0, 1})


class TestDensityFilter:
    def test_single_event_removed(self):
        preds = density_filter([Event(3, 3, 0, 1, None)], FilterConfig())
        assert preds.tolist() == [1]

    def test_two_coincident_events_kept(self):
        cfg = FilterConfig(density_min_support=1)
        events = [Event(3, 3, 0, 1, None), Event(3, 3, 5, -1, None)]
        assert density_filter(events, cfg).tolist() == [0, 0]

    def test_matches_bruteforce_oracle(self):
        cfg = FilterConfig()
        for seed in range(5):
            events = random_stream(150, seed + 10)
            assert np.array_equal(density_filter(events, cfg),
                                  density_oracle(events, cfg))
