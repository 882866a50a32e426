import numpy as np
import pytest

from evderain.events import Event
from evderain.raingen import (
    LabeledEvents,
    RainParams,
    SceneParams,
    generate,
    knn_label,
)


class TestGenerate:
    def test_zero_intensity_no_rain(self):
        events = generate(SceneParams(), RainParams(intensity=0.0, seed=3))
        assert len(events) > 0
        assert all(e.label == 0 for e in events)

    def test_fixed_seed_identical(self):
        a = generate(SceneParams(), RainParams(intensity=80, seed=11))
        b = generate(SceneParams(), RainParams(intensity=80, seed=11))
        assert a == b

    def test_different_seeds_differ(self):
        a = generate(SceneParams(), RainParams(intensity=80, seed=1))
        b = generate(SceneParams(), RainParams(intensity=80, seed=2))
        assert a != b

    def test_sorted_and_in_bounds(self):
        scene = SceneParams(sensor_width=32, sensor_height=24, duration_s=0.2)
        events = generate(scene, RainParams(intensity=120, seed=5))
        ts = [e.t for e in events]
        assert ts == sorted(ts)
        assert all(0 <= e.x < 32 and 0 <= e.y < 24 for e in events)
        assert all(0 <= e.t < 200_000 for e in events)
        assert all(e.p in (-1, 1) and e.label in (0, 1) for e in events)

    def test_rain_count_monotone_in_intensity(self):
        scene = SceneParams()
        counts = []
        for intensity in (5, 20, 50, 120, 200):
            events = generate(scene, RainParams(intensity=intensity, seed=9))
            counts.append(sum(1 for e in events if e.label == 1))
        assert counts == sorted(counts)

    def test_label_conservation(self):
        events = generate(SceneParams(), RainParams(intensity=60, seed=2))
        assert all(e.label in (0, 1) for e in events)

    def test_calibration_near_40_percent_at_50mm(self):
        fracs = []
        for seed in range(6):
            events = generate(SceneParams(), RainParams(intensity=50, seed=seed))
            fracs.append(sum(1 for e in events if e.label == 1) / len(events))
        assert 0.3 <= np.mean(fracs) <= 0.5

    def test_heavier_rain_longer_runs(self):
        # serialized-order rain runs are stochastically longer at 200 than 5 mm/hr
        from evderain.curves import serialize
        from evderain.events import build_cloud
        from evderain.loss_metrics import run_length_histogram

        def median_run(intensity, seed):
            events = generate(SceneParams(), RainParams(intensity=intensity, seed=seed))
            cloud = build_cloud(events, 0.1, 5, sensor_width=64, sensor_height=48)
            order = serialize(cloud, "zorder", 6).order
            labels = np.array([e.label for w in cloud.windows for e in w.events])[order]
            hist = run_length_histogram(labels)
            runs = [k for k, c in hist.items() for _ in range(c)]
            return np.median(runs) if runs else 0.0

        lo = np.median([median_run(5, s) for s in range(20)])
        hi = np.median([median_run(200, s) for s in range(20)])
        assert hi > lo

    def test_moving_bar_scene(self):
        scene = SceneParams(background="moving-bar", sensor_width=32,
                            sensor_height=24, duration_s=0.1)
        events = generate(scene, RainParams(intensity=0, seed=0))
        assert len(events) > 0
        assert all(e.label == 0 for e in events)

    def test_loaded_file_scene(self, tmp_path):
        from evderain.events import save_events

        src = [Event(1, 1, 10, 1, None), Event(2, 2, 20, -1, None)]
        path = tmp_path / "bg.csv"
        save_events(path, src, "csv")
        scene = SceneParams(background="loaded-file", background_file=str(path),
                            sensor_width=8, sensor_height=8, duration_s=0.01)
        events = generate(scene, RainParams(intensity=0, seed=0))
        assert [(e.x, e.y, e.t) for e in events] == [(1, 1, 10), (2, 2, 20)]
        assert all(e.label == 0 for e in events)


class TestKnnLabel:
    def test_identical_streams_all_background(self):
        events = [Event(i, i, i * 100, 1, None) for i in range(20)]
        labeled = knn_label(events, events, k=1, radius=(3, 2000))
        assert all(e.label == 0 for e in labeled)

    def test_far_event_is_rain(self):
        clean = [Event(0, 0, 0, 1, None)]
        rainy = [Event(500, 0, 0, 1, None)]
        labeled = knn_label(rainy, clean, k=1, radius=(5, 2000))
        assert labeled[0].label == 1

    def test_planted_streaks_recovered(self):
        rng = np.random.default_rng(1)
        clean = []
        for t in range(0, 100_000, 2_000):
            clean.append(Event(10 + (t // 2000) % 5, 10, t, 1, None))
        clean.sort(key=lambda e: e.t)
        # inject streak events far from the clean grid
        injected = [Event(40, 40 + i, 5_000 + i * 300, 1, None) for i in range(15)]
        rainy = sorted(clean + injected, key=lambda e: e.t)
        labeled = knn_label(rainy, clean, k=1, radius=(4, 3_000))
        for orig, lab in zip(rainy, labeled):
            expected = 0 if orig in clean else 1
            assert lab.label == expected

    def test_empty_clean_all_rain_with_warning(self):
        rainy = [Event(1, 1, 0, 1, None)]
        labeled = knn_label(rainy, [], k=2, radius=(3, 2000))
        assert isinstance(labeled, LabeledEvents)
        assert labeled.warning is not None
        assert labeled[0].label == 1

    def test_time_translation_symmetry(self):
        rng = np.random.default_rng(2)
        clean = sorted(
            [Event(int(rng.integers(0, 20)), int(rng.integers(0, 20)),
                   int(t), 1, None) for t in np.sort(rng.integers(0, 50_000, 30))],
            key=lambda e: e.t,
        )
        rainy = sorted(
            [Event(int(rng.integers(0, 20)), int(rng.integers(0, 20)),
                   int(t), 1, None) for t in np.sort(rng.integers(0, 50_000, 25))],
            key=lambda e: e.t,
        )
        base = [e.label for e in knn_label(rainy, clean, k=2, radius=(3, 2000))]
        off = 123_456
        shift = lambda evs: [Event(e.x, e.y, e.t + off, e.p, e.label) for e in evs]
        shifted = [e.label for e in knn_label(shift(rainy), shift(clean),
                                              k=2, radius=(3, 2000))]
        assert base == shifted

    def test_k_threshold(self):
        clean = [Event(5, 5, 1000, 1, None), Event(5, 6, 1500, 1, None)]
        rainy = [Event(5, 5, 1200, 1, None)]
        assert knn_label(rainy, clean, k=2, radius=(2, 1000))[0].label == 0
        assert knn_label(rainy, clean, k=3, radius=(2, 1000))[0].label == 1
