import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evderain.errors import EmptyCloudError, ParseError, ValidationError
from evderain.events import (
    Event,
    build_cloud,
    flatten,
    flatten_arrays,
    load_events,
    probe_sensor_size,
    save_events,
)


def write_csv(path, rows, header="x,y,t,p,label"):
    path.write_text(header + "\n" + "\n".join(rows) + ("\n" if rows else ""))


class TestLoadEvents:
    def test_csv_two_rows(self, tmp_path):
        f = tmp_path / "e.csv"
        write_csv(f, ["0,0,0,1,0", "1,1,10,-1,1"])
        events = load_events(f, "csv")
        assert events == [Event(0, 0, 0, 1, 0), Event(1, 1, 10, -1, 1)]

    def test_empty_file(self, tmp_path):
        f = tmp_path / "e.csv"
        write_csv(f, [])
        assert load_events(f, "csv") == []

    def test_unsorted_timestamps_rejected(self, tmp_path):
        f = tmp_path / "e.csv"
        write_csv(f, ["0,0,100,1,0", "0,0,50,1,0"])
        with pytest.raises(ValidationError, match="not sorted"):
            load_events(f, "csv")

    def test_malformed_row_names_line(self, tmp_path):
        f = tmp_path / "e.csv"
        write_csv(f, ["0,0,0,1,0", "0,zap,1,1,0"])
        with pytest.raises(ParseError, match="line 3"):
            load_events(f, "csv")

    def test_label_column_optional(self, tmp_path):
        f = tmp_path / "e.csv"
        f.write_text("x,y,t,p\n3,4,7,1\n")
        events = load_events(f, "csv")
        assert events == [Event(3, 4, 7, 1, None)]

    def test_bad_polarity(self, tmp_path):
        f = tmp_path / "e.csv"
        write_csv(f, ["0,0,0,2,0"])
        with pytest.raises(ParseError, match="polarity"):
            load_events(f, "csv")

    def test_binary_round_trip(self, tmp_path):
        events = [Event(0, 1, 5, 1, 0), Event(7, 2, 9, -1, None), Event(3, 3, 9, 1, 1)]
        f = tmp_path / "e.bin"
        save_events(f, events, "packed-binary", sensor_width=16, sensor_height=8)
        assert load_events(f, "packed-binary") == events
        assert probe_sensor_size(f, "packed-binary") == (16, 8)

    def test_binary_record_size(self, tmp_path):
        f = tmp_path / "e.bin"
        save_events(f, [Event(1, 2, 3, 1, 1)], "packed-binary", 4, 4)
        data = f.read_bytes()
        assert len(data) == 16 + 14
        assert data[:4] == b"EVD1"

    def test_binary_truncated(self, tmp_path):
        f = tmp_path / "e.bin"
        save_events(f, [Event(1, 2, 3, 1, 1)], "packed-binary", 4, 4)
        f.write_bytes(f.read_bytes()[:-3])
        with pytest.raises(ParseError):
            load_events(f, "packed-binary")

    def test_csv_round_trip(self, tmp_path):
        events = [Event(0, 1, 5, 1, 0), Event(7, 2, 9, -1, None)]
        f = tmp_path / "e.csv"
        save_events(f, events, "csv")
        assert load_events(f, "csv") == events


def make_events(ts, x=0, y=0, p=1, label=0):
    return [Event(x, y, t, p, label) for t in ts]


class TestBuildCloud:
    def test_five_windows_of_100ms(self):
        # one event every 20 ms over [0, 0.5 s)
        events = make_events(range(0, 500_000, 20_000))
        cloud = build_cloud(events, 0.1, 5)
        assert len(cloud.windows) == 5
        assert [len(w.events) for w in cloud.windows] == [5, 5, 5, 5, 5]
        assert cloud.dropped_count == 0
        for w in cloud.windows:
            assert w.te - w.t0 == 100_000

    def test_z_boundaries(self):
        events = make_events([0, 100_000])  # t0 of window 0 and te of window 1 (closed)
        cloud = build_cloud(events, 0.05, 2)
        assert cloud.windows[0].z[0] == 0.0
        assert cloud.windows[1].z[-1] == 1.0

    def test_z_quarter(self):
        events = make_events([0, 25_000])
        cloud = build_cloud(events, 0.1, 1)
        assert cloud.windows[0].z[1] == pytest.approx(0.25, abs=0)

    def test_boundary_goes_to_later_window(self):
        events = make_events([0, 100_000, 100_001])
        cloud = build_cloud(events, 0.1, 2)
        assert [len(w.events) for w in cloud.windows] == [1, 2]

    def test_events_beyond_last_window_dropped(self):
        events = make_events([0, 50_000, 250_000])
        cloud = build_cloud(events, 0.1, 2)
        assert cloud.num_events == 2
        assert cloud.dropped_count == 1

    def test_empty_windows_allowed(self):
        events = make_events([0, 10])
        cloud = build_cloud(events, 0.1, 5)
        assert [len(w.events) for w in cloud.windows] == [2, 0, 0, 0, 0]

    def test_zero_events_rejected(self):
        with pytest.raises(EmptyCloudError):
            build_cloud([], 0.1, 5)

    def test_sensor_size_inferred(self):
        cloud = build_cloud([Event(10, 20, 0, 1, 0)], 0.1, 1)
        assert (cloud.sensor_width, cloud.sensor_height) == (11, 21)


class TestFlatten:
    def test_concatenation_order(self):
        events = make_events([0, 1, 2, 100_000, 100_001])
        cloud = build_cloud(events, 0.1, 2)
        flat = flatten(cloud)
        assert [row[3] for row in flat] == [0, 0, 0, 1, 1]

    def test_single_window_identity(self):
        events = [Event(i, i, i * 10, 1, 0) for i in range(4)]
        cloud = build_cloud(events, 0.1, 1)
        flat = flatten(cloud)
        assert [(r[0], r[1], r[4]) for r in flat] == [(e.x, e.y, e.p) for e in events]
        assert all(r[3] == 0 for r in flat)

    def test_round_trip_preserves_fields(self):
        rng = np.random.default_rng(7)
        ts = np.sort(rng.integers(0, 300_000, size=64))
        events = [
            Event(int(rng.integers(0, 32)), int(rng.integers(0, 24)), int(t),
                  int(rng.choice([-1, 1])), int(rng.integers(0, 2)))
            for t in ts
        ]
        cloud = build_cloud(events, 0.1, 3)
        flat = flatten(cloud)
        kept = [e for e in events if e.t < events[0].t + 300_000]
        # reconstruct (x, y, t, p) from (x, y, z, T_n, p): t = t0 + z * T
        recon = []
        for x, y, z, win, p, label in flat:
            t0 = cloud.windows[win].t0
            recon.append((x, y, int(round(t0 + z * 100_000)), p, label))
        expected = [(e.x, e.y, e.t, e.p, e.label) for e in kept][: len(recon)]
        assert sorted(recon) == sorted(expected)


class TestInvariants:
    @settings(max_examples=50, deadline=None)
    @given(
        ts=st.lists(st.integers(0, 1_000_000), min_size=1, max_size=60),
        duration_ms=st.integers(1, 400),
        num_windows=st.integers(1, 6),
    )
    def test_partition_property(self, ts, duration_ms, num_windows):
        events = make_events(sorted(ts))
        cloud = build_cloud(events, duration_ms / 1000.0, num_windows)
        assert cloud.num_events + cloud.dropped_count == len(events)

    @settings(max_examples=50, deadline=None)
    @given(
        ts=st.lists(st.integers(0, 500_000), min_size=1, max_size=60),
        num_windows=st.integers(1, 5),
    )
    def test_z_range_and_monotone(self, ts, num_windows):
        events = make_events(sorted(ts))
        cloud = build_cloud(events, 0.05, num_windows)
        for w in cloud.windows:
            if len(w.z):
                assert w.z.min() >= 0.0 and w.z.max() <= 1.0
                assert (np.diff(w.z) >= 0).all()

    def test_determinism(self):
        events = make_events([0, 3, 3, 10, 100_000])
        a = build_cloud(events, 0.1, 2)
        b = build_cloud(events, 0.1, 2)
        assert flatten(a) == flatten(b)

    def test_flatten_arrays_matches_flatten(self):
        events = [Event(1, 2, 0, 1, 0), Event(3, 4, 60_000, -1, 1)]
        cloud = build_cloud(events, 0.05, 2)
        arrays = flatten_arrays(cloud)
        flat = flatten(cloud)
        assert arrays["x"].tolist() == [r[0] for r in flat]
        assert arrays["window"].tolist() == [r[3] for r in flat]
        assert arrays["label"].tolist() == [r[5] for r in flat]
