"""Event stream ingestion and the windowed 4D event cloud.

An event stream is a time-sorted list of camera events (x, y, t, p) with an
optional binary label (0 = background/signal, 1 = rain). Streams are split
into L fixed-duration windows; inside window n every event gets a normalized
time z = (t - t0) / (te - t0) in [0, 1], and the window index acts as a
coarse fourth coordinate. Window intervals are half-open [t0, te) except the
final window, which also keeps events landing exactly on its end timestamp.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyCloudError, ParseError, ValidationError

BINARY_MAGIC = b"EVD1"
BINARY_HEADER = struct.Struct("<4sHHQ")  # magic, width, height, count
BINARY_RECORD = struct.Struct("<HHQbb")  # x, y, t, p, label_or_-1


@dataclass(frozen=True, slots=True)
class Event:
    x: int
    y: int
    t: int  # microseconds
    p: int  # polarity, -1 or +1
    label: int | None = None  # 0 background, 1 rain


@dataclass(slots=True)
class EventWindow:
    index: int
    t0: int
    te: int
    events: list[Event]
    z: np.ndarray  # per-event normalized time in [0, 1]


@dataclass(slots=True)
class EventCloud4D:
    windows: list[EventWindow]
    sensor_width: int
    sensor_height: int
    window_duration: float  # seconds
    dropped_count: int = 0

    @property
    def num_events(self) -> int:
        return sum(len(w.events) for w in self.windows)


def _parse_csv(path):
    events = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            return events
        cols = [c.strip().lower() for c in header]
        if cols[:4] != ["x", "y", "t", "p"]:
            raise ParseError(f"{path}: line 1: expected header x,y,t,p[,label]")
        has_label = len(cols) > 4 and cols[4] == "label"
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            try:
                x, y, t = int(row[0]), int(row[1]), int(row[2])
                p = int(row[3])
                label = None
                if has_label and len(row) > 4 and row[4].strip() != "":
                    label = int(row[4])
            except (ValueError, IndexError) as exc:
                raise ParseError(f"{path}: line {lineno}: malformed row {row!r}") from exc
            if p not in (-1, 1):
                raise ParseError(f"{path}: line {lineno}: polarity must be -1 or 1, got {p}")
            if label not in (None, 0, 1):
                raise ParseError(f"{path}: line {lineno}: label must be 0 or 1, got {label}")
            if x < 0 or y < 0 or t < 0:
                raise ParseError(f"{path}: line {lineno}: negative coordinate or timestamp")
            events.append(Event(x, y, t, p, label))
    return events


def _parse_binary(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < BINARY_HEADER.size:
        raise ParseError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, _width, _height, count = BINARY_HEADER.unpack_from(raw, 0)
    if magic != BINARY_MAGIC:
        raise ParseError(f"{path}: bad magic {magic!r}, expected {BINARY_MAGIC!r}")
    body = raw[BINARY_HEADER.size:]
    if len(body) != count * BINARY_RECORD.size:
        raise ParseError(
            f"{path}: expected {count} records ({count * BINARY_RECORD.size} bytes), "
            f"got {len(body)} bytes"
        )
    events = []
    for i in range(count):
        x, y, t, p, label = BINARY_RECORD.unpack_from(body, i * BINARY_RECORD.size)
        if p not in (-1, 1):
            raise ParseError(f"{path}: record {i}: polarity must be -1 or 1, got {p}")
        if label not in (-1, 0, 1):
            raise ParseError(f"{path}: record {i}: label must be -1, 0 or 1, got {label}")
        events.append(Event(x, y, t, p, None if label == -1 else label))
    return events


def load_events(path, format="csv"):
    """Read an event stream from disk, sorted by timestamp.

    format is "csv" (header x,y,t,p[,label]) or "packed-binary" (EVD1 records,
    see save_events). Raises ParseError on malformed content and
    ValidationError if timestamps are not non-decreasing.
    """
    if format == "csv":
        events = _parse_csv(path)
    elif format == "packed-binary":
        events = _parse_binary(path)
    else:
        raise ValueError(f"unknown format {format!r}")
    for i in range(1, len(events)):
        if events[i].t < events[i - 1].t:
            raise ValidationError(
                f"{path}: timestamps not sorted at record {i} "
                f"({events[i].t} after {events[i - 1].t})"
            )
    return events


def save_events(path, events, format="csv", sensor_width=0, sensor_height=0):
    """Write an event stream in one of the two interchange formats."""
    if format == "csv":
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x", "y", "t", "p", "label"])
            for e in events:
                writer.writerow([e.x, e.y, e.t, e.p, "" if e.label is None else e.label])
    elif format == "packed-binary":
        with open(path, "wb") as fh:
            fh.write(BINARY_HEADER.pack(BINARY_MAGIC, sensor_width, sensor_height, len(events)))
            for e in events:
                fh.write(BINARY_RECORD.pack(e.x, e.y, e.t, e.p, -1 if e.label is None else e.label))
    else:
        raise ValueError(f"unknown format {format!r}")


def probe_sensor_size(path, format="csv"):
    """Sensor (width, height) from the binary header, or None for CSV."""
    if format != "packed-binary":
        return None
    with open(path, "rb") as fh:
        raw = fh.read(BINARY_HEADER.size)
    if len(raw) < BINARY_HEADER.size:
        raise ParseError(f"{path}: truncated header")
    magic, width, height, _count = BINARY_HEADER.unpack(raw)
    if magic != BINARY_MAGIC:
        raise ParseError(f"{path}: bad magic {magic!r}")
    return width, height


def build_cloud(events, window_duration, num_windows,
                sensor_width=None, sensor_height=None):
    """Partition a sorted event stream into a windowed 4D event cloud.

    Window n covers [t_first + n*T, t_first + (n+1)*T) in integer microseconds
    (T = round(window_duration * 1e6)); the last window additionally includes
    its end timestamp. Events past the last window are dropped and counted in
    cloud.dropped_count. Sensor dimensions default to max coordinate + 1.
    """
    if window_duration <= 0:
        raise ValueError(f"window_duration must be > 0, got {window_duration}")
    if num_windows < 1:
        raise ValueError(f"num_windows must be >= 1, got {num_windows}")
    if not events:
        raise EmptyCloudError("cannot build a cloud from zero events")
    t_us = int(round(window_duration * 1e6))
    if t_us < 1:
        raise ValueError(f"window_duration {window_duration}s is below 1 microsecond")

    if sensor_width is None:
        sensor_width = max(e.x for e in events) + 1
    if sensor_height is None:
        sensor_height = max(e.y for e in events) + 1

    t_first = events[0].t
    buckets: list[list[Event]] = [[] for _ in range(num_windows)]
    dropped = 0
    for e in events:
        n = (e.t - t_first) // t_us
        if n == num_windows and e.t == t_first + num_windows * t_us:
            n = num_windows - 1  # closed right edge of the final window
        if n >= num_windows:
            dropped += 1
            continue
        buckets[n].append(e)

    windows = []
    for n, bucket in enumerate(buckets):
        t0 = t_first + n * t_us
        te = t0 + t_us
        z = np.array([(e.t - t0) / t_us for e in bucket], dtype=np.float64)
        windows.append(EventWindow(index=n, t0=t0, te=te, events=bucket, z=z))
    return EventCloud4D(
        windows=windows,
        sensor_width=sensor_width,
        sensor_height=sensor_height,
        window_duration=window_duration,
        dropped_count=dropped,
    )


def flatten(cloud):
    """Concatenate windows in ascending index: tuples (x, y, z, T_n, p, label)."""
    if cloud.num_events == 0:
        raise EmptyCloudError("cannot flatten an empty cloud")
    out = []
    for w in cloud.windows:
        for e, z in zip(w.events, w.z):
            out.append((e.x, e.y, float(z), w.index, e.p, e.label))
    return out


def flatten_arrays(cloud):
    """Flattened cloud as numpy arrays; labels is None if any label is missing."""
    if cloud.num_events == 0:
        raise EmptyCloudError("cannot flatten an empty cloud")
    xs, ys, ts, zs, wins, ps, labels = [], [], [], [], [], [], []
    labeled = True
    for w in cloud.windows:
        for e, z in zip(w.events, w.z):
            xs.append(e.x)
            ys.append(e.y)
            ts.append(e.t)
            zs.append(z)
            wins.append(w.index)
            ps.append(e.p)
            if e.label is None:
                labeled = False
            else:
                labels.append(e.label)
    return {
        "x": np.array(xs, dtype=np.int64),
        "y": np.array(ys, dtype=np.int64),
        "t": np.array(ts, dtype=np.int64),
        "z": np.array(zs, dtype=np.float64),
        "window": np.array(wins, dtype=np.int64),
        "p": np.array(ps, dtype=np.int64),
        "label": np.array(labels, dtype=np.int64) if labeled else None,
    }
