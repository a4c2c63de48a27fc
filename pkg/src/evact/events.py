"""Event-stream data model, file formats, and event-to-frame stacking.

An event is the 4-tuple (x, y, t, p): pixel column/row, microsecond
timestamp, polarity +1 (brightness up, ON) or -1 (down, OFF). Streams
are stored as a packed little-endian record array so the binary file
format round-trips byte for byte.

Formats:
  bin  header: magic ``EVS1``, u16 width, u16 height, u64 count,
       then ``count`` records of (u64 t, u16 x, u16 y, i8 p).
  csv  header line ``width,height`` then one ``t,x,y,p`` line per event.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ParseError, ShapeError

MAGIC = b"EVS1"

EVENT_DTYPE = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "<i1")])
RECORD_SIZE = EVENT_DTYPE.itemsize  # 13 bytes
_HEADER_SIZE = 4 + 2 + 2 + 8


@dataclass
class Event:
    """A single sensor spike."""

    x: int
    y: int
    t: int
    p: int


@dataclass
class EventStream:
    """Time-sorted events from one recording, with optional class label."""

    width: int
    height: int
    events: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=EVENT_DTYPE))
    label: int | None = None

    def __len__(self) -> int:
        return len(self.events)

    def validate(self) -> None:
        """Raise ParseError at the first record violating the invariants."""
        ev = self.events
        if ev.dtype != EVENT_DTYPE:
            raise ParseError(f"events array has dtype {ev.dtype}, expected {EVENT_DTYPE}")
        if len(ev) == 0:
            return
        bad = (ev["x"] >= self.width) | (ev["y"] >= self.height)
        if bad.any():
            i = int(np.argmax(bad))
            raise ParseError(
                f"event at ({ev['x'][i]},{ev['y'][i]}) outside {self.width}x{self.height} sensor", index=i
            )
        bad = (ev["p"] != 1) & (ev["p"] != -1)
        if bad.any():
            i = int(np.argmax(bad))
            raise ParseError(f"polarity {ev['p'][i]} is not +1/-1", index=i)
        if len(ev) > 1:
            drop = ev["t"][1:] < ev["t"][:-1]
            if drop.any():
                i = int(np.argmax(drop)) + 1
                raise ParseError(f"timestamp decreases from {ev['t'][i - 1]} to {ev['t'][i]}", index=i)

    @property
    def duration(self) -> int:
        """t_last - t_first in microseconds; 0 for empty streams."""
        if len(self.events) == 0:
            return 0
        return int(self.events["t"][-1] - self.events["t"][0])


def stream_from_arrays(width, height, t, x, y, p, label=None) -> EventStream:
    """Build a validated stream from parallel coordinate arrays."""
    ev = np.empty(len(t), dtype=EVENT_DTYPE)
    ev["t"], ev["x"], ev["y"], ev["p"] = t, x, y, p
    s = EventStream(int(width), int(height), ev, label)
    s.validate()
    return s


# ---------------------------------------------------------------------------
# parsing / writing
# ---------------------------------------------------------------------------

def parse_events(payload: bytes, fmt: str = "bin") -> EventStream:
    """Decode a byte payload into an EventStream. ``fmt`` is 'bin' or 'csv'."""
    if fmt == "bin":
        return _parse_bin(payload)
    if fmt == "csv":
        return _parse_csv(payload)
    raise ParseError(f"unknown event format {fmt!r}, expected 'bin' or 'csv'")


def write_events(stream: EventStream, fmt: str = "bin") -> bytes:
    """Encode a stream; inverse of parse_events, deterministic output."""
    stream.validate()
    if fmt == "bin":
        header = MAGIC + np.uint16(stream.width).tobytes() + np.uint16(stream.height).tobytes()
        header += np.uint64(len(stream.events)).tobytes()
        return header + stream.events.tobytes()
    if fmt == "csv":
        out = io.StringIO()
        out.write(f"{stream.width},{stream.height}\n")
        for rec in stream.events:
            out.write(f"{rec['t']},{rec['x']},{rec['y']},{rec['p']}\n")
        return out.getvalue().encode()
    raise ParseError(f"unknown event format {fmt!r}, expected 'bin' or 'csv'")


def _parse_bin(payload: bytes) -> EventStream:
    if len(payload) < _HEADER_SIZE:
        raise ParseError(f"payload of {len(payload)} bytes is shorter than the {_HEADER_SIZE}-byte header")
    if payload[:4] != MAGIC:
        raise ParseError(f"bad magic {payload[:4]!r}, expected {MAGIC!r}")
    width = int(np.frombuffer(payload, "<u2", 1, 4)[0])
    height = int(np.frombuffer(payload, "<u2", 1, 6)[0])
    count = int(np.frombuffer(payload, "<u8", 1, 8)[0])
    body = payload[_HEADER_SIZE:]
    if len(body) != count * RECORD_SIZE:
        got = len(body) // RECORD_SIZE
        raise ParseError(
            f"truncated payload: header promises {count} records, body holds {len(body)} bytes",
            index=min(got, count),
        )
    events = np.frombuffer(body, dtype=EVENT_DTYPE, count=count).copy()
    s = EventStream(width, height, events)
    s.validate()
    return s


def _parse_csv(payload: bytes) -> EventStream:
    lines = payload.decode().splitlines()
    if not lines:
        raise ParseError("empty csv payload, expected a width,height header line")
    try:
        width, height = (int(v) for v in lines[0].split(","))
    except ValueError:
        raise ParseError(f"bad csv header {lines[0]!r}, expected 'width,height'") from None
    rows = [ln for ln in lines[1:] if ln.strip()]
    events = np.empty(len(rows), dtype=EVENT_DTYPE)
    for i, ln in enumerate(rows):
        parts = ln.split(",")
        if len(parts) != 4:
            raise ParseError(f"expected 4 fields 't,x,y,p', got {ln!r}", index=i)
        try:
            t, x, y, p = (int(v) for v in parts)
        except ValueError:
            raise ParseError(f"non-integer field in {ln!r}", index=i) from None
        if p not in (1, -1):
            raise ParseError(f"polarity {p} is not +1/-1", index=i)
        if not (0 <= x < width and 0 <= y < height):
            raise ParseError(f"event at ({x},{y}) outside {width}x{height} sensor", index=i)
        if t < 0:
            raise ParseError(f"negative timestamp {t}", index=i)
        events[i] = (t, x, y, p)
    s = EventStream(width, height, events)
    s.validate()
    return s


def read_event_file(path) -> EventStream:
    """Load a stream from disk, picking the format from the content."""
    with open(path, "rb") as fh:
        payload = fh.read()
    fmt = "bin" if payload[:4] == MAGIC else "csv"
    try:
        return parse_events(payload, fmt)
    except ParseError as exc:
        raise ParseError(f"{path}: {exc}") from exc


# ---------------------------------------------------------------------------
# frame stacking
# ---------------------------------------------------------------------------

@dataclass
class EventFrameStack:
    """T synchronous 2-channel count images (channel 0 ON, channel 1 OFF)."""

    frames: np.ndarray  # [T, 2, H, W] float64
    window_us: float  # duration covered by each frame

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


def stack_to_frames(stream: EventStream, n_frames: int = 8) -> EventFrameStack:
    """Split [t_first, t_last] into ``n_frames`` equal windows and count events.

    The last window is closed on the right, so the final event lands in
    frame n_frames-1. ON (+1) events go to channel 0, OFF to channel 1.
    The total count over all cells equals the number of events.
    """
    if n_frames < 1:
        raise ShapeError(f"frame count must be >= 1, got {n_frames}")
    frames = np.zeros((n_frames, 2, stream.height, stream.width))
    ev = stream.events
    if len(ev) > 0:
        t0 = ev["t"][0]
        duration = int(ev["t"][-1] - t0)
        kernels.bucket_events(frames, ev["t"], ev["x"], ev["y"], ev["p"], int(t0), duration)
        window = duration / n_frames if duration > 0 else 0.0
    else:
        window = 0.0
    return EventFrameStack(frames, window)


def normalize_frames(stack: EventFrameStack, mode: str = "none") -> EventFrameStack:
    """Monotone rescaling of nonnegative count frames.

    none: identity; per-frame-max: divide each frame by its own max (zero
    frames unchanged); log1p: elementwise log(1 + count).
    """
    if mode == "none":
        return stack
    if mode == "per-frame-max":
        out = stack.frames.copy()
        for k in range(out.shape[0]):
            m = out[k].max()
            if m > 0:
                out[k] /= m
        return EventFrameStack(out, stack.window_us)
    if mode == "log1p":
        return EventFrameStack(np.log1p(stack.frames), stack.window_us)
    raise ParseError(f"unknown normalize mode {mode!r}, expected none, per-frame-max, or log1p")


def fit_frames(stack: EventFrameStack, size: int) -> EventFrameStack:
    """Center-crop or zero-pad each frame to a square ``size`` x ``size``."""
    t, c, h, w = stack.frames.shape
    if (h, w) == (size, size):
        return stack
    out = np.zeros((t, c, size, size))
    src_y = max(0, (h - size) // 2)
    src_x = max(0, (w - size) // 2)
    dst_y = max(0, (size - h) // 2)
    dst_x = max(0, (size - w) // 2)
    copy_h = min(h, size)
    copy_w = min(w, size)
    out[:, :, dst_y : dst_y + copy_h, dst_x : dst_x + copy_w] = stack.frames[
        :, :, src_y : src_y + copy_h, src_x : src_x + copy_w
    ]
    return EventFrameStack(out, stack.window_us)
