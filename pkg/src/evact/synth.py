"""Deterministic synthetic event streams for a library of motion classes.

Each class is a parametric trajectory sampled on a fine time grid. At
every step the moving shape is rasterized to a pixel set; pixels that
appear emit ON (+1) events and pixels that vacate emit OFF (-1) events,
the leading/trailing-edge signature a real sensor produces for a bright
shape on a dark background. Uniform background noise events are mixed in
at a configurable rate. Equal (spec, seed) always yields byte-identical
streams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .events import EventStream, stream_from_arrays


@dataclass(frozen=True)
class GeneratorSpec:
    """One synthetic recording: what moves, how fast, for how long."""

    motion_class: str
    width: int = 64
    height: int = 64
    duration_us: int = 5_000_000
    speed: float = 1.0
    phase: float = 0.0
    noise_rate: float = 0.0  # background events per second over the whole sensor


def _tri(p: float) -> float:
    """Triangle wave with period 2 mapping phase to [0, 1]."""
    return 1.0 - abs(1.0 - math.fmod(p, 2.0))


def _dot(x: float, y: float) -> np.ndarray:
    return np.array([[x, y]])


def _ring(cx: float, cy: float, r: float) -> np.ndarray:
    n = max(8, int(2.0 * math.pi * r * 1.5))
    th = np.linspace(0.0, 2.0 * math.pi, n, endpoint=False)
    return np.stack([cx + r * np.cos(th), cy + r * np.sin(th)], axis=1)


def _segment(x0: float, y0: float, x1: float, y1: float) -> np.ndarray:
    n = max(2, int(math.hypot(x1 - x0, y1 - y0) * 1.5))
    s = np.linspace(0.0, 1.0, n)
    return np.stack([x0 + (x1 - x0) * s, y0 + (y1 - y0) * s], axis=1)


def _pos_dot_right(u, w, h):
    return _dot(u * (w - 1), (h - 1) / 2)


def _pos_dot_left(u, w, h):
    return _dot((1 - u) * (w - 1), (h - 1) / 2)


def _pos_dot_up(u, w, h):
    return _dot((w - 1) / 2, (1 - u) * (h - 1))


def _pos_dot_down(u, w, h):
    return _dot((w - 1) / 2, u * (h - 1))


def _pos_dot_diagonal(u, w, h):
    return _dot(u * (w - 1), u * (h - 1))


def _pos_bouncing_dot(u, w, h):
    return _dot(_tri(4.0 * u) * (w - 1), _tri(6.0 * u) * (h - 1))


def _max_radius(w, h):
    return min(w, h) / 2 - 2


def _pos_expanding_ring(u, w, h):
    return _ring((w - 1) / 2, (h - 1) / 2, 2.0 + u * (_max_radius(w, h) - 2.0))


def _pos_contracting_ring(u, w, h):
    return _ring((w - 1) / 2, (h - 1) / 2, 2.0 + (1 - u) * (_max_radius(w, h) - 2.0))


def _pos_oscillating_bar_h(u, w, h):
    x = (w - 1) / 2 + 0.8 * (w / 2 - 2) * math.sin(2.0 * math.pi * u)
    return _segment(x, h * 0.15, x, h * 0.85)


def _pos_oscillating_bar_v(u, w, h):
    y = (h - 1) / 2 + 0.8 * (h / 2 - 2) * math.sin(2.0 * math.pi * u)
    return _segment(w * 0.15, y, w * 0.85, y)


def _pos_rotating_bar(u, w, h):
    cx, cy = (w - 1) / 2, (h - 1) / 2
    half = 0.4 * min(w, h)
    th = 2.0 * math.pi * u
    dx, dy = half * math.cos(th), half * math.sin(th)
    return _segment(cx - dx, cy - dy, cx + dx, cy + dy)


def _pos_two_dot_crossing(u, w, h):
    a = _dot(u * (w - 1), h * 0.3 + u * h * 0.4)
    b = _dot((1 - u) * (w - 1), h * 0.3 + u * h * 0.4)
    return np.concatenate([a, b])


_CLASSES = {
    "dot_right": _pos_dot_right,
    "dot_left": _pos_dot_left,
    "dot_up": _pos_dot_up,
    "dot_down": _pos_dot_down,
    "dot_diagonal": _pos_dot_diagonal,
    "bouncing_dot": _pos_bouncing_dot,
    "expanding_ring": _pos_expanding_ring,
    "contracting_ring": _pos_contracting_ring,
    "oscillating_bar_h": _pos_oscillating_bar_h,
    "oscillating_bar_v": _pos_oscillating_bar_v,
    "rotating_bar": _pos_rotating_bar,
    "two_dot_crossing": _pos_two_dot_crossing,
}


def motion_classes() -> list[str]:
    """Names of all generator motion classes, in label order."""
    return list(_CLASSES)


def trajectory_points(spec: GeneratorSpec, u: float) -> np.ndarray:
    """Float pixel positions of the shape at normalized phase u in [0, 1)."""
    try:
        fn = _CLASSES[spec.motion_class]
    except KeyError:
        raise ConfigError(
            f"unknown motion class {spec.motion_class!r}; known: {', '.join(_CLASSES)}"
        ) from None
    return fn(u, spec.width, spec.height)


def _rasterize(points: np.ndarray, w: int, h: int) -> np.ndarray:
    """Round float positions to unique in-bounds pixel codes y*w + x."""
    xs = np.rint(points[:, 0]).astype(np.int64)
    ys = np.rint(points[:, 1]).astype(np.int64)
    keep = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
    return np.unique(ys[keep] * w + xs[keep])


def synth_generate(spec: GeneratorSpec, seed: int) -> EventStream:
    """Generate one labeled stream; label is the motion class index."""
    label = motion_classes().index(spec.motion_class) if spec.motion_class in _CLASSES else None
    if label is None:
        raise ConfigError(f"unknown motion class {spec.motion_class!r}; known: {', '.join(_CLASSES)}")
    if spec.duration_us <= 0:
        raise ConfigError(f"duration must be positive, got {spec.duration_us}")
    if spec.speed <= 0:
        raise ConfigError(f"speed must be positive, got {spec.speed}")

    w, h = spec.width, spec.height
    steps = max(64, int(4 * spec.speed * max(w, h)))
    ts, xs, ys, ps = [], [], [], []
    prev = np.empty(0, dtype=np.int64)
    for i in range(steps):
        u = math.fmod(spec.phase + spec.speed * i / steps, 1.0)
        cur = _rasterize(trajectory_points(spec, u), w, h)
        t = (i * spec.duration_us) // steps
        for codes, pol in ((np.setdiff1d(cur, prev), 1), (np.setdiff1d(prev, cur), -1)):
            if len(codes):
                ts.append(np.full(len(codes), t, dtype=np.uint64))
                xs.append((codes % w).astype(np.uint16))
                ys.append((codes // w).astype(np.uint16))
                ps.append(np.full(len(codes), pol, dtype=np.int8))
        prev = cur

    t_arr = np.concatenate(ts) if ts else np.empty(0, dtype=np.uint64)
    x_arr = np.concatenate(xs) if xs else np.empty(0, dtype=np.uint16)
    y_arr = np.concatenate(ys) if ys else np.empty(0, dtype=np.uint16)
    p_arr = np.concatenate(ps) if ps else np.empty(0, dtype=np.int8)

    if spec.noise_rate > 0:
        rng = np.random.default_rng([seed, label])
        n_noise = rng.poisson(spec.noise_rate * spec.duration_us / 1e6)
        if n_noise > 0:
            t_arr = np.concatenate([t_arr, rng.integers(0, spec.duration_us, n_noise).astype(np.uint64)])
            x_arr = np.concatenate([x_arr, rng.integers(0, w, n_noise).astype(np.uint16)])
            y_arr = np.concatenate([y_arr, rng.integers(0, h, n_noise).astype(np.uint16)])
            p_arr = np.concatenate([p_arr, rng.choice(np.array([1, -1], dtype=np.int8), n_noise)])

    order = np.argsort(t_arr, kind="stable")
    return stream_from_arrays(w, h, t_arr[order], x_arr[order], y_arr[order], p_arr[order], label=label)
