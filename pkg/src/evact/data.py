"""Dataset-on-disk layout: one directory per class, one event file per
sample, and a manifest listing (path, label, split).

The split is 60/10/30 per class: floor(0.6 n) train, floor(0.1 n) val,
remainder test, assigned in sample order. Class names live in
``classes.txt`` (one per line, label order); the manifest is a CSV with
header ``path,label,split`` and paths relative to the dataset root.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .events import fit_frames, normalize_frames, read_event_file, stack_to_frames, write_events
from .synth import GeneratorSpec, motion_classes, synth_generate

SPLITS = ("train", "val", "test")
MANIFEST_NAME = "manifest.csv"
CLASSES_NAME = "classes.txt"
SPLIT_FRACTIONS = (0.6, 0.1)  # train, val; test takes the remainder


@dataclass
class ManifestRow:
    path: str
    label: int
    split: str


@dataclass
class Manifest:
    root: Path
    class_names: list[str]
    rows: list[ManifestRow]

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def split_rows(self, split: str) -> list[ManifestRow]:
        if split not in SPLITS:
            raise DataError(f"unknown split {split!r}, expected one of {SPLITS}")
        return [r for r in self.rows if r.split == split]


def split_counts(n: int) -> tuple[int, int, int]:
    """Per-class (train, val, test) sizes for n samples."""
    n_train = int(SPLIT_FRACTIONS[0] * n)
    n_val = int(SPLIT_FRACTIONS[1] * n)
    return n_train, n_val, n - n_train - n_val


def build_dataset(
    out_dir,
    class_names: list[str] | None = None,
    per_class: int = 10,
    seed: int = 0,
    duration_us: int = 5_000_000,
    noise_rate: float = 0.0,
    width: int = 64,
    height: int = 64,
    speed_range: tuple[float, float] = (0.7, 1.6),
) -> Manifest:
    """Generate a labeled synthetic dataset and write it under ``out_dir``.

    Per-sample speed and phase are drawn from a seed-derived RNG so samples
    within a class differ while the whole tree is reproducible from
    (arguments, seed).
    """
    if class_names is None:
        class_names = motion_classes()
    known = motion_classes()
    for name in class_names:
        if name not in known:
            raise DataError(f"unknown motion class {name!r}; known: {', '.join(known)}")
    if per_class < 1:
        raise DataError(f"per_class must be >= 1, got {per_class}")

    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    n_train, n_val, _ = split_counts(per_class)
    rows: list[ManifestRow] = []
    for label, name in enumerate(class_names):
        cls_dir = root / name
        cls_dir.mkdir(exist_ok=True)
        for i in range(per_class):
            rng = np.random.default_rng([seed, label, i])
            spec = GeneratorSpec(
                motion_class=name,
                width=width,
                height=height,
                duration_us=duration_us,
                speed=float(rng.uniform(*speed_range)),
                phase=float(rng.uniform(0.0, 1.0)),
                noise_rate=noise_rate,
            )
            stream = synth_generate(spec, seed=int(rng.integers(0, 2**31)))
            rel = f"{name}/sample_{i:04d}.evs"
            (root / rel).write_bytes(write_events(stream, "bin"))
            split = "train" if i < n_train else ("val" if i < n_train + n_val else "test")
            rows.append(ManifestRow(rel, label, split))

    (root / CLASSES_NAME).write_text("".join(f"{n}\n" for n in class_names))
    with open(root / MANIFEST_NAME, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "label", "split"])
        for r in rows:
            writer.writerow([r.path, r.label, r.split])
    return Manifest(root, list(class_names), rows)


def load_manifest(data_dir) -> Manifest:
    root = Path(data_dir)
    mpath = root / MANIFEST_NAME
    cpath = root / CLASSES_NAME
    if not mpath.is_file():
        raise DataError(f"no manifest found at {mpath}")
    if not cpath.is_file():
        raise DataError(f"no class list found at {cpath}")
    class_names = [ln for ln in cpath.read_text().splitlines() if ln.strip()]
    rows = []
    with open(mpath, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["path", "label", "split"]:
            raise DataError(f"{mpath}: bad manifest header {header}")
        for rec in reader:
            if len(rec) != 3:
                raise DataError(f"{mpath}: bad manifest row {rec}")
            path, label, split = rec
            if split not in SPLITS:
                raise DataError(f"{mpath}: unknown split {split!r} in row {rec}")
            label_i = int(label)
            if not 0 <= label_i < len(class_names):
                raise DataError(f"{mpath}: label {label_i} out of range for {len(class_names)} classes")
            rows.append(ManifestRow(path, label_i, split))
    return Manifest(root, class_names, rows)


def load_sample(root: Path, row: ManifestRow, cfg) -> np.ndarray:
    """Read one event file and produce the model input [T, 2, S, S]."""
    stream = read_event_file(root / row.path)
    stack = stack_to_frames(stream, cfg.frames)
    stack = fit_frames(stack, cfg.input_size)
    stack = normalize_frames(stack, cfg.normalize)
    return stack.frames


def load_split(manifest: Manifest, split: str, cfg) -> tuple[np.ndarray, np.ndarray]:
    """Stack a whole split into (X [n,T,2,S,S], labels [n])."""
    rows = manifest.split_rows(split)
    if not rows:
        raise DataError(f"split {split!r} of {manifest.root} is empty")
    x = np.stack([load_sample(manifest.root, r, cfg) for r in rows])
    y = np.array([r.label for r in rows], dtype=np.int64)
    return x, y
