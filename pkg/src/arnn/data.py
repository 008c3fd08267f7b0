"""Segment I/O, per-channel min-max scaling, and a synthetic burst dataset.

On-disk layout::

    DIR/manifest.csv      header "path,label", paths relative to DIR
    DIR/<segment>.csv     n lines x c comma-separated floats (rows = time)

Segments are held in memory as ``(c, n)`` float64 arrays.
"""

import csv
import math
import os
import shutil
import tempfile
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .errors import DataError, ParameterError

MANIFEST = "manifest.csv"


@dataclass
class Segment:
    data: np.ndarray
    label: int
    name: str = ""
    info: dict = field(default_factory=dict)


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple  # ((relative path, label), ...)
    c: int
    n: int


# ---------------------------------------------------------------------------
# loading


def _parse_segment_csv(path):
    """Parse one segment file into an ``(n, c)`` array, reporting the first bad line."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as e:
        raise DataError(f"{path}: cannot read ({e.strerror})") from None
    if not rows:
        raise DataError(f"{path}: file is empty")
    width = len(rows[0])
    out = np.empty((len(rows), width))
    for lineno, row in enumerate(rows, start=1):
        if len(row) != width:
            raise DataError(f"{path}:{lineno}: ragged row, {len(row)} fields, expected {width}")
        for col, cell in enumerate(row):
            try:
                out[lineno - 1, col] = float(cell)
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric value {cell!r} in column {col + 1}") from None
    if not np.all(np.isfinite(out)):
        bad = int(np.argwhere(~np.isfinite(out))[0, 0]) + 1
        raise DataError(f"{path}:{bad}: non-finite value")
    return out


def read_segment_csv(path):
    try:
        arr = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2, comments=None)
    except (ValueError, OSError):
        arr = None
    if arr is None or arr.size == 0 or not np.all(np.isfinite(arr)):
        # slow path only to build a precise message
        arr = _parse_segment_csv(path)
    return arr


def load_manifest(directory, c=None, n=None):
    """Load every segment listed in ``directory/manifest.csv``.

    ``c`` and ``n`` default to the shape of the first segment; every other
    segment must match.  Any failure raises :class:`DataError` and nothing
    is returned.

    Returns
    -------
    manifest : DatasetManifest
    segments : list of Segment
        Each with ``data`` of shape ``(c, n)``.
    """
    directory = os.fspath(directory)
    mpath = os.path.join(directory, MANIFEST)
    try:
        with open(mpath, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as e:
        raise DataError(f"{mpath}: cannot read manifest ({e.strerror})") from None
    if not rows or [h.strip() for h in rows[0]] != ["path", "label"]:
        raise DataError(f"{mpath}:1: header must be 'path,label'")
    entries = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 2:
            raise DataError(f"{mpath}:{lineno}: expected 2 fields, got {len(row)}")
        rel, label = row[0].strip(), row[1].strip()
        if label not in ("0", "1"):
            raise DataError(f"{mpath}:{lineno}: label must be 0 or 1, got {label!r}")
        entries.append((rel, int(label)))
    if not entries:
        raise DataError(f"{mpath}: no entries")

    segments = []
    for rel, label in entries:
        path = os.path.join(directory, rel)
        if not os.path.isfile(path):
            raise DataError(f"{path}: missing segment file")
        arr = read_segment_csv(path)
        if c is None:
            n, c = arr.shape
        if arr.shape != (n, c):
            raise DataError(
                f"{path}: shape {arr.shape[0]} rows x {arr.shape[1]} cols, expected {n} x {c}"
            )
        segments.append(Segment(np.ascontiguousarray(arr.T), label, rel))
    return DatasetManifest(tuple(entries), c, n), segments


def write_segments(directory, segments, fmt="%.17g"):
    """Write ``manifest.csv`` plus one CSV per segment.

    The tree is assembled in a temporary sibling directory and moved into
    place only after every file has been written.
    """
    directory = os.path.abspath(os.fspath(directory))
    parent = os.path.dirname(directory)
    os.makedirs(parent, exist_ok=True)
    tmp = tempfile.mkdtemp(dir=parent, prefix=".synth-")
    try:
        names = []
        for idx, seg in enumerate(segments):
            name = seg.name if seg.name.endswith(".csv") else f"seg_{idx:05d}.csv"
            names.append((name, seg.label))
            np.savetxt(os.path.join(tmp, name), np.asarray(seg.data).T, fmt=fmt, delimiter=",")
        with open(os.path.join(tmp, MANIFEST), "w", newline="") as fh:
            fh.write("path,label\n")
            for name, label in names:
                fh.write(f"{name},{int(label)}\n")
        if not os.path.exists(directory):
            os.replace(tmp, directory)
        else:
            for entry in sorted(os.listdir(tmp)):
                os.replace(os.path.join(tmp, entry), os.path.join(directory, entry))
    finally:
        shutil.rmtree(tmp, ignore_errors=True)
    return directory


# ---------------------------------------------------------------------------
# normalisation


def minmax_normalize(x):
    """Scale each channel (row) of ``x`` into ``[0, 1]``; constant channels become 0."""
    x = np.asarray(x, dtype=np.float64)
    lo = x.min(axis=-1, keepdims=True)
    span = x.max(axis=-1, keepdims=True) - lo
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, (x - lo) / safe, 0.0)


# ---------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class SynthConfig:
    """Background colored noise with optional high-frequency bursts.

    ``band`` is in cycles per sample, so it must lie inside ``(0, 0.5)``.
    Burst amplitude is ``amplitude_ratio * noise_level`` (the noise RMS).
    """

    c: int = 16
    n: int = 1024
    count: int = 100
    band: tuple = (0.2, 0.25)
    amplitude_ratio: float = 3.0
    noise_level: float = 1.0
    noise_exponent: float = 2.0
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.band
        if not 0 < lo <= hi < 0.5:
            raise ParameterError(f"band {self.band} must satisfy 0 < lo <= hi < 0.5")
        if not self.amplitude_ratio > 1:
            raise ParameterError(f"amplitude_ratio must be > 1, got {self.amplitude_ratio}")
        if self.c < 1 or self.n < 8:
            raise ParameterError(f"need c >= 1 and n >= 8, got c={self.c}, n={self.n}")
        if self.count < 1:
            raise ParameterError(f"count must be >= 1, got {self.count}")
        if not self.noise_level > 0:
            raise ParameterError(f"noise_level must be > 0, got {self.noise_level}")


def colored_noise(rng, shape, exponent=1.0):
    """Noise with power spectrum ~ 1/f**exponent along the last axis, unit RMS per row."""
    n = shape[-1]
    spec = np.fft.rfft(rng.standard_normal(shape), axis=-1)
    freqs = np.arange(spec.shape[-1], dtype=np.float64)
    freqs[0] = 1.0
    spec = spec / freqs ** (exponent / 2.0)
    spec[..., 0] = 0.0
    x = np.fft.irfft(spec, n=n, axis=-1)
    return x / x.std(axis=-1, keepdims=True)


def _add_bursts(x, rng, cfg):
    c, n = x.shape
    bursts = []
    t = np.arange(n)
    for _ in range(int(rng.integers(1, 4))):
        dur = int(rng.integers(math.ceil(0.10 * n), math.floor(0.25 * n) + 1))
        onset = int(rng.integers(0, n - dur + 1))
        freq = float(rng.uniform(*cfg.band))
        phase = float(rng.uniform(0.0, 2.0 * np.pi))
        k = int(rng.integers(math.ceil(c / 2), c + 1))
        chans = np.sort(rng.choice(c, size=k, replace=False))
        seg = slice(onset, onset + dur)
        wave = cfg.amplitude_ratio * cfg.noise_level * np.sin(2 * np.pi * freq * t[seg] + phase)
        x[chans, seg] += wave
        bursts.append({"onset": onset, "duration": dur, "freq": freq, "channels": chans.tolist()})
    return bursts


def synth_generate(config):
    """Deterministic labelled dataset: ``count`` background and ``count`` burst segments.

    Class 1 adds 1-3 sinusoidal bursts (10-25% of ``n`` long) on at least
    half of the channels.  Burst parameters are kept in ``Segment.info``.
    """
    rng = nx.make_rng(config.seed)
    out = []
    for idx in range(2 * config.count):
        label = idx % 2
        x = config.noise_level * colored_noise(rng, (config.c, config.n), config.noise_exponent)
        info = {"bursts": _add_bursts(x, rng, config)} if label else {}
        out.append(Segment(x, label, f"seg_{idx:05d}.csv", info))
    return out
