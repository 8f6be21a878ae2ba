"""Datasets: windowed sensor series (CSV or synthetic) and MNIST IDX files."""

from __future__ import annotations

import csv
import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

NORMAL, ANOMALY = 0, 1

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

# synthetic vibration: two tones sharing a 64-sample period
TONES = ((3 / 64, 1.0), (7 / 64, 0.5))
PERIOD = 64


@dataclass
class WindowedSeries:
    samples: np.ndarray  # [count, window * channels]
    labels: np.ndarray  # NORMAL / ANOMALY per sample
    bounds: tuple[float, float] | None = None

    def __len__(self) -> int:
        return len(self.samples)


def normalize(x: np.ndarray, bounds: tuple[float, float]) -> np.ndarray:
    lo, hi = bounds
    if hi == lo:
        return np.zeros_like(x, dtype=np.float64)
    return 2.0 * (x - lo) / (hi - lo) - 1.0


def sliding_windows(series: np.ndarray, window: int, stride: int) -> np.ndarray:
    """Windows over the first axis; multi-channel rows are flattened per window."""
    if window <= 0 or stride <= 0:
        raise ValueError("window and stride must be positive")
    n = len(series)
    if window > n:
        raise ValueError(f"window {window} longer than series of {n} rows")
    starts = range(0, n - window + 1, stride)
    return np.stack([series[s:s + window].reshape(-1) for s in starts])


def _parse_float(text: str, path, lineno: int) -> float:
    try:
        return float(text)
    except ValueError:
        raise ValueError(f"{path}:{lineno}: malformed value {text!r}") from None


def read_csv_columns(path, columns=0) -> np.ndarray:
    """Read one or more numeric columns; a non-numeric first row is a header.

    ``columns`` may be an index, a header name, or a list of either.
    Returns ``[rows]`` for a single column, else ``[rows, channels]``.
    """
    path = Path(path)
    single = not isinstance(columns, (list, tuple))
    cols = [columns] if single else list(columns)
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh)]
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = None
    try:
        [float(c) for c in rows[0] if c.strip()]
    except ValueError:
        header = [c.strip() for c in rows[0]]
    idx = []
    for c in cols:
        if isinstance(c, str) and not c.lstrip("-").isdigit():
            if header is None or c not in header:
                raise ValueError(f"{path}: no column named {c!r}")
            idx.append(header.index(c))
        else:
            idx.append(int(c))
    start = 1 if header is not None else 0
    out = []
    for lineno, row in enumerate(rows[start:], start=start + 1):
        if not row or all(not c.strip() for c in row):
            continue
        if max(idx) >= len(row):
            raise ValueError(f"{path}:{lineno}: expected at least {max(idx) + 1} columns, got {len(row)}")
        out.append([_parse_float(row[i], path, lineno) for i in idx])
    arr = np.asarray(out, dtype=np.float64).reshape(-1, len(idx))
    return arr[:, 0] if single else arr


def load_csv_series(path, window: int, stride: int, column=0, bounds=None,
                    label: int = NORMAL) -> WindowedSeries:
    """Sliding windows of a CSV series scaled to [-1, 1].

    Pass the training split's ``bounds`` when loading evaluation splits so all
    splits share one normalization.
    """
    series = read_csv_columns(path, column)
    if bounds is None:
        bounds = (float(series.min()), float(series.max()))
    windows = sliding_windows(normalize(series, bounds), window, stride)
    return WindowedSeries(windows, np.full(len(windows), label), bounds)


def write_csv_series(path, series: np.ndarray, header: list[str] | None = None) -> None:
    series = np.asarray(series, dtype=np.float64)
    rows = series.reshape(len(series), -1)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        if header:
            w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) for v in row])


def vibration_signal(t: np.ndarray) -> np.ndarray:
    return sum(a * np.sin(2 * np.pi * f * t) for f, a in TONES)


def add_bursts(windows: np.ndarray, rng: np.random.Generator, amplitude: float,
               length: int = 6) -> np.ndarray:
    """Add one decaying impulse train at a random position in each window."""
    out = windows.copy()
    decay = np.exp(-np.arange(length) / 2.0) * (-1.0) ** np.arange(length)
    for row in out:
        pos = int(rng.integers(0, row.size - 2))
        sign = 1.0 if rng.random() < 0.5 else -1.0
        seg = decay[: row.size - pos]
        row[pos:pos + seg.size] += sign * amplitude * seg
    return out


def synth_vibration(n_normal: int, n_anomaly: int, seed: int, window: int = 32,
                    noise: float = 0.05, test_fraction: float = 0.25):
    """Two-tone vibration windows; anomalies carry impulsive bursts.

    Returns (train normal, test normal, test anomaly) as WindowedSeries, all
    scaled with the training split's min/max.
    """
    if n_normal <= 0 or n_anomaly <= 0:
        raise ValueError("counts must be positive")
    rng = np.random.default_rng(seed)
    n_test = max(1, int(round(n_normal * test_fraction)))
    n_train = max(1, n_normal - n_test)

    def draw(count):
        # phase only matters modulo the period; small t keeps windows exactly periodic
        starts = rng.integers(0, PERIOD, size=count)
        t = starts[:, None] + np.arange(window)[None, :]
        x = vibration_signal(t.astype(np.float64))
        if noise:
            x = x + rng.normal(0.0, noise, size=x.shape)
        return x

    train = draw(n_train)
    test = draw(n_test)
    rms = float(np.sqrt(sum(a * a / 2 for _, a in TONES)))
    anomaly = add_bursts(draw(n_anomaly), rng, 3.0 * rms)
    bounds = (float(train.min()), float(train.max()))
    return (
        WindowedSeries(normalize(train, bounds), np.full(n_train, NORMAL), bounds),
        WindowedSeries(normalize(test, bounds), np.full(n_test, NORMAL), bounds),
        WindowedSeries(normalize(anomaly, bounds), np.full(n_anomaly, ANOMALY), bounds),
    )


def _open_maybe_gz(path: Path):
    return gzip.open(path, "rb") if path.suffix == ".gz" else path.open("rb")


def read_idx(path, expected_magic: int) -> np.ndarray:
    """Parse an unsigned-byte IDX file into an array of its declared shape."""
    path = Path(path)
    with _open_maybe_gz(path) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise ValueError(f"{path}: truncated header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise ValueError(f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise ValueError(f"{path}: truncated header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims))
    payload = raw[header:]
    if len(payload) < count:
        raise ValueError(f"{path}: truncated payload ({len(payload)} of {count} bytes)")
    return np.frombuffer(payload[:count], dtype=np.uint8).reshape(dims)


def write_idx(path, array: np.ndarray) -> None:
    array = np.asarray(array, dtype=np.uint8)
    magic = 0x00000800 | array.ndim
    body = struct.pack(">I", magic) + struct.pack(f">{array.ndim}I", *array.shape) + array.tobytes()
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "wb") as fh:
        fh.write(body)


def _find(directory: Path, stem: str) -> Path:
    for name in (stem, stem + ".gz", stem.replace("-idx", ".idx"), stem.replace("-idx", ".idx") + ".gz"):
        if (directory / name).exists():
            return directory / name
    raise FileNotFoundError(f"{directory}: no {stem}[.gz]")


def load_mnist_split(directory, prefix: str, limit: int | None = None):
    directory = Path(directory)
    images = read_idx(_find(directory, f"{prefix}-images-idx3-ubyte"), IDX_IMAGES_MAGIC)
    labels = read_idx(_find(directory, f"{prefix}-labels-idx1-ubyte"), IDX_LABELS_MAGIC)
    if len(images) != len(labels):
        raise ValueError(f"{directory}: {len(images)} images but {len(labels)} labels")
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    x = images.reshape(len(images), int(np.prod(images.shape[1:]))).astype(np.float64) / 255.0
    return x, labels.astype(np.int64)


def load_mnist(directory, train_limit: int | None = None, test_limit: int | None = None):
    """Returns (x_train, y_train, x_test, y_test); pixels in [0, 1], 784 wide."""
    x_tr, y_tr = load_mnist_split(directory, "train", train_limit)
    x_te, y_te = load_mnist_split(directory, "t10k", test_limit)
    return x_tr, y_tr, x_te, y_te


class BatchStream:
    """Seeded reshuffle-per-epoch batch indices, shared by every backend."""

    def __init__(self, n: int, batch_size: int, seed: int):
        if n <= 0:
            raise ValueError("cannot batch an empty dataset")
        self.n = n
        self.batch_size = min(batch_size, n)
        self.rng = np.random.default_rng(seed)
        self._order = np.empty(0, dtype=np.int64)

    def next(self) -> np.ndarray:
        if len(self._order) < self.batch_size:
            self._order = np.concatenate([self._order, self.rng.permutation(self.n)])
        idx, self._order = self._order[: self.batch_size], self._order[self.batch_size:]
        return idx
