"""Experiment driver: datasets, backends, evaluation and metrics records.

Metrics are JSON lines, one per evaluation point, with keys in this order:
``iteration, train_loss, eval, macs_total, macs_skipped, bwd_macs_total,
bwd_macs_skipped, clamp_count, scales`` and ``wall_ms`` when timing is on.
``train_loss`` is the mean step loss since the previous record (null at
iteration 0). ``eval`` holds ``mse_normal``/``mse_anomaly``/``mse_ratio`` for
mse runs and ``accuracy`` for classification runs.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .baseline import FpModel
from .config import RunConfig
from .data import BatchStream, load_csv_series, load_mnist, synth_vibration
from .inttensor import MacCounters
from .network import IntNetwork


@dataclass
class Dataset:
    train_x: np.ndarray
    train_y: np.ndarray | None
    # name -> (x, y); y is None for reconstruction sets
    eval_sets: dict


def build_dataset(cfg: RunConfig) -> Dataset:
    if cfg.dataset == "synth":
        train, test, anomaly = synth_vibration(cfg.n_normal, cfg.n_anomaly, cfg.seed, window=cfg.window)
        return Dataset(train.samples, None, {"normal": (test.samples, None), "anomaly": (anomaly.samples, None)})
    if cfg.dataset == "csv":
        column = int(cfg.column) if cfg.column.lstrip("-").isdigit() else cfg.column
        train = load_csv_series(cfg.train_path, cfg.window, cfg.stride, column)
        sets = {"normal": (load_csv_series(cfg.test_path, cfg.window, cfg.stride, column, train.bounds).samples, None)}
        if cfg.anomaly_path:
            sets["anomaly"] = (load_csv_series(cfg.anomaly_path, cfg.window, cfg.stride, column, train.bounds).samples, None)
        return Dataset(train.samples, None, sets)
    x_tr, y_tr, x_te, y_te = load_mnist(cfg.mnist_dir, cfg.train_limit, cfg.test_limit)
    return Dataset(x_tr, y_tr, {"test": (x_te, y_te)})


class IntBackend:
    def __init__(self, cfg: RunConfig, signed_input: bool):
        self.net = IntNetwork(cfg.model_spec(), signed_input=signed_input)

    def step(self, x, y) -> tuple[float, int]:
        r = self.net.train_step(x, x if y is None else y)
        return r.loss, r.clamped

    def predict(self, x) -> np.ndarray:
        return self.net.predict(x)

    @property
    def fwd_counters(self) -> MacCounters:
        return self.net.fwd_counters

    @property
    def bwd_counters(self) -> MacCounters:
        return self.net.bwd_counters

    def scales(self):
        return [list(e.as_tuple()) for e in self.net.scales()]

    def state(self) -> dict:
        return self.net.state()

    def load_state(self, state) -> None:
        self.net.load_state(state)


class FpBackend:
    """Float baseline; MACs are counted densely since nothing is skipped."""

    def __init__(self, cfg: RunConfig):
        momentum = cfg.momentum if cfg.backend == "fp-m" else 0.0
        self.model = FpModel(cfg.model_spec(), lr=cfg.lr, momentum=momentum)
        self.fwd_counters = MacCounters()
        self.bwd_counters = MacCounters()

    def step(self, x, y) -> tuple[float, int]:
        b = len(x)
        per_sample = sum(n * m for n, m in self.model.spec.layer_shapes)
        self.fwd_counters.total_macs += b * per_sample
        self.bwd_counters.total_macs += 2 * b * per_sample
        loss, _ = self.model.train_step(x, x if y is None else y)
        return loss, 0

    def predict(self, x) -> np.ndarray:
        return self.model.predict(x)

    def scales(self):
        return None

    def state(self) -> dict:
        return {f"w{i}": w for i, w in enumerate(self.model.weights)}

    def load_state(self, state) -> None:
        for i, w in enumerate(self.model.weights):
            stored = np.asarray(state[f"w{i}"], dtype=np.float64)
            if stored.shape != w.shape:
                raise ValueError(f"layer {i}: stored shape {stored.shape} != {w.shape}")
            w[...] = stored


def make_backend(cfg: RunConfig):
    if cfg.backend == "int":
        # pixel intensities are non-negative, so they get the full uint8 range
        return IntBackend(cfg, signed_input=cfg.dataset != "mnist")
    return FpBackend(cfg)


def evaluate(backend, data: Dataset) -> dict:
    out = {}
    for name, (x, y) in data.eval_sets.items():
        if len(x) == 0:
            continue
        pred = backend.predict(x)
        if y is None:
            out[f"mse_{name}"] = float(np.mean((pred - x) ** 2))
        else:
            out["accuracy"] = float(np.mean(np.argmax(pred, axis=1) == y))
    if "mse_normal" in out and out.get("mse_anomaly"):
        out["mse_ratio"] = out["mse_normal"] / out["mse_anomaly"]
    return out


def _record(iteration, losses, backend, data, clamps, timing, start) -> dict:
    rec = {
        "iteration": iteration,
        "train_loss": float(np.mean(losses)) if losses else None,
        "eval": evaluate(backend, data),
        "macs_total": backend.fwd_counters.total_macs,
        "macs_skipped": backend.fwd_counters.skipped_macs,
        "bwd_macs_total": backend.bwd_counters.total_macs,
        "bwd_macs_skipped": backend.bwd_counters.skipped_macs,
        "clamp_count": clamps,
        "scales": backend.scales(),
    }
    if timing:
        rec["wall_ms"] = round((time.perf_counter() - start) * 1000.0, 3)
    return rec


def run_experiment(cfg: RunConfig, data: Dataset | None = None, metrics_path=None) -> list[dict]:
    """Train per ``cfg``, appending one JSON line per evaluation point.

    Returns the records. The weights are written to ``cfg.weights_path`` when set.
    """
    cfg.validate()
    data = data if data is not None else build_dataset(cfg)
    backend = make_backend(cfg)
    stream = BatchStream(len(data.train_x), cfg.batch_size, cfg.seed)
    path = Path(metrics_path if metrics_path is not None else cfg.metrics_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    records, losses, clamps = [], [], 0
    with path.open("w") as fh:
        def emit(i):
            rec = _record(i, losses, backend, data, clamps, cfg.timing, start)
            fh.write(json.dumps(rec) + "\n")
            records.append(rec)
            losses.clear()

        emit(0)
        for i in range(1, cfg.iterations + 1):
            idx = stream.next()
            y = None if data.train_y is None else data.train_y[idx]
            loss, clamped = backend.step(data.train_x[idx], y)
            losses.append(loss)
            clamps += clamped
            if i % cfg.eval_every == 0 or i == cfg.iterations:
                emit(i)
    if cfg.weights_path:
        save_weights(backend, cfg.weights_path)
    return records


def save_weights(backend, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        np.savez(fh, **backend.state())


def evaluate_saved(cfg: RunConfig, weights_path) -> dict:
    backend = make_backend(cfg)
    with np.load(weights_path) as state:
        backend.load_state(state)
    return evaluate(backend, build_dataset(cfg))


def summarize(records: list[dict]) -> str:
    last = records[-1]
    parts = [f"iteration {last['iteration']}"]
    if last["train_loss"] is not None:
        parts.append(f"train_loss {last['train_loss']:.6g}")
    parts += [f"{k} {v:.6g}" for k, v in last["eval"].items()]
    if last["macs_total"]:
        parts.append(f"fwd skipped {last['macs_skipped'] / last['macs_total']:.1%}")
    return ", ".join(parts)
