"""Run configuration: a flat ``key = value`` text file with a version key.

Example::

    format_version = 1
    widths = 32, 24, 24, 24, 32
    backend = int
    dataset = synth
    iterations = 500
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .layers import ModelSpec

FORMAT_VERSION = 1
BACKENDS = ("int", "fp", "fp-m")
DATASETS = ("synth", "csv", "mnist")

_SECTION = "run"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    widths: list[int] = field(default_factory=lambda: [32, 24, 24, 24, 32])
    final_relu: bool = False
    loss: str = "mse"
    backend: str = "int"
    m: int = 4
    lr: float = 0.1
    momentum: float = 0.8
    batch_size: int = 32
    iterations: int = 500
    eval_every: int = 10
    seed: int = 0
    # data
    dataset: str = "synth"
    n_normal: int = 2000
    n_anomaly: int = 500
    window: int = 32
    stride: int = 8
    column: str = "0"
    train_path: str = ""
    test_path: str = ""
    anomaly_path: str = ""
    mnist_dir: str = ""
    train_limit: int = 2000
    test_limit: int = 500
    # outputs
    metrics_path: str = "metrics.jsonl"
    weights_path: str = ""
    timing: bool = False
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.format_version != FORMAT_VERSION:
            raise ConfigError(f"unsupported format_version {self.format_version}, expected {FORMAT_VERSION}")
        if self.backend not in BACKENDS:
            raise ConfigError(f"backend must be one of {', '.join(BACKENDS)}, got {self.backend!r}")
        if self.dataset not in DATASETS:
            raise ConfigError(f"dataset must be one of {', '.join(DATASETS)}, got {self.dataset!r}")
        if self.iterations < 0:
            raise ConfigError("iterations must be non-negative")
        if self.eval_every <= 0:
            raise ConfigError("eval_every must be positive")
        if self.backend != "int" and self.lr <= 0:
            raise ConfigError("lr must be positive for the fp backends")
        if self.backend == "fp-m" and not 0 <= self.momentum < 1:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.dataset == "csv" and not (self.train_path and self.test_path):
            raise ConfigError("csv dataset needs train_path and test_path")
        if self.dataset == "mnist" and not self.mnist_dir:
            raise ConfigError("mnist dataset needs mnist_dir")
        if self.dataset == "mnist" and self.loss != "classification":
            raise ConfigError("mnist dataset needs loss = classification")
        try:
            self.model_spec()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def model_spec(self) -> ModelSpec:
        return ModelSpec(list(self.widths), self.final_relu, self.loss, self.m, self.batch_size, self.seed)

    def resolve(self, base: Path) -> RunConfig:
        """Copy with relative paths anchored at ``base``."""
        changes = {}
        for name in ("train_path", "test_path", "anomaly_path", "mnist_dir", "metrics_path", "weights_path"):
            value = getattr(self, name)
            if value and not Path(value).is_absolute():
                changes[name] = str(base / value)
        return dataclasses.replace(self, **changes)


def _to_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _convert(name: str, text: str, kind):
    try:
        if kind is bool:
            return _to_bool(text)
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        if kind == "list[int]":
            return [int(v) for v in text.split(",") if v.strip()]
        return text.strip()
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from None


def _field_kinds() -> dict:
    kinds = {}
    for f in dataclasses.fields(RunConfig):
        t = f.type if isinstance(f.type, str) else f.type.__name__
        kinds[f.name] = {"int": int, "float": float, "bool": bool, "str": str}.get(t, t)
    return kinds


def parse_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(f"[{_SECTION}]\n{text}")
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    raw = dict(parser[_SECTION])
    if "format_version" not in raw:
        raise ConfigError("missing format_version key")
    kinds = _field_kinds()
    unknown = sorted(set(raw) - set(kinds))
    if unknown:
        raise ConfigError(f"unknown keys: {', '.join(unknown)}")
    values = {k: _convert(k, v, kinds[k]) for k, v in raw.items()}
    return RunConfig(**values)


def serialize_config(cfg: RunConfig) -> str:
    lines = []
    for f in dataclasses.fields(RunConfig):
        value = getattr(cfg, f.name)
        if isinstance(value, list):
            text = ", ".join(str(v) for v in value)
        elif isinstance(value, bool):
            text = "true" if value else "false"
        else:
            text = str(value)
        lines.append(f"{f.name} = {text}")
    # version first so readers can reject early
    lines.sort(key=lambda line: not line.startswith("format_version"))
    return "\n".join(lines) + "\n"


def load_config(path) -> RunConfig:
    path = Path(path)
    cfg = parse_config(path.read_text())
    return cfg.resolve(path.parent)
