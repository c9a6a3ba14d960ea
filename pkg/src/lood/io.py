"""Dataset files, the toy generator, config files and deterministic writers."""

import csv
import hashlib
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DatasetIOError, EmptyDataset, ParseError
from .gp import Dataset

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib


# -- datasets ------------------------------------------------------------------


def _data_lines(handle):
    for lineno, line in enumerate(handle, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        yield lineno, line


def load_dataset(path, noise_variance=0.01):
    """Read a ``f0,...,f{d-1},label`` CSV file; ``#`` lines are comments."""
    path = Path(path)
    try:
        handle = path.open(newline="")
    except OSError as exc:
        raise DatasetIOError(f"cannot open dataset {path}: {exc}") from exc
    with handle:
        lines = list(_data_lines(handle))
    if not lines:
        raise ParseError(f"{path}: missing header", row=None, column=None)
    rows = list(csv.reader([line for _, line in lines]))
    header = [h.strip() for h in rows[0]]
    d = len(header) - 1
    expected = [f"f{i}" for i in range(d)] + ["label"]
    if d < 1 or header != expected:
        raise ParseError(f"{path}: header must be {','.join(expected) if d >= 1 else 'f0,...,label'}, got {','.join(header)}", row=lines[0][0])
    feats, labels = [], []
    for (lineno, _), row in zip(lines[1:], rows[1:]):
        if len(row) != d + 1:
            raise ParseError(f"{path}:{lineno}: expected {d + 1} fields, got {len(row)}", row=lineno)
        values = []
        for name, cell in zip(expected, row):
            try:
                v = float(cell)
            except ValueError:
                raise ParseError(f"{path}:{lineno}: column {name}: not a number: {cell.strip()!r}", row=lineno, column=name) from None
            if not math.isfinite(v):
                raise ParseError(f"{path}:{lineno}: column {name}: non-finite value {cell.strip()!r}", row=lineno, column=name)
            values.append(v)
        feats.append(values[:d])
        labels.append(values[d])
    if not feats:
        raise EmptyDataset(f"{path}: no data rows")
    return Dataset(np.array(feats), np.array(labels), noise_variance)


def format_float(x):
    return format(float(x), ".17g")


def save_dataset(path, data):
    path = Path(path)
    d = data.dim
    try:
        with path.open("w", newline="") as handle:
            handle.write(",".join([f"f{i}" for i in range(d)] + ["label"]) + "\n")
            for x, y in zip(data.features, data.labels):
                handle.write(",".join(format_float(v) for v in list(x) + [y]) + "\n")
    except OSError as exc:
        raise DatasetIOError(f"cannot write dataset {path}: {exc}") from exc


@dataclass(frozen=True)
class ToyGeneratorSpec:
    kind: str = "sine"
    n: int = 10
    x_std: float = 1.0
    noise_variance: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.kind != "sine":
            raise ConfigError(f"unknown toy kind {self.kind!r}")
        if self.n < 1:
            raise ConfigError("toy dataset needs n >= 1")
        if not self.x_std > 0:
            raise ConfigError("x_std must be positive")


def generate_toy(spec):
    """1-D inputs ``x ~ N(0, x_std^2)`` with noiseless labels ``sin(x)``."""
    rng = np.random.default_rng(spec.seed)
    x = spec.x_std * rng.standard_normal(spec.n)
    return Dataset(x[:, None], np.sin(x), spec.noise_variance)


# -- config ----------------------------------------------------------------------


def load_config(path):
    path = Path(path)
    try:
        with path.open("rb") as handle:
            return tomllib.load(handle)
    except OSError as exc:
        raise DatasetIOError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def parse_override(text):
    """``section.key=value`` with a TOML value (bare words are strings)."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError(f"override {text!r} has an empty key")
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    return key.split("."), value


def apply_override(config, path, value):
    node = config
    for part in path[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot set {'.'.join(path)}: {part} is not a section")
    node[path[-1]] = value


# -- deterministic writers -----------------------------------------------------


def _plain(obj):
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _encode(obj, indent, level):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None:
        return "null"
    if obj is True:
        return "true"
    if obj is False:
        return "false"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        if not math.isfinite(obj):
            return "null"
        return format_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list)) for v in obj):
            return "[" + ", ".join(_encode(v, indent, level + 1) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + _encode(v, indent, level + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{_encode(str(k), indent, level + 1)}: {_encode(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj, indent=2):
    """JSON text with insertion-ordered keys and 17-significant-digit floats."""
    return _encode(_plain(obj), indent, 0) + "\n"


def write_json(path, obj):
    try:
        Path(path).write_text(dumps(obj))
    except OSError as exc:
        raise DatasetIOError(f"cannot write {path}: {exc}") from exc


def write_csv(path, header, rows):
    def cell(v):
        if isinstance(v, (float, np.floating)):
            return format_float(v)
        return str(v)

    try:
        with Path(path).open("w", newline="") as handle:
            handle.write(",".join(header) + "\n")
            for row in rows:
                handle.write(",".join(cell(v) for v in row) + "\n")
    except OSError as exc:
        raise DatasetIOError(f"cannot write {path}: {exc}") from exc


def config_hash(config):
    return hashlib.sha256(dumps(config).encode()).hexdigest()
