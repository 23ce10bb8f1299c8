"""Flat ``key = value`` configuration files.

Example::

    # rotating run
    dimension = 3
    drift = J
    epsilon = 0.5
    tau = 0.01
    horizon = 1
    alpha0.ball_radius = 1
    alpha0.count = 50
    alpha0.seed = 0
    mu0.file = mu0.txt

``drift`` is either ``J`` or ``d*d`` numbers in row-major order separated by
commas (``;`` may separate rows). Measure files hold one atom per line:
``d`` coordinates followed by the weight, whitespace separated.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import entropic_ot as eot
from .dynamics import BallSource, DriftMatrix, SimulationConfig, make_J
from .errors import MeasureError, ParseError, UnknownKey, ValidationError
from .measures import DiscreteMeasure, new_discrete

SCALAR_KEYS = {
    "dimension", "drift", "epsilon", "tau", "horizon",
    "sinkhorn.tol", "sinkhorn.max_iter", "warm_start", "snapshot_stride",
}
SOURCE_FIELDS = ("file", "ball_radius", "count", "seed")
KNOWN_KEYS = SCALAR_KEYS | {f"{m}.{f}" for m in ("alpha0", "mu0") for f in SOURCE_FIELDS}

DEFAULTS = {
    "sinkhorn.tol": eot.DEFAULT_TOL,
    "sinkhorn.max_iter": eot.DEFAULT_MAX_ITER,
    "warm_start": True,
    "snapshot_stride": 1,
}


@dataclass(frozen=True)
class FileSource:
    """Initial data read from a measure file."""
    path: str

    def build(self, dim):
        m = read_measure(self.path)
        if m.dim != dim:
            raise ValidationError(str(self.path), f"measure has dimension {m.dim}, expected {dim}")
        return m


def read_measure(path) -> DiscreteMeasure:
    pts, wts = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                vals = [float(t) for t in line.split()]
            except ValueError:
                raise ParseError(lineno, f"non-numeric entry in {path}") from None
            if len(vals) < 2:
                raise ParseError(lineno, "need coordinates followed by a weight")
            pts.append(vals[:-1])
            wts.append(vals[-1])
    if not pts:
        raise ParseError(0, f"{path} contains no atoms")
    if len({len(p) for p in pts}) != 1:
        raise ParseError(0, f"{path}: atoms have different dimensions")
    try:
        return new_discrete(np.array(pts), np.array(wts))
    except MeasureError as exc:
        raise ValidationError(str(path), str(exc)) from exc


def write_measure(m: DiscreteMeasure, path):
    with open(path, "w", encoding="utf-8") as fh:
        for p, w in zip(m.points, m.weights):
            fh.write(" ".join(format(float(v), ".17g") for v in (*p, w)) + "\n")


def parse_lines(text):
    """Parse config text into a ``{key: (value, line)}`` dict."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(lineno, f"expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ParseError(lineno, "empty key")
        if key not in KNOWN_KEYS:
            raise UnknownKey(key, lineno)
        if key in out:
            raise ParseError(lineno, f"duplicate key {key!r}")
        out[key] = (value, lineno)
    return out


def _number(key, value, kind=float):
    try:
        x = float(value)
    except ValueError:
        raise ValidationError(key, f"must be a number, got {value!r}") from None
    if kind is int:
        if not math.isfinite(x) or x != int(x):
            raise ValidationError(key, f"must be an integer, got {value!r}")
        return int(x)
    return x


def _bool(key, value):
    v = value.lower()
    if v in ("true", "yes", "1", "on"):
        return True
    if v in ("false", "no", "0", "off"):
        return False
    raise ValidationError(key, f"must be true or false, got {value!r}")


def _drift(value, dim):
    if value.strip() == "J":
        if dim != 3:
            raise ValidationError("drift", "J requires dimension = 3")
        return make_J()
    tokens = [t for t in value.replace(";", ",").split(",") if t.strip()]
    if len(tokens) != dim * dim:
        raise ValidationError("drift", f"expected {dim * dim} entries, got {len(tokens)}")
    return DriftMatrix(np.array([_number("drift", t) for t in tokens]).reshape(dim, dim))


def _source(name, entries, base_dir):
    given = {f: entries[f"{name}.{f}"][0] for f in SOURCE_FIELDS if f"{name}.{f}" in entries}
    if "file" in given:
        extra = sorted(set(given) - {"file"})
        if extra:
            raise ValidationError(name, f"'file' cannot be combined with {', '.join(extra)}")
        path = Path(given["file"])
        if not path.is_absolute():
            path = base_dir / path
        return FileSource(str(path))
    missing = [f for f in ("ball_radius", "count", "seed") if f not in given]
    if missing:
        raise ValidationError(name, f"needs {name}.file or ball_radius, count and seed "
                                    f"(missing {', '.join(missing)})")
    radius = _number(f"{name}.ball_radius", given["ball_radius"])
    if not radius > 0:
        raise ValidationError(f"{name}.ball_radius", "must be positive")
    count = _number(f"{name}.count", given["count"], int)
    if count < 1:
        raise ValidationError(f"{name}.count", "must be >= 1")
    return BallSource(radius, count, _number(f"{name}.seed", given["seed"], int))


def config_from_text(text, base_dir=".") -> SimulationConfig:
    entries = parse_lines(text)
    for key in ("dimension", "drift", "epsilon", "tau", "horizon"):
        if key not in entries:
            raise ValidationError(key, "required")

    def get(key):
        if key in entries:
            return entries[key][0]
        return DEFAULTS[key]

    dim = _number("dimension", get("dimension"), int)
    if dim < 1:
        raise ValidationError("dimension", "must be >= 1")
    tol = get("sinkhorn.tol")
    max_iter = get("sinkhorn.max_iter")
    warm = get("warm_start")
    stride = get("snapshot_stride")
    return SimulationConfig(
        dimension=dim,
        drift=_drift(get("drift"), dim),
        epsilon=_number("epsilon", get("epsilon")),
        tau=_number("tau", get("tau")),
        horizon=_number("horizon", get("horizon")),
        alpha0=_source("alpha0", entries, Path(base_dir)),
        mu0=_source("mu0", entries, Path(base_dir)),
        tol=_number("sinkhorn.tol", tol) if isinstance(tol, str) else tol,
        max_iter=_number("sinkhorn.max_iter", max_iter, int) if isinstance(max_iter, str) else max_iter,
        warm_start=_bool("warm_start", warm) if isinstance(warm, str) else warm,
        snapshot_stride=_number("snapshot_stride", stride, int) if isinstance(stride, str) else stride,
    )


def load_config(path) -> SimulationConfig:
    """Read and validate a ``.cfg`` file, filling in defaults.

    Relative measure-file paths are resolved against the config's directory.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    return config_from_text(text, path.parent)


def with_seed(config: SimulationConfig, seed: int) -> SimulationConfig:
    """Override ball-source seeds: alpha0 gets ``seed``, mu0 gets ``seed + 1``."""
    changes = {}
    if isinstance(config.alpha0, BallSource):
        changes["alpha0"] = dataclasses.replace(config.alpha0, seed=int(seed))
    if isinstance(config.mu0, BallSource):
        changes["mu0"] = dataclasses.replace(config.mu0, seed=int(seed) + 1)
    return dataclasses.replace(config, **changes)


def _source_items(name, src):
    if isinstance(src, BallSource):
        return {f"{name}.ball_radius": src.radius, f"{name}.count": src.count,
                f"{name}.seed": src.seed}
    if isinstance(src, FileSource):
        return {f"{name}.file": src.path}
    raise ValueError(f"{name} is an in-memory measure and has no config representation")


def config_to_dict(config: SimulationConfig) -> dict:
    """Flat key/value view of a config, using the same keys as the file format."""
    out = {
        "dimension": config.dimension,
        "drift": [list(map(float, row)) for row in config.drift.matrix],
        "epsilon": config.epsilon,
        "tau": config.tau,
        "horizon": config.horizon,
    }
    out.update(_source_items("alpha0", config.alpha0))
    out.update(_source_items("mu0", config.mu0))
    out.update({"sinkhorn.tol": config.tol, "sinkhorn.max_iter": config.max_iter,
                "warm_start": config.warm_start,
                "snapshot_stride": config.snapshot_stride})
    return out


def dump_config(config: SimulationConfig) -> str:
    lines = []
    for key, value in config_to_dict(config).items():
        if key == "drift":
            value = ",".join(format(v, ".17g") for row in value for v in row)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = format(value, ".17g")
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
