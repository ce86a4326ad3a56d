"""Demonstration data model: timed trajectories, condition vectors and dataset I/O.

A dataset file is UTF-8 JSON lines. The first line is a header::

    {"header": {"dims": ["x", "y", "z"], "units": ["m", "m", "m"],
                "conditions": ["S0", "S1", "S2", "OBS"]}}

and every following line is one sample::

    {"t": 0.01, "v": [0.1, 0.2, 0.3], "c": {"S0": true, ...}, "demo": "d0"}

The ``demo`` key is optional; records without it belong to the stream ``demo0``.
A stream whose conditions change is split into one demonstration per constant run.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

DEFAULT_DT = 0.01


class DatasetError(ValueError):
    """Raised for malformed or inconsistent dataset files."""


class ParseError(DatasetError):
    pass


class SchemaError(DatasetError):
    pass


class ValidationError(DatasetError):
    pass


@dataclass(frozen=True)
class TimedSample:
    time: float
    values: tuple[float, ...]

    def __post_init__(self):
        if not math.isfinite(self.time) or self.time < 0:
            raise ValidationError(f"sample time must be finite and >= 0, got {self.time}")
        if len(self.values) < 1:
            raise ValidationError("sample needs at least one value")


@dataclass(frozen=True)
class ConditionVector:
    """Named binary features. Name order is the order declared by the dataset."""

    names: tuple[str, ...]
    values: tuple[bool, ...]

    def __post_init__(self):
        if len(self.names) != len(self.values):
            raise SchemaError("condition names and values differ in length")
        if len(set(self.names)) != len(self.names):
            raise SchemaError(f"duplicate condition names in {self.names}")
        if any(not isinstance(n, str) or not n for n in self.names):
            raise SchemaError("condition names must be non-empty strings")
        object.__setattr__(self, "values", tuple(bool(v) for v in self.values))

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, bool], names: Sequence[str] | None = None):
        names = tuple(mapping) if names is None else tuple(names)
        missing = [n for n in names if n not in mapping]
        if missing:
            raise SchemaError(f"missing conditions {missing}")
        extra = [n for n in mapping if n not in names]
        if extra:
            raise SchemaError(f"unexpected conditions {extra}")
        return cls(names, tuple(bool(mapping[n]) for n in names))

    def __getitem__(self, name: str) -> bool:
        try:
            return self.values[self.names.index(name)]
        except ValueError:
            raise KeyError(name) from None

    def __contains__(self, name: object) -> bool:
        return name in self.names

    def as_dict(self) -> dict[str, bool]:
        return dict(zip(self.names, self.values))

    def replace(self, **changes: bool) -> "ConditionVector":
        d = self.as_dict()
        for k, v in changes.items():
            if k not in d:
                raise KeyError(k)
            d[k] = bool(v)
        return ConditionVector(self.names, tuple(d[n] for n in self.names))

    def __str__(self) -> str:
        return " ".join(f"{n}={int(v)}" for n, v in zip(self.names, self.values))


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Samples stored column-wise: ``times`` has shape (n,), ``values`` (n, d)."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.array(self.times, dtype=float).reshape(-1)
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values.reshape(-1, 1)
        if values.ndim != 2 or values.shape[0] != times.shape[0]:
            raise ValidationError(
                f"values shape {values.shape} does not match {times.shape[0]} sample times"
            )
        if values.shape[1] < 1:
            raise ValidationError("trajectory needs at least one dimension")
        if times.size and (not np.all(np.isfinite(times)) or times[0] < 0):
            raise ValidationError("sample times must be finite and non-negative")
        bad = np.flatnonzero(np.diff(times) <= 0)
        if bad.size:
            raise ValidationError(f"sample times not strictly increasing at index {bad[0] + 1}")
        times.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_samples(cls, samples: Iterable[TimedSample]) -> "Trajectory":
        samples = list(samples)
        if not samples:
            raise ValidationError("trajectory needs at least one sample")
        d = len(samples[0].values)
        if any(len(s.values) != d for s in samples):
            raise SchemaError("inconsistent dimension count across samples")
        return cls(np.array([s.time for s in samples]), np.array([s.values for s in samples]))

    @classmethod
    def uniform(cls, values, dt: float, t0: float = 0.0) -> "Trajectory":
        values = np.asarray(values, dtype=float)
        n = values.shape[0]
        return cls(t0 + dt * np.arange(n), values)

    @property
    def samples(self) -> list[TimedSample]:
        return [TimedSample(float(t), tuple(float(x) for x in v)) for t, v in zip(self.times, self.values)]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0]) if len(self) else 0.0

    @property
    def dt(self) -> float:
        """Mean sample spacing."""
        if len(self) < 2:
            raise ValidationError("sample spacing undefined for fewer than 2 samples")
        return self.duration / (len(self) - 1)

    def __len__(self) -> int:
        return self.times.shape[0]

    def __getitem__(self, item: slice) -> "Trajectory":
        if not isinstance(item, slice):
            raise TypeError("trajectories are sliced, not indexed; use .values[i]")
        return Trajectory(self.times[item], self.values[item])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Trajectory):
            return NotImplemented
        return np.array_equal(self.times, other.times) and np.array_equal(self.values, other.values)

    __hash__ = None

    def is_uniform(self, dt: float | None = None, rtol: float = 1e-9) -> bool:
        if len(self) < 2:
            return False
        steps = np.diff(self.times)
        ref = steps.mean() if dt is None else dt
        return bool(np.all(np.abs(steps - ref) <= rtol * max(ref, 1.0)))

    def concat(self, other: "Trajectory") -> "Trajectory":
        return Trajectory(
            np.concatenate([self.times, other.times]), np.vstack([self.values, other.values])
        )


@dataclass(frozen=True, eq=False)
class Demonstration:
    trajectory: Trajectory
    conditions: ConditionVector
    demo_id: str = "demo0"

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Demonstration):
            return NotImplemented
        return (
            self.demo_id == other.demo_id
            and self.conditions == other.conditions
            and self.trajectory == other.trajectory
        )

    __hash__ = None


@dataclass(frozen=True)
class DatasetHeader:
    dims: tuple[str, ...]
    conditions: tuple[str, ...]
    units: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if not self.dims:
            raise SchemaError("header must declare at least one dimension")
        if self.units and len(self.units) != len(self.dims):
            raise SchemaError("header units and dims differ in length")
        if len(set(self.conditions)) != len(self.conditions):
            raise SchemaError("duplicate condition names in header")

    def to_json(self) -> dict:
        return {"dims": list(self.dims), "units": list(self.units), "conditions": list(self.conditions)}


def split_on_condition_change(stream, demo_id: str = "demo") -> list[Demonstration]:
    """Cut a (sample, conditions) stream wherever the condition vector changes."""
    stream = list(stream)
    if not stream:
        raise ValidationError("cannot split an empty stream")
    runs: list[list] = [[stream[0]]]
    for prev, cur in zip(stream, stream[1:]):
        if cur[1] != prev[1]:
            runs.append([cur])
        else:
            runs[-1].append(cur)
    return [
        Demonstration(
            Trajectory.from_samples(s for s, _ in run),
            run[0][1],
            demo_id if len(runs) == 1 else f"{demo_id}.{k}",
        )
        for k, run in enumerate(runs)
    ]


def resample_uniform(trajectory: Trajectory, dt: float = DEFAULT_DT) -> Trajectory:
    """Linearly interpolate onto a uniform grid spanning the first to the last sample.

    The grid has ``round(duration / dt) + 1`` points, so the realised spacing can differ
    from ``dt`` by less than half a step spread over the whole trajectory.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if len(trajectory) < 2:
        raise ValidationError("resampling needs at least 2 samples")
    duration = trajectory.duration
    if dt > duration:
        raise ValueError(f"dt={dt} exceeds trajectory duration {duration}")
    if trajectory.is_uniform(dt):
        return trajectory
    n = int(round(duration / dt)) + 1
    t = np.linspace(trajectory.times[0], trajectory.times[-1], n)
    v = np.column_stack([np.interp(t, trajectory.times, col) for col in trajectory.values.T])
    v[0] = trajectory.values[0]
    v[-1] = trajectory.values[-1]
    return Trajectory(t, v)


def _iter_records(path: Path) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise ParseError(f"{path}:{lineno}: record must be a JSON object")
            yield lineno, rec


def read_header(path) -> DatasetHeader | None:
    for lineno, rec in _iter_records(Path(path)):
        return _parse_header(path, lineno, rec)
    return None


def _parse_header(path, lineno: int, rec: dict) -> DatasetHeader:
    if "header" not in rec:
        raise ParseError(f"{path}:{lineno}: first record must be a header")
    h = rec["header"]
    try:
        return DatasetHeader(
            tuple(h["dims"]), tuple(h.get("conditions", ())), tuple(h.get("units", ()))
        )
    except (KeyError, TypeError) as exc:
        raise ParseError(f"{path}:{lineno}: malformed header ({exc})") from None


def load_dataset(path) -> list[Demonstration]:
    """Read a dataset file. An empty file yields an empty list."""
    path = Path(path)
    records = _iter_records(path)
    first = next(records, None)
    if first is None:
        return []
    header = _parse_header(path, *first)
    d = len(header.dims)
    streams: dict[str, list] = {}
    for lineno, rec in records:
        if "header" in rec:
            raise ParseError(f"{path}:{lineno}: duplicate header")
        try:
            t, v, c = rec["t"], rec["v"], rec["c"]
        except KeyError as exc:
            raise ParseError(f"{path}:{lineno}: missing field {exc}") from None
        if not isinstance(v, list) or len(v) != d:
            raise SchemaError(f"{path}:{lineno}: expected {d} values, got {v!r}")
        if not isinstance(c, dict) or set(c) != set(header.conditions):
            raise SchemaError(
                f"{path}:{lineno}: condition names {sorted(c) if isinstance(c, dict) else c!r} "
                f"do not match header {list(header.conditions)}"
            )
        try:
            sample = TimedSample(float(t), tuple(float(x) for x in v))
        except (TypeError, ValueError) as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from None
        cond = ConditionVector.from_mapping(c, header.conditions)
        stream = streams.setdefault(str(rec.get("demo", "demo0")), [])
        if stream and sample.time <= stream[-1][0].time:
            raise ValidationError(f"{path}:{lineno}: time {sample.time} is not increasing")
        stream.append((sample, cond))
    demos: list[Demonstration] = []
    for demo_id, stream in streams.items():
        demos.extend(split_on_condition_change(stream, demo_id))
    return demos


def save_dataset(demos: Sequence[Demonstration], path, header: DatasetHeader | None = None) -> None:
    demos = list(demos)
    if header is None:
        if not demos:
            raise ValueError("need a header to save an empty dataset")
        d = demos[0].trajectory.dim
        header = DatasetHeader(tuple(f"q{i}" for i in range(d)), demos[0].conditions.names)
    ids = [demo.demo_id for demo in demos]
    if len(set(ids)) != len(ids):
        raise ValueError("demo ids must be unique to round-trip")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"header": header.to_json()}) + "\n")
        for demo in demos:
            if demo.conditions.names != header.conditions:
                raise SchemaError(f"demo {demo.demo_id} conditions do not match header")
            if demo.trajectory.dim != len(header.dims):
                raise SchemaError(f"demo {demo.demo_id} has wrong dimension count")
            c = demo.conditions.as_dict()
            for t, v in zip(demo.trajectory.times, demo.trajectory.values):
                rec = {"t": float(t), "v": [float(x) for x in v], "c": c, "demo": demo.demo_id}
                fh.write(json.dumps(rec) + "\n")
