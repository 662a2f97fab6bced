"""Stream sources: delimited files and seeded synthetic drift generators.

Every source yields :class:`Sample` records one at a time, so a consumer
never holds more than the current sample in memory.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .errors import DataError, SchemaError

# Samples are drawn in fixed-size blocks; the block size is part of the
# generator contract because it fixes the order of random draws.
BLOCK = 256


@dataclass
class Sample:
    index: int
    x: np.ndarray
    target: np.ndarray | None = None
    label: str | None = None


@dataclass
class StreamSpec:
    """Where samples come from and how to read them.

    ``source`` is either a path to a delimited file or the name of a
    synthetic generator (``abrupt``, ``recurring``, ``sparse``); ``params``
    holds generator keyword arguments.
    """

    source: str
    params: dict = field(default_factory=dict)
    inputs: list[str] | None = None
    targets: list[str] | None = None
    limit: int | None = None
    seed: int = 0
    mode: str = "regression"
    classes: list[str] | None = None
    delimiter: str = ","

    @property
    def synthetic(self):
        return self.source in GENERATORS


def _parse_float(text, row, column):
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"row {row}, column {column!r}: cannot parse {text!r} as a number") from None
    if not np.isfinite(value):
        raise DataError(f"row {row}, column {column!r}: non-finite value {text!r}")
    return value


def scan_classes(path, column, delimiter=","):
    """Sorted distinct labels of one column; used to size the one-hot targets."""
    with open(path, newline="") as handle:
        reader = csv.DictReader(handle, delimiter=delimiter)
        if reader.fieldnames is None or column not in reader.fieldnames:
            raise SchemaError(f"target column {column!r} not found in {path}")
        return sorted({row[column].strip() for row in reader})


def ingest(spec: StreamSpec, require_target: bool = True) -> Iterator[Sample]:
    """Read samples from a delimited file with a header row.

    Error messages number rows from 1 for the first line after the header;
    blank lines are skipped and do not count towards ``limit``.  In classification
    mode the single target column holds labels that are one-hot encoded
    against ``spec.classes`` (scanned from the file when not given).
    """
    path = spec.source
    targets = list(spec.targets or [])
    if require_target and not targets:
        raise SchemaError("no target column given")
    if spec.mode == "classification":
        if len(targets) != 1:
            raise SchemaError("classification needs exactly one label column")
        classes = list(spec.classes) if spec.classes else scan_classes(path, targets[0], spec.delimiter)
        class_index = {c: k for k, c in enumerate(classes)}

    with open(path, newline="") as handle:
        reader = csv.reader(handle, delimiter=spec.delimiter)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        missing = [t for t in targets if t not in header]
        if missing and require_target:
            raise SchemaError(f"target column(s) {missing} not in header {header}")
        present_targets = [t for t in targets if t in header]
        inputs = list(spec.inputs) if spec.inputs else [h for h in header if h not in targets]
        unknown = [c for c in inputs if c not in header]
        if unknown:
            raise SchemaError(f"input column(s) {unknown} not in header {header}")
        if not inputs:
            raise SchemaError("no input columns")
        in_pos = [header.index(c) for c in inputs]
        out_pos = [header.index(c) for c in present_targets]

        index = 0
        for row_no, row in enumerate(reader, start=1):
            if spec.limit is not None and index >= spec.limit:
                return
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise DataError(f"row {row_no}: expected {len(header)} fields, found {len(row)}")
            x = np.array([_parse_float(row[p], row_no, header[p]) for p in in_pos])
            target = label = None
            if out_pos:
                if spec.mode == "classification":
                    label = row[out_pos[0]].strip()
                    if label not in class_index:
                        raise DataError(f"row {row_no}: unknown class label {label!r}")
                    target = np.zeros(len(class_index))
                    target[class_index[label]] = 1.0
                else:
                    target = np.array([_parse_float(row[p], row_no, header[p]) for p in out_pos])
            yield Sample(index, x, target, label)
            index += 1


# -- synthetic generators ---------------------------------------------------

@dataclass
class SyntheticStream:
    """A seeded generator plus the ground truth needed to check it."""

    name: str
    length: int
    n_inputs: int
    n_outputs: int
    blocks: object  # callable: rng -> (X, Y, concept) for one block
    seed: int
    truth: dict = field(default_factory=dict)
    schedule: list = field(default_factory=list)

    def __iter__(self) -> Iterator[Sample]:
        rng = np.random.default_rng([self.seed, 1])
        index = 0
        while index < self.length:
            X, Y = self.blocks(rng, index)
            for x, y in zip(X, Y):
                if index >= self.length:
                    return
                yield Sample(index, x, y)
                index += 1

    def arrays(self):
        """Materialise the stream as ``(X, Y)``; only for small streams."""
        X = np.empty((self.length, self.n_inputs))
        Y = np.empty((self.length, self.n_outputs))
        for s in self:
            X[s.index], Y[s.index] = s.x, s.target
        return X, Y

    def concept_at(self, index):
        """Name of the concept that generated sample ``index``."""
        for start, stop, name in self.schedule:
            if start <= index < stop:
                return name
        raise IndexError(index)


def _phases(lengths, names):
    schedule, start = [], 0
    for length, name in zip(lengths, names):
        schedule.append((start, start + int(length), name))
        start += int(length)
    return schedule, start


def _phase_ids(schedule, start, count):
    idx = np.arange(start, start + count)
    ids = np.zeros(count, dtype=int)
    for k, (lo, hi, _) in enumerate(schedule):
        ids[(idx >= lo) & (idx < hi)] = k
    return ids


def abrupt(seed=0, length=1200, n_inputs=5, switches=(600,), noise=0.05, n_clusters=3,
           spread=2.0, jitter=0.2) -> SyntheticStream:
    """Piecewise linear map whose coefficients jump at the ``switches`` steps.

    Inputs come from a fixed mixture of ``n_clusters`` Gaussian clusters; a
    new coefficient vector is drawn for every segment.
    """
    setup = np.random.default_rng([seed, 0])
    centers = setup.normal(0.0, spread, size=(n_clusters, n_inputs))
    bounds = [0, *sorted(int(s) for s in switches), length]
    coefs = setup.normal(0.0, 1.0, size=(len(bounds) - 1, n_inputs))
    schedule, _ = _phases(np.diff(bounds), [f"segment{k}" for k in range(len(bounds) - 1)])

    def blocks(rng, start):
        which = rng.integers(0, n_clusters, size=BLOCK)
        X = centers[which] + jitter * rng.normal(size=(BLOCK, n_inputs))
        seg = _phase_ids(schedule, start, BLOCK)
        Y = np.einsum("ij,ij->i", X, coefs[np.minimum(seg, len(coefs) - 1)])
        Y += noise * rng.normal(size=BLOCK)
        return X, Y[:, None]

    return SyntheticStream("abrupt", length, n_inputs, 1, blocks, seed,
                           truth={"centers": centers, "coefficients": coefs, "switches": bounds[1:-1]},
                           schedule=schedule)


def recurring(seed=0, phases=(400, 400, 400), n_inputs=8, separation=4.0, jitter=0.08, noise=0.05,
              rank=3, scale=1.0) -> SyntheticStream:
    """Two Gaussian blobs, each with its own linear concept, visited A, B, A, ...

    Phase ``k`` draws from blob A when ``k`` is even and blob B otherwise.
    Each blob is elongated along ``rank`` latent directions (spread
    ``scale``) with isotropic ``jitter`` on top.
    """
    setup = np.random.default_rng([seed, 0])
    center_a = setup.normal(0.0, 1.0, size=n_inputs)
    direction = setup.normal(0.0, 1.0, size=n_inputs)
    center_b = center_a + separation * direction / np.linalg.norm(direction)
    centers = np.stack([center_a, center_b])
    loadings = setup.normal(0.0, 1.0, size=(2, rank, n_inputs)) / np.sqrt(n_inputs)
    coefs = setup.normal(0.0, 1.0, size=(2, n_inputs))
    offsets = setup.normal(0.0, 1.0, size=2)
    names = ["A" if k % 2 == 0 else "B" for k in range(len(phases))]
    schedule, length = _phases(phases, names)

    def blocks(rng, start):
        blob = _phase_ids(schedule, start, BLOCK) % 2
        latent = scale * rng.normal(size=(BLOCK, rank))
        X = centers[blob] + np.einsum("ir,irj->ij", latent, loadings[blob])
        X += jitter * rng.normal(size=(BLOCK, n_inputs))
        Y = np.einsum("ij,ij->i", X - centers[blob], coefs[blob]) + offsets[blob]
        Y += noise * rng.normal(size=BLOCK)
        return X, Y[:, None]

    return SyntheticStream("recurring", length, n_inputs, 1, blocks, seed,
                           truth={"centers": centers, "loadings": loadings, "coefficients": coefs,
                                  "offsets": offsets},
                           schedule=schedule)


def sparse(seed=0, length=2000, n_inputs=20, informative=5, noise=0.1, n_clusters=4, spread=3.0,
           jitter=0.3) -> SyntheticStream:
    """Linear target on ``informative`` of ``n_inputs`` features plus Gaussian noise.

    Inputs are drawn from a mixture of Gaussian clusters.  The informative
    indices and their coefficients are stored in ``truth``.
    """
    if not 0 < informative <= n_inputs:
        raise DataError("need 0 < informative <= n_inputs")
    setup = np.random.default_rng([seed, 0])
    support = np.sort(setup.choice(n_inputs, size=informative, replace=False))
    coef = setup.uniform(0.5, 1.5, size=informative) * setup.choice([-1.0, 1.0], size=informative)
    weights = np.zeros(n_inputs)
    weights[support] = coef
    centers = setup.normal(0.0, spread, size=(n_clusters, n_inputs))

    def blocks(rng, start):
        which = rng.integers(0, n_clusters, size=BLOCK)
        X = centers[which] + jitter * rng.normal(size=(BLOCK, n_inputs))
        Y = X @ weights + noise * rng.normal(size=BLOCK)
        return X, Y[:, None]

    return SyntheticStream("sparse", length, n_inputs, 1, blocks, seed,
                           truth={"support": support, "weights": weights, "centers": centers},
                           schedule=[(0, length, "sparse")])


GENERATORS = {"abrupt": abrupt, "recurring": recurring, "sparse": sparse}


def synth(name, params=None, seed=0) -> SyntheticStream:
    if name not in GENERATORS:
        raise DataError(f"unknown generator {name!r}; choose from {sorted(GENERATORS)}")
    try:
        return GENERATORS[name](seed=seed, **(params or {}))
    except TypeError as exc:
        raise DataError(f"bad parameters for generator {name!r}: {exc}") from None


def open_stream(spec: StreamSpec, require_target: bool = True) -> Iterator[Sample]:
    """Samples described by ``spec``, honouring ``limit``."""
    if spec.synthetic:
        stream = iter(synth(spec.source, spec.params, spec.seed))
        return stream if spec.limit is None else itertools.islice(stream, spec.limit)
    return ingest(spec, require_target=require_target)


def write_csv(path, stream, input_names=None, target_names=None, delimiter=","):
    """Write samples to a delimited file with a header; returns the row count."""
    rows = 0
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, delimiter=delimiter)
        for sample in stream:
            if rows == 0:
                n = len(sample.x)
                m = 0 if sample.target is None else len(sample.target)
                input_names = input_names or [f"x{j + 1}" for j in range(n)]
                target_names = target_names or ([f"y{o + 1}" for o in range(m)] if m > 1 else ["y"][:m])
                writer.writerow([*input_names, *target_names])
            values = list(sample.x) + ([] if sample.target is None else list(sample.target))
            writer.writerow([repr(float(v)) for v in values])
            rows += 1
    return rows
