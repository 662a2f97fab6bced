"""Prequential, holdout and shuffled-fold evaluation plus metrics files.

A report is a list of per-step records (plain dicts with a fixed key order)
and a summary.  The summary is a pure function of the records and the
measured wall time, so a reloaded metrics directory reproduces it exactly.

Files written by :class:`MetricsWriter`:

``metrics.jsonl``
    one record per evaluated step, keys in :data:`RECORD_FIELDS` order.
``events.jsonl``
    one structural event per line, keys :data:`EVENT_FIELDS` followed by
    the event's numeric values in name order.  With ``inline_events`` the
    events are instead embedded in each step record under ``events``.
``summary.json``
    keys in :data:`SUMMARY_FIELDS` order.
"""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import DataError
from .learner import Learner, LearnerConfig
from .streams import Sample

RECORD_FIELDS = ("step", "phase", "prediction", "target", "abs_error", "admitted", "n_clouds",
                 "n_features", "mask")
EVENT_FIELDS = ("step", "kind", "cloud_id")
SUMMARY_FIELDS = ("protocol", "samples", "rmse", "ndei", "target_std", "accuracy", "final_clouds",
                  "admitted_fraction", "wall_time", "faults", "unstable")

# a run is unstable when its RMSE exceeds this multiple of the target spread
DIVERGENCE_FACTOR = 1e3


def is_unstable(rmse, target_std):
    if not math.isfinite(rmse):
        return True
    return rmse > DIVERGENCE_FACTOR * max(target_std, 1e-12)


class _Tally:
    """Running error and target moments over the scored records."""

    def __init__(self):
        self.samples = 0
        self.values = 0
        self.sq_error = 0.0
        self.hits = 0
        self.admitted = 0
        self.trained = 0
        self.t_count = 0
        self.t_mean = 0.0
        self.t_m2 = 0.0
        self.last = None

    def add(self, record):
        self.last = record
        if record["phase"] == "train" or record["phase"] == "prequential":
            self.trained += 1
            self.admitted += int(record["admitted"])
        if record["phase"] == "train":
            return
        self.samples += 1
        pred, target = record["prediction"], record["target"]
        for p, t in zip(pred, target):
            self.sq_error += (p - t) * (p - t)
            self.values += 1
            self.t_count += 1
            delta = t - self.t_mean
            self.t_mean += delta / self.t_count
            self.t_m2 += delta * (t - self.t_mean)
        if len(target) > 1:
            self.hits += int(np.argmax(pred) == np.argmax(target))

    def summary(self, protocol, wall_time, faults, classification):
        if self.samples == 0:
            raise DataError("nothing was evaluated: the stream (or its scored span) is empty")
        rmse = math.sqrt(self.sq_error / self.values)
        std = math.sqrt(max(self.t_m2 / self.t_count, 0.0))
        ndei = rmse / std if std > 0 else math.inf
        out = {
            "protocol": protocol,
            "samples": self.samples,
            "rmse": rmse,
            "ndei": ndei,
            "target_std": std,
            "accuracy": self.hits / self.samples if classification else None,
            "final_clouds": self.last["n_clouds"],
            "admitted_fraction": self.admitted / self.trained if self.trained else 0.0,
            "wall_time": wall_time,
            "faults": faults,
            "unstable": is_unstable(rmse, std),
        }
        return {k: out[k] for k in SUMMARY_FIELDS}


@dataclass
class PrequentialReport:
    records: list
    summary: dict
    events: list = field(default_factory=list)

    def recompute(self):
        """Summary rebuilt from the records plus the stored wall time and fault count."""
        tally = _Tally()
        for r in self.records:
            tally.add(r)
        s = self.summary
        return tally.summary(s["protocol"], s["wall_time"], s["faults"], s["accuracy"] is not None)


def _record(report, phase, mask_cache):
    # the bitstring only changes on a triggered selection step
    key = report.active.tobytes()
    if key not in mask_cache:
        mask_cache.clear()
        mask_cache[key] = report.mask
    return {
        "step": report.step,
        "phase": phase,
        "prediction": [float(v) for v in report.prediction],
        "target": [float(v) for v in report.target],
        "abs_error": report.abs_error,
        "admitted": report.admitted,
        "n_clouds": report.n_clouds,
        "n_features": report.n_features,
        "mask": mask_cache[key],
    }


def _event_record(event):
    head = {k: event[k] for k in EVENT_FIELDS}
    head.update({k: event[k] for k in sorted(event) if k not in EVENT_FIELDS})
    return head


class _Run:
    """Shared bookkeeping for one evaluation: tally, sinks and retained records."""

    def __init__(self, learner, sink, keep_records):
        self.learner = learner
        self.sink = sink
        self.keep = keep_records
        self.tally = _Tally()
        self.records = []
        self.events = []
        self.masks = {}
        self.start = time.perf_counter()

    def emit(self, record, events=()):
        events = [_event_record(e) for e in events]
        self.tally.add(record)
        if self.sink is not None:
            self.sink.write(record, events)
        if self.keep:
            self.records.append(record)
            self.events.extend(events)

    def train(self, sample: Sample, phase):
        if sample.target is None:
            raise DataError(f"sample {sample.index} has no target")
        report = self.learner.train_step(sample.x, sample.target)
        self.emit(_record(report, phase, self.masks), report.events)

    def finish(self, protocol):
        wall = time.perf_counter() - self.start
        classification = self.learner.config.mode == "classification"
        summary = self.tally.summary(protocol, wall, self.learner.faults, classification)
        if self.sink is not None:
            self.sink.write_summary(summary)
        return PrequentialReport(self.records, summary, self.events)


def prequential(learner: Learner, samples: Iterable[Sample], sink=None, keep_records=True):
    """Test-then-train over every sample of the stream."""
    run = _Run(learner, sink, keep_records)
    for sample in samples:
        run.train(sample, "prequential")
    return run.finish("prequential")


def _frozen_record(learner, view, sample, masks):
    y = view.predict_one(sample.x)
    target = np.asarray(sample.target, dtype=float).reshape(-1)
    if target.shape != y.shape:
        raise DataError(f"sample {sample.index}: expected {y.shape[0]} targets, got {target.shape[0]}")
    active = learner.mask.active
    key = active.tobytes()
    if key not in masks:
        masks.clear()
        masks[key] = "".join("1" if a else "0" for a in active)
    return {
        "step": sample.index + 1,
        "phase": "test",
        "prediction": [float(v) for v in y],
        "target": [float(v) for v in target],
        "abs_error": float(np.mean(np.abs(target - y))),
        "admitted": False,
        "n_clouds": learner.n_clouds,
        "n_features": int(active.sum()),
        "mask": masks[key],
    }


def score(learner: Learner, samples: Iterable[Sample], sink=None, keep_records=True, run=None):
    """Score a stream with a frozen model; the learner is not modified."""
    own = run is None
    run = run or _Run(learner, sink, keep_records)
    view = learner.frozen()
    for sample in samples:
        if sample.target is None:
            raise DataError(f"sample {sample.index} has no target")
        run.emit(_frozen_record(learner, view, sample, run.masks))
    return run.finish("score") if own else run


def holdout(learner: Learner, samples: Iterable[Sample], train_size: int, sink=None,
            keep_records=True, verify_frozen=True):
    """Train on the first ``train_size`` samples, then score the rest frozen.

    Only the test span enters RMSE/NDEI.  With ``verify_frozen`` the
    learner's snapshot is compared before and after the test span.
    """
    if train_size < 1:
        raise DataError("holdout needs at least one training sample")
    run = _Run(learner, sink, keep_records)
    it = iter(samples)
    for k, sample in enumerate(it):
        run.train(sample, "train")
        if k + 1 >= train_size:
            break
    before = learner.snapshot() if verify_frozen else None
    score(learner, it, run=run)
    if verify_frozen and learner.snapshot() != before:
        raise RuntimeError("model state changed during the test span")
    return run.finish("holdout")


def cross_validate(config: LearnerConfig, X, Y, folds=10, repeats=5, seed=0):
    """Shuffled k-fold scores, each fold repeated with a fresh learner seed.

    Every training pass is a single pass over a shuffled copy of the
    training folds; the held-out fold is scored with the frozen model.
    Returns ``(rmse_per_run, ndei_per_run)`` of shape ``(repeats, folds)``.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float).reshape(len(X), -1)
    if not 2 <= folds <= len(X):
        raise DataError(f"need 2 <= folds <= {len(X)}")
    rmse = np.empty((repeats, folds))
    ndei = np.empty((repeats, folds))
    for r in range(repeats):
        rng = np.random.default_rng([seed, r])
        parts = np.array_split(rng.permutation(len(X)), folds)
        for f in range(folds):
            train = rng.permutation(np.concatenate([p for k, p in enumerate(parts) if k != f]))
            learner = Learner(config, seed=int(rng.integers(2**31)))
            for i in train:
                learner.train_step(X[i], Y[i])
            test = [Sample(int(i), X[i], Y[i]) for i in parts[f]]
            report = score(learner, test, keep_records=False)
            rmse[r, f] = report.summary["rmse"]
            ndei[r, f] = report.summary["ndei"]
    return rmse, ndei


# -- metrics files -------------------------------------------------------------

def _dump(obj):
    return json.dumps(obj, separators=(",", ":"))


class MetricsWriter:
    """Streams records, events and the summary into a directory."""

    def __init__(self, directory, inline_events=False):
        self.directory = os.fspath(directory)
        os.makedirs(self.directory, exist_ok=True)
        self.inline = inline_events
        self._metrics = open(os.path.join(self.directory, "metrics.jsonl"), "w")
        self._events = None if inline_events else open(os.path.join(self.directory, "events.jsonl"), "w")

    def write(self, record, events):
        if self.inline:
            record = {**record, "events": events}
        self._metrics.write(_dump(record) + "\n")
        if self._events is not None:
            for e in events:
                self._events.write(_dump(e) + "\n")

    def write_summary(self, summary):
        self.close()
        with open(os.path.join(self.directory, "summary.json"), "w") as handle:
            json.dump(summary, handle, indent=2)
            handle.write("\n")

    def close(self):
        for handle in (self._metrics, self._events):
            if handle is not None and not handle.closed:
                handle.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def load_report(directory) -> PrequentialReport:
    """Read a metrics directory back into a report."""
    directory = os.fspath(directory)
    records, events = [], []
    with open(os.path.join(directory, "metrics.jsonl")) as handle:
        for line in handle:
            record = json.loads(line)
            events.extend(record.pop("events", []))
            records.append(record)
    path = os.path.join(directory, "events.jsonl")
    if os.path.exists(path):
        with open(path) as handle:
            events.extend(json.loads(line) for line in handle)
    with open(os.path.join(directory, "summary.json")) as handle:
        summary = json.load(handle)
    return PrequentialReport(records, summary, events)
