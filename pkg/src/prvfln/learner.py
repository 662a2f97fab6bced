"""The evolving learner: one training step per stream sample.

Step order per sample: predict, entropy gate (rejected samples stop here),
feature selection, cloud growing or assignment, relevance/prune/recall, and
finally the recursive output-weight update on every active cloud.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
import struct
import warnings
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import _kernels as K
from . import _rows
from .active import EsemGateState, gate_decision
from .cloud import RandomParams, empty_bank, new_cloud, spatial_density
from .errors import ConfigError, DataError, ModelEmptyError, SchemaError, SnapshotChecksumError, \
    SnapshotError, SnapshotVersionError
from .output import PSI_INIT, new_node
from .output import empty_bank as empty_node_bank
from .selection import ErrorTrend, FeatureMask, gofs_full_step, gofs_partial_step, observe_partial, \
    feature_score
from .stats import RunningStats
from .stats import WelfordAccumulator
from .structure import CoherenceStats, recall_check

logger = logging.getLogger(__name__)

SNAPSHOT_MAGIC = b"PRVFLN"
SNAPSHOT_VERSION = 1

ALPHA1_RANGE = (0.001, 0.01)
ALPHA2_RANGE = (0.01, 0.1)


@dataclass
class LearnerConfig:
    alpha1: float = 0.005
    alpha2: float = 0.05
    delta_entropy: float = 0.5
    scope_low: float = -1.0
    scope_high: float = 1.0
    delta_fraction: float = 0.1
    feature_budget: int | None = None
    partial_mode: bool = False
    epsilon: float = 0.2
    mode: str = "regression"
    decay_rate: float = 1e-5
    warmup: int = 10
    min_lifespan: int = 10
    learning_rate: float = 0.2
    regularization: float = 0.01
    psi_init: float = PSI_INIT
    standardize: bool = True
    max_archive: int = 50
    max_clouds: int | None = None
    relevance_forgetting: float = 0.98
    selection_warmup: int = 100
    selection_decay: bool = True

    def validate(self):
        if self.mode not in ("regression", "classification"):
            raise ConfigError(f"mode must be 'regression' or 'classification', got {self.mode!r}")
        if not np.isfinite([self.scope_low, self.scope_high]).all() or self.scope_low > self.scope_high:
            raise ConfigError(f"invalid random scope [{self.scope_low}, {self.scope_high}]")
        if not 0.0 <= self.delta_entropy <= 1.0:
            raise ConfigError("delta_entropy must lie in [0, 1]")
        if not 0.0 < self.epsilon <= 1.0:
            raise ConfigError("epsilon must lie in (0, 1]")
        if self.feature_budget is not None and self.feature_budget < 1:
            raise ConfigError("feature_budget must be positive")
        if self.delta_fraction < 0 or self.decay_rate < 0 or self.psi_init <= 0:
            raise ConfigError("delta_fraction and decay_rate must be >= 0, psi_init > 0")
        if self.alpha1 < 0 or self.alpha2 < 0:
            raise ConfigError("growth thresholds must be non-negative")
        if self.warmup < 0 or self.min_lifespan < 2 or self.max_archive < 0:
            raise ConfigError("warmup >= 0, min_lifespan >= 2 and max_archive >= 0 required")
        if self.max_clouds is not None and self.max_clouds < 1:
            raise ConfigError("max_clouds must be positive")
        if self.learning_rate <= 0 or self.regularization <= 0:
            raise ConfigError("learning_rate and regularization must be positive")
        if not ALPHA1_RANGE[0] <= self.alpha1 <= ALPHA1_RANGE[1]:
            warnings.warn(f"alpha1={self.alpha1} outside the usual range {ALPHA1_RANGE}", stacklevel=2)
        if not ALPHA2_RANGE[0] <= self.alpha2 <= ALPHA2_RANGE[1]:
            warnings.warn(f"alpha2={self.alpha2} outside the usual range {ALPHA2_RANGE}", stacklevel=2)
        return self


@dataclass
class StepReport:
    step: int
    prediction: np.ndarray
    target: np.ndarray
    abs_error: float
    admitted: bool
    n_clouds: int
    n_features: int
    active: np.ndarray
    events: list = field(default_factory=list)

    @property
    def mask(self):
        """Feature mask as a 0/1 string."""
        return "".join("1" if a else "0" for a in self.active)


def draw_random_params(config: LearnerConfig, rng, n_inputs) -> RandomParams:
    """Input weights on the configured scope; recurrence weight and uncertainty radius."""
    if config.scope_low > config.scope_high:
        raise ConfigError(f"invalid random scope [{config.scope_low}, {config.scope_high}]")
    a = rng.uniform(config.scope_low, config.scope_high, size=n_inputs)
    lam = rng.uniform(0.0, 1.0)
    delta = rng.uniform(0.0, abs(config.scope_high) * config.delta_fraction)
    return RandomParams(a=a, b=np.zeros(n_inputs), lam=lam, delta=delta)


def draw_design_factors(rng, n_outputs):
    """Type-reduction factors q, one per output, drawn once per model."""
    return rng.uniform(0.0, 1.0, size=n_outputs)


def _flat(arr):
    # kernels write through these views, so a silent copy would lose updates
    if not arr.flags.c_contiguous:
        raise RuntimeError("state array lost contiguity")
    return arr.reshape(-1)


def _moments(acc: WelfordAccumulator):
    # banks are replaced, never resized, on structural change, so the flat
    # views can be memoised on the accumulator object itself
    views = acc.__dict__.get("_flat_views")
    if views is None:
        views = (_flat(acc.count), _flat(acc.mean_a), _flat(acc.mean_b), _flat(acc.m2_a),
                 _flat(acc.m2_b), _flat(acc.co_moment))
        acc._flat_views = views
    return views


def _life(stats: RunningStats):
    return (stats.count, stats.mean, stats.m2)


class Learner:
    """Single-pass evolving learner over a stream of ``(x, target)`` pairs.

    Parameters
    ----------
    config : LearnerConfig, optional
    seed : int
        Seeds the single generator behind every random draw, so
        ``(seed, config, stream)`` determines all predictions and events.
    """

    def __init__(self, config: LearnerConfig | None = None, seed: int = 0):
        self.config = (config or LearnerConfig()).validate()
        self.seed = int(seed)
        self.rng = np.random.default_rng(self.seed)
        self.n_inputs = None
        self.n_outputs = None
        self.step = 0
        self.faults = 0
        self.next_id = 0
        self.gate = EsemGateState(self.config.delta_entropy, self.config.warmup)
        self.trend = ErrorTrend()

    def __getstate__(self):
        # kernels hold flat views into the state arrays; pickling goes
        # through the snapshot so a copy never aliases stale views
        return {"snapshot": self.snapshot()}

    def __setstate__(self, state):
        self.__dict__.update(Learner.restore(state["snapshot"]).__dict__)

    # -- setup -------------------------------------------------------------

    def _init_shapes(self, n, m):
        self.n_inputs, self.n_outputs = n, m
        d = 2 * n + 1
        self.q = draw_design_factors(self.rng, m)
        self.q_mean = float(self.q.mean())
        self.clouds = empty_bank(n, m)
        self.nodes = empty_node_bank(d, m)
        self.archive = empty_bank(n, m)
        self.archive_nodes = empty_node_bank(d, m)
        self.mask = FeatureMask.full(n, min(self.config.feature_budget or n, n))
        self.stats = CoherenceStats.zeros(n, m)
        self.scaler = RunningStats.zeros((n,))

    @property
    def initialized(self):
        return self.n_inputs is not None

    @property
    def n_clouds(self):
        return len(self.clouds) if self.initialized else 0

    def _check(self, x, target=None):
        x = np.asarray(x, dtype=float).reshape(-1)
        # a finite sum is the cheap common case; overflow falls through to the exact test
        if not np.isfinite(x.sum()) and not np.all(np.isfinite(x)):
            raise DataError("non-finite input value")
        if self.initialized and x.shape[0] != self.n_inputs:
            raise SchemaError(f"expected {self.n_inputs} inputs, got {x.shape[0]}")
        if target is None:
            return x, None
        target = np.asarray(target, dtype=float).reshape(-1)
        if not np.isfinite(target.sum()) and not np.all(np.isfinite(target)):
            raise DataError("non-finite target value")
        if self.initialized and target.shape[0] != self.n_outputs:
            raise SchemaError(f"expected {self.n_outputs} targets, got {target.shape[0]}")
        return x, target

    def _scale(self, x, update=False):
        if not self.config.standardize:
            return x
        s = self.scaler
        return K.standardize(x, s.count, s.mean, s.m2, update)

    # -- forward pass ------------------------------------------------------

    def _visible(self, observed=None):
        visible = self.mask.active
        return visible if observed is None else visible & observed

    def _forward(self, xs, mem_lo, mem_hi, visible):
        c = self.clouds
        return K.forward(xs, visible, c.params.a, c.params.b, c.mean_lo, c.mean_hi, c.sqlen_lo,
                         c.sqlen_hi, c.params.lam, mem_lo, mem_hi, self.q, self.nodes.weights)

    def predict_one(self, x):
        """Output for one sample without changing any state."""
        if self.n_clouds == 0:
            raise ModelEmptyError("the model has no data cloud yet")
        x, _ = self._check(x)
        return self._forward(self._scale(x), self.clouds.temporal_lo, self.clouds.temporal_hi,
                             self.mask.active)[0]

    def frozen(self) -> "FrozenPredictor":
        """Predictor over the current state that never writes back to it."""
        if self.n_clouds == 0:
            raise ModelEmptyError("the model has no data cloud yet")
        return FrozenPredictor(self)

    def predict(self, X, rolling=True):
        """Outputs for a batch of samples; the learner is left untouched.

        With ``rolling`` the rows are treated as consecutive stream samples
        and the recurrent firing memory is carried through them on a local
        copy.  Otherwise every row is scored against the committed memory.
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        view = self.frozen()
        step = view.predict_one if rolling else self.predict_one
        out = np.empty((X.shape[0], self.n_outputs))
        for k, x in enumerate(X):
            out[k] = step(x)
        return out

    # -- training ----------------------------------------------------------

    def _event(self, events, kind, cloud_id, **values):
        record = {"step": self.step, "kind": kind, "cloud_id": int(cloud_id)}
        record.update({k: float(v) for k, v in values.items()})
        events.append(record)
        logger.debug("structure event", extra={"event": record})

    def _error_signal(self, y, target):
        if self.config.mode == "classification":
            return bool(np.argmax(y) != np.argmax(target))
        return self.trend.growing()

    def train_step(self, x, target) -> StepReport:
        """Test-then-train on one sample; returns what happened."""
        x, target = self._check(x, target)
        if target is None:
            raise SchemaError("training needs a target")
        if not self.initialized:
            self._init_shapes(x.shape[0], target.shape[0])
        cfg = self.config
        self.step += 1
        xs = self._scale(x, update=True)

        observed = prob = None
        if cfg.partial_mode:
            scores = feature_score(self.nodes.weights, self.n_inputs)
            observed, prob = observe_partial(self.rng, scores, self.mask.budget, cfg.epsilon)

        R = len(self.clouds)
        visible = self._visible(observed)
        if R:
            y, lo_s, hi_s, lo_t, hi_t, norm, x_e = self._forward(
                xs, self.clouds.temporal_lo, self.clouds.temporal_hi, visible)
        else:
            y = np.zeros(self.n_outputs)
            x_e = K.expand_masked(xs, visible)
        abs_error = float(np.mean(np.abs(target - y)))
        # selection starts once the output weights carry information; the
        # error trend is tracked from that point on
        selecting = cfg.feature_budget is not None and self.gate.admitted >= cfg.selection_warmup
        fired = False
        if selecting:
            self.trend.update(abs_error)
            fired = self._error_signal(y, target)

        entropy = K.gate_entropy(lo_s, hi_s, self.q_mean) if R else 1.0
        admitted = gate_decision(self.gate, entropy, R)
        events = []
        if admitted:
            if R:
                self.clouds.temporal_lo[...] = lo_t
                self.clouds.temporal_hi[...] = hi_t
            if R and selecting:
                if cfg.partial_mode:
                    gofs_partial_step(self.nodes, xs, target, norm, self.mask, fired, observed, prob,
                                      cfg.learning_rate, cfg.regularization)
                else:
                    gofs_full_step(self.nodes, xs, target, norm, self.mask, fired,
                                   cfg.learning_rate, cfg.regularization, cfg.selection_decay)
                x_e = K.expand_masked(xs, self._visible(observed))
            self._grow_or_assign(xs, target, events)
            self._prune_and_recall(xs, target, events)
            self._adapt_outputs(x_e, target)

        return StepReport(
            step=self.step, prediction=y, target=target, abs_error=abs_error, admitted=admitted,
            n_clouds=len(self.clouds), n_features=int(self.mask.active.sum()),
            active=self.mask.active.copy(), events=events)

    def _grow_or_assign(self, xs, target, events):
        cfg = self.config
        c = self.clouds
        ic, best, oc = K.coherence_step(xs, target, c.params.a, c.params.b, c.mean_lo, c.mean_hi,
                                        _moments(c.coherence), _moments(self.stats.inputs))
        full = cfg.max_clouds is not None and len(c) >= cfg.max_clouds
        if best < 0:
            self._create(xs, target, None, events)
        elif full or (np.isfinite(oc) and ic[best] <= cfg.alpha1 and oc >= cfg.alpha2):
            K.assimilate_row(best, xs, c.params.a, c.params.b, c.params.delta, c.support,
                             c.mean_lo, c.mean_hi, c.sqlen_lo, c.sqlen_hi)
        else:
            self._create(xs, target, best, events, ic=ic[best], oc=oc)

    def _create(self, xs, target, nearest, events, **trigger):
        params = draw_random_params(self.config, self.rng, self.n_inputs)
        z = params.a * xs + params.b
        cloud = new_cloud(self.next_id, params, z, self.n_outputs, self.step)
        lo_s, hi_s = spatial_density(cloud, z)
        cloud.temporal_lo[...] = cloud.params.lam * lo_s
        cloud.temporal_hi[...] = cloud.params.lam * hi_s
        cloud.coherence._update(cloud.mid_mean[:, None], target[None, :])
        weights = None if nearest is None else self.nodes.weights[nearest]
        node = new_node(2 * self.n_inputs + 1, self.n_outputs, weights, self.config.psi_init)
        self.clouds = _rows.append(self.clouds, cloud)
        self.nodes = _rows.append(self.nodes, node)
        self._event(events, "grow", self.next_id, **trigger)
        self.next_id += 1

    def _prune_and_recall(self, xs, target, events):
        cfg = self.config
        c = self.clouds
        flags = K.relevance_step(c.temporal_lo, c.temporal_hi, target, self.q,
                                 _moments(c.relevance_lo), _moments(c.relevance_hi), c.relevance,
                                 _life(c.lifespan), cfg.relevance_forgetting, cfg.min_lifespan)
        a = self.archive
        if len(a):
            # archived clouds have no firing memory; they see the spatial
            # density at the current sample
            lo, hi = K.densities(xs, a.params.a, a.params.b, a.mean_lo, a.mean_hi, a.sqlen_lo,
                                 a.sqlen_hi)
            K.relevance_step(lo, hi, target, self.q, _moments(a.relevance_lo),
                             _moments(a.relevance_hi), a.relevance, _life(a.lifespan),
                             cfg.relevance_forgetting, cfg.min_lifespan)
        flagged = np.flatnonzero(flags)
        if len(flagged) == len(self.clouds):
            keep = flagged[np.argmin(self.clouds.relevance[flagged])]
            flagged = flagged[flagged != keep]
        for i in sorted(flagged, reverse=True):
            self._event(events, "prune", self.clouds.id[i], relevance=self.clouds.relevance[i],
                        lifespan_mean=self.clouds.lifespan.mean[i],
                        lifespan_std=self.clouds.lifespan.std[i])
            self.archive = _rows.append(self.archive, _rows.row(self.clouds, i))
            self.archive_nodes = _rows.append(self.archive_nodes, _rows.row(self.nodes, i))
            self.clouds = _rows.delete(self.clouds, i)
            self.nodes = _rows.delete(self.nodes, i)
        while len(self.archive) > cfg.max_archive:
            self.archive = _rows.delete(self.archive, 0)
            self.archive_nodes = _rows.delete(self.archive_nodes, 0)

        k = recall_check(self.clouds, self.archive)
        if k is not None and (cfg.max_clouds is None or len(self.clouds) < cfg.max_clouds):
            self._event(events, "recall", self.archive.id[k], relevance=self.archive.relevance[k])
            self.clouds = _rows.append(self.clouds, _rows.row(self.archive, k))
            self.nodes = _rows.append(self.nodes, _rows.row(self.archive_nodes, k))
            self.archive = _rows.delete(self.archive, k)
            self.archive_nodes = _rows.delete(self.archive_nodes, k)

    def _adapt_outputs(self, x_e, target):
        c = self.clouds
        self.faults += K.fwgrls(self.nodes.psi, self.nodes.weights, x_e, target, c.temporal_lo,
                                c.temporal_hi, self.q_mean, self.config.decay_rate)

    # -- persistence -------------------------------------------------------

    def snapshot(self) -> bytes:
        """Versioned, checksummed binary image of the full learner state."""
        meta = {
            "config": asdict(self.config),
            "seed": self.seed,
            "rng": self.rng.bit_generator.state,
            "n_inputs": self.n_inputs,
            "n_outputs": self.n_outputs,
            "step": self.step,
            "faults": self.faults,
            "next_id": self.next_id,
            "gate": asdict(self.gate),
            "trend": {"count": self.trend.stats.count, "mean": self.trend.stats.mean,
                      "m2": self.trend.stats.m2, "previous": self.trend.previous,
                      "current": self.trend.current, "kappa": self.trend.kappa},
        }
        arrays = {}
        if self.initialized:
            meta["mask"] = {"budget": self.mask.budget, "triggered": self.mask.triggered}
            arrays["q"] = self.q
            arrays["mask.active"] = self.mask.active
            for name in ("clouds", "nodes", "archive", "archive_nodes", "scaler"):
                for key, value in _rows.leaves(getattr(self, name)).items():
                    arrays[f"{name}/{key}"] = value
            for key, value in _rows.leaves(self.stats.inputs).items():
                arrays[f"stats/{key}"] = value
        arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
        buf = io.BytesIO()
        np.savez(buf, **arrays)
        payload = buf.getvalue()
        header = SNAPSHOT_MAGIC + struct.pack("<H", SNAPSHOT_VERSION) + hashlib.sha256(payload).digest()
        return header + payload

    @classmethod
    def restore(cls, blob: bytes) -> "Learner":
        head = len(SNAPSHOT_MAGIC)
        if len(blob) < head + 34 or blob[:head] != SNAPSHOT_MAGIC:
            raise SnapshotError("not a learner snapshot")
        (version,) = struct.unpack("<H", blob[head:head + 2])
        if version != SNAPSHOT_VERSION:
            raise SnapshotVersionError(f"snapshot version {version}, expected {SNAPSHOT_VERSION}")
        digest, payload = blob[head + 2:head + 34], blob[head + 34:]
        if hashlib.sha256(payload).digest() != digest:
            raise SnapshotChecksumError("snapshot checksum mismatch")
        with np.load(io.BytesIO(payload), allow_pickle=False) as data:
            arrays = {k: data[k] for k in data.files}
        meta = json.loads(arrays.pop("meta").tobytes().decode())

        cfg_fields = {f.name for f in fields(LearnerConfig)}
        config = LearnerConfig(**{k: v for k, v in meta["config"].items() if k in cfg_fields})
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            learner = cls(config, meta["seed"])
        learner.rng.bit_generator.state = meta["rng"]
        learner.step, learner.faults, learner.next_id = meta["step"], meta["faults"], meta["next_id"]
        learner.gate = EsemGateState(**meta["gate"])
        t = meta["trend"]
        learner.trend = ErrorTrend(RunningStats(t["count"], t["mean"], t["m2"]), t["previous"],
                                   t["current"], t["kappa"])
        if meta["n_inputs"] is not None:
            learner._init_shapes(meta["n_inputs"], meta["n_outputs"])
            learner.rng.bit_generator.state = meta["rng"]
            learner.q = arrays["q"]
            learner.q_mean = float(learner.q.mean())
            learner.mask = FeatureMask(arrays["mask.active"], meta["mask"]["budget"],
                                       meta["mask"]["triggered"])
            for name in ("clouds", "nodes", "archive", "archive_nodes", "scaler"):
                prefix = f"{name}/"
                flat = {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}
                setattr(learner, name, _rows.from_leaves(getattr(learner, name), flat))
            flat = {k[len("stats/"):]: v for k, v in arrays.items() if k.startswith("stats/")}
            learner.stats = CoherenceStats(_rows.from_leaves(learner.stats.inputs, flat))
        return learner

    def describe(self):
        """Plain summary used by ``inspect``."""
        out = {"step": self.step, "n_inputs": self.n_inputs, "n_outputs": self.n_outputs,
               "n_clouds": self.n_clouds, "archive_size": len(self.archive) if self.initialized else 0,
               "admitted": self.gate.admitted, "seen": self.gate.seen, "faults": self.faults}
        if self.initialized:
            out["mask"] = self.mask.bits()
            out["clouds"] = [
                {"id": int(self.clouds.id[i]), "support": int(self.clouds.support[i]),
                 "mean": self.clouds.mid_mean[i].tolist(), "created_at": int(self.clouds.created_at[i])}
                for i in range(len(self.clouds))]
        return out


class FrozenPredictor:
    """Prediction over a fixed learner with its own copy of the firing memory."""

    def __init__(self, learner: Learner):
        self.learner = learner
        self.memory_lo = learner.clouds.temporal_lo.copy()
        self.memory_hi = learner.clouds.temporal_hi.copy()

    def predict_one(self, x):
        lr = self.learner
        x, _ = lr._check(x)
        y, _, _, self.memory_lo, self.memory_hi, _, _ = lr._forward(
            lr._scale(x), self.memory_lo, self.memory_hi, lr.mask.active)
        return y
