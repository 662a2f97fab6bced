"""Cloud growing (input/output coherence), relevance-based pruning and recall.

Every decision is made from maximal information compression indices (MCI),
where 0 means perfect linear dependence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cloud import DataCloud, project
from .stats import WelfordAccumulator, mci, mci_pairwise, pearson


class InsufficientStatistics(RuntimeError):
    """Fewer than two accumulated samples behind a coherence estimate."""


@dataclass
class CoherenceStats:
    """Moments of each input feature against each target over the stream."""

    inputs: WelfordAccumulator  # shape (n, m)

    @classmethod
    def zeros(cls, n_inputs, n_outputs):
        return cls(WelfordAccumulator.zeros((n_inputs, n_outputs)))


def update_coherence(stats: CoherenceStats, clouds: DataCloud, x, target):
    """Advance the global (x_j, T_o) moments and each cloud's (mid-mean_j, T_o) moments."""
    x = np.asarray(x, dtype=float)
    target = np.asarray(target, dtype=float)
    stats.inputs._update(x[:, None], target[None, :])
    if len(clouds):
        clouds.coherence._update(clouds.mid_mean[..., None], target[None, None, :])


def input_coherence(cloud: DataCloud, x):
    """MCI between the cloud's mid mean and the projected sample (smaller = closer).

    With a single input feature the MCI across components is undefined, so
    the squared distance is used instead.
    """
    z = project(cloud, x)
    mid = cloud.mid_mean
    if z.shape[-1] == 1:
        return ((mid - z) ** 2)[..., 0]
    return mci_pairwise(mid, z)


def _mean_mci(acc: WelfordAccumulator, axes):
    va, vb = acc.var_a, acc.var_b
    return mci(va, vb, pearson(va, vb, acc.cov)).mean(axis=axes)


def output_coherence(cloud: DataCloud, stats: CoherenceStats):
    """Gap between the cloud's and the raw inputs' average MCI against the targets."""
    if np.any(np.asarray(cloud.coherence.count) < 2) or np.any(stats.inputs.count < 2):
        raise InsufficientStatistics("output coherence needs two accumulated samples")
    cloud_term = _mean_mci(cloud.coherence, axes=(-2, -1))
    input_term = _mean_mci(stats.inputs, axes=(-2, -1))
    return np.abs(cloud_term - input_term)


def prune_relevance(clouds: DataCloud, temporal_lo, temporal_hi, target, q, forget=1.0):
    """Update each cloud's firing/target moments and return its relevance MCI.

    The lower and upper firings are combined per output with the design
    factor ``q`` and averaged over outputs.  The value enters the cloud's
    lifespan statistics once two samples back it.
    """
    target = np.asarray(target, dtype=float)
    q = np.asarray(q, dtype=float)
    clouds.relevance_lo._update(np.asarray(temporal_lo)[..., None], target, forget)
    clouds.relevance_hi._update(np.asarray(temporal_hi)[..., None], target, forget)
    zeta = (q * clouds.relevance_lo.mci() + (1.0 - q) * clouds.relevance_hi.mci()).mean(axis=-1)
    ready = clouds.relevance_lo.count[..., 0] >= 2
    clouds.relevance[...] = zeta
    if np.all(ready):
        clouds.lifespan.update(zeta)
    elif np.any(ready):
        lifespan = clouds.lifespan
        count = lifespan.count + ready
        delta = np.where(ready, zeta - lifespan.mean, 0.0)
        mean = lifespan.mean + delta / np.maximum(count, 1)
        lifespan.m2[...] = lifespan.m2 + delta * (zeta - mean)
        lifespan.mean[...] = mean
        lifespan.count[...] = count
    return zeta


def prune_check(clouds: DataCloud, min_lifespan=10):
    """Clouds whose current relevance MCI fell two deviations below its lifespan mean."""
    life = clouds.lifespan
    eligible = life.count >= min_lifespan
    return eligible & (clouds.relevance < life.mean - 2.0 * life.std)


def recall_check(active: DataCloud, archive: DataCloud):
    """Index of the archived cloud to reinstate, or None.

    A cloud comes back when the largest archived relevance exceeds every
    active one, the same ordering under which a drop in relevance prunes.
    """
    if len(archive) == 0:
        return None
    best = int(np.argmax(archive.relevance))
    if len(active) == 0 or archive.relevance[best] > np.max(active.relevance):
        return best
    return None
