"""Interval-valued data clouds: the parameter-free hidden nodes.

A cloud keeps only recursive statistics of the (projected) samples assigned
to it.  The uncertainty factor ``delta`` shifts the mean and mean square
length down/up, giving a lower and an upper Cauchy-type density.  Every
function here broadcasts over a leading axis, so a stacked bank of clouds
(see :mod:`prvfln._rows`) is processed in one call.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _rows
from .errors import DataError
from .stats import RunningStats, WelfordAccumulator


@dataclass
class RandomParams:
    """Per-cloud random parameters, drawn once and never tuned."""

    a: np.ndarray  # elementwise input weights, shape (n,)
    b: np.ndarray  # bias, fixed at zero
    lam: np.ndarray  # recurrent-link weight in [0, 1]
    delta: np.ndarray  # uncertainty factor >= 0


@dataclass
class DataCloud:
    id: np.ndarray
    created_at: np.ndarray
    params: RandomParams
    support: np.ndarray
    mean_lo: np.ndarray
    mean_hi: np.ndarray
    sqlen_lo: np.ndarray
    sqlen_hi: np.ndarray
    temporal_lo: np.ndarray
    temporal_hi: np.ndarray
    # per-output moments of (temporal firing, target) for relevance
    relevance_lo: WelfordAccumulator
    relevance_hi: WelfordAccumulator
    relevance: np.ndarray
    lifespan: RunningStats
    # per (feature, output) moments of (mid mean, target) since creation
    coherence: WelfordAccumulator

    @property
    def mid_mean(self):
        return 0.5 * (self.mean_lo + self.mean_hi)

    @property
    def mid_sqlen(self):
        return 0.5 * (self.sqlen_lo + self.sqlen_hi)

    def __len__(self):
        return len(self.id)


def new_cloud(cloud_id, params: RandomParams, z, n_outputs, step=0) -> DataCloud:
    """Cloud seeded with its first projected sample ``z``."""
    z = np.asarray(z, dtype=float)
    delta = float(params.delta)
    sq = float(z @ z)
    m = n_outputs
    n = z.shape[-1]
    return _rows.as_arrays(DataCloud(
        id=int(cloud_id),
        created_at=int(step),
        params=_rows.as_arrays(params),
        support=1,
        mean_lo=z - delta,
        mean_hi=z + delta,
        sqlen_lo=sq - delta,
        sqlen_hi=sq + delta,
        temporal_lo=0.0,
        temporal_hi=0.0,
        relevance_lo=WelfordAccumulator.zeros((m,)),
        relevance_hi=WelfordAccumulator.zeros((m,)),
        relevance=0.0,
        lifespan=RunningStats.zeros(),
        coherence=WelfordAccumulator.zeros((n, m)),
    ))


def empty_bank(n_inputs, n_outputs) -> DataCloud:
    template = new_cloud(0, RandomParams(np.zeros(n_inputs), np.zeros(n_inputs), 0.0, 0.0),
                         np.zeros(n_inputs), n_outputs)
    return _rows.stack([], template=template)


def project(cloud: DataCloud, x):
    """Elementwise random projection ``a * x + b``."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != cloud.params.a.shape[-1]:
        raise DataError(f"expected {cloud.params.a.shape[-1]} inputs, got {x.shape[-1]}")
    return cloud.params.a * x + cloud.params.b


def _density(z, mean, sqlen):
    diff = z - mean
    spread = np.maximum(sqlen - np.einsum("...j,...j->...", mean, mean), 0.0)
    return 1.0 / (1.0 + np.einsum("...j,...j->...", diff, diff) + spread)


def spatial_density(cloud: DataCloud, z):
    """Lower and upper Cauchy densities of projected sample ``z``.

    ``1 / (1 + |z - mu|^2 + Sigma - |mu|^2)`` equals the average squared
    distance form over all assigned samples, without storing them.
    """
    lo = _density(z, cloud.mean_lo, cloud.sqlen_lo)
    hi = _density(z, cloud.mean_hi, cloud.sqlen_hi)
    return lo, hi


def temporal_fire(cloud: DataCloud, lo_s, hi_s, commit=True):
    """Blend spatial firing with the node's previous temporal firing."""
    lam = cloud.params.lam
    lo_t = lam * lo_s + (1.0 - lam) * cloud.temporal_lo
    hi_t = lam * hi_s + (1.0 - lam) * cloud.temporal_hi
    if commit:
        cloud.temporal_lo[...] = lo_t
        cloud.temporal_hi[...] = hi_t
    return lo_t, hi_t


def assimilate(cloud: DataCloud, z) -> DataCloud:
    """Add projected sample ``z`` to the cloud's recursive means and square lengths."""
    z = np.asarray(z, dtype=float)
    support = cloud.support + 1
    keep = (support - 1) / support
    delta = cloud.params.delta
    sq = np.einsum("...j,...j->...", z, z)
    cloud.mean_lo[...] = keep[..., None] * cloud.mean_lo + (z - delta[..., None]) / support[..., None]
    cloud.mean_hi[...] = keep[..., None] * cloud.mean_hi + (z + delta[..., None]) / support[..., None]
    cloud.sqlen_lo[...] = keep * cloud.sqlen_lo + (sq - delta) / support
    cloud.sqlen_hi[...] = keep * cloud.sqlen_hi + (sq + delta) / support
    cloud.support[...] = support
    return cloud
