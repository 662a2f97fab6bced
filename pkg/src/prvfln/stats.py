"""Single-pass moment accumulators and the maximal information compression index.

All variances use the population convention (divide by ``count``).  The
accumulators are written against numpy broadcasting so the same class holds
one scalar pair or a whole bank of pairs (one per cloud, feature, output).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError

# Below this a variance is treated as zero when forming a correlation.
DEGENERATE_VAR = 1e-12


def _zeros(shape):
    return np.zeros(shape) if shape != () else 0.0


def _assign(obj, name, value):
    # arrays are written in place so that row views write through to a bank
    current = getattr(obj, name)
    if isinstance(current, np.ndarray):
        current[...] = value
    else:
        setattr(obj, name, value)


@dataclass
class WelfordAccumulator:
    """Running mean, variance and co-moment of a pair ``(a, b)``.

    Fields may be python floats or equally shaped arrays; in the array case
    each element is an independent accumulator.
    """

    count: float | np.ndarray = 0
    mean_a: float | np.ndarray = 0.0
    mean_b: float | np.ndarray = 0.0
    m2_a: float | np.ndarray = 0.0
    m2_b: float | np.ndarray = 0.0
    co_moment: float | np.ndarray = 0.0

    @classmethod
    def zeros(cls, shape=()) -> "WelfordAccumulator":
        return cls(*(_zeros(shape) for _ in range(6)))

    def update(self, a, b) -> "WelfordAccumulator":
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise DataError("non-finite value passed to WelfordAccumulator.update")
        self._update(a, b)
        return self

    def _update(self, a, b, forget=1.0):
        # forget < 1 discounts old pairs geometrically; count is then the
        # effective sample weight rather than an integer
        count = forget * self.count + 1
        da = a - self.mean_a
        db = b - self.mean_b
        mean_a = self.mean_a + da / count
        mean_b = self.mean_b + db / count
        db2 = b - mean_b
        _assign(self, "m2_a", forget * self.m2_a + da * (a - mean_a))
        _assign(self, "m2_b", forget * self.m2_b + db * db2)
        _assign(self, "co_moment", forget * self.co_moment + da * db2)
        _assign(self, "mean_a", mean_a)
        _assign(self, "mean_b", mean_b)
        _assign(self, "count", count)

    def _denominator(self):
        return np.maximum(self.count, 1)

    @property
    def var_a(self):
        return self.m2_a / self._denominator()

    @property
    def var_b(self):
        return self.m2_b / self._denominator()

    @property
    def cov(self):
        return self.co_moment / self._denominator()

    def mci(self):
        """Maximal information compression index of the accumulated pair."""
        va, vb = self.var_a, self.var_b
        return mci(va, vb, pearson(va, vb, self.cov))


@dataclass
class RunningStats:
    """Running mean and population standard deviation of one variable."""

    count: float | np.ndarray = 0
    mean: float | np.ndarray = 0.0
    m2: float | np.ndarray = 0.0

    @classmethod
    def zeros(cls, shape=()) -> "RunningStats":
        return cls(*(_zeros(shape) for _ in range(3)))

    def update(self, value) -> "RunningStats":
        count = self.count + 1
        delta = value - self.mean
        mean = self.mean + delta / count
        _assign(self, "m2", self.m2 + delta * (value - mean))
        _assign(self, "mean", mean)
        _assign(self, "count", count)
        return self

    @property
    def var(self):
        return self.m2 / np.maximum(self.count, 1)

    @property
    def std(self):
        return np.sqrt(np.maximum(self.var, 0.0))


def pearson(var_a, var_b, cov):
    """Pearson correlation from moments; zero where either variance degenerates."""
    var_a = np.asarray(var_a, dtype=float)
    var_b = np.asarray(var_b, dtype=float)
    ok = (var_a >= DEGENERATE_VAR) & (var_b >= DEGENERATE_VAR)
    denom = np.sqrt(np.where(ok, var_a * var_b, 1.0))
    rho = np.where(ok, np.asarray(cov, dtype=float) / denom, 0.0)
    rho = np.clip(rho, -1.0, 1.0)
    return float(rho) if rho.ndim == 0 else rho


def mci(var_a, var_b, rho):
    """Smallest eigenvalue of the 2x2 covariance matrix built from the moments.

    Zero means the two variables are perfectly linearly dependent.
    """
    var_a = np.asarray(var_a, dtype=float)
    var_b = np.asarray(var_b, dtype=float)
    rho = np.asarray(rho, dtype=float)
    total = var_a + var_b
    radicand = total * total - 4.0 * var_a * var_b * (1.0 - rho * rho)
    out = 0.5 * (total - np.sqrt(np.maximum(radicand, 0.0)))
    out = np.maximum(out, 0.0)
    return float(out) if out.ndim == 0 else out


def mci_pairwise(u, v, axis=-1):
    """MCI between two vectors, treating their components as observations.

    Accepts stacked inputs; the components run along ``axis``.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape[axis] != v.shape[axis]:
        raise DataError(f"length mismatch: {u.shape[axis]} vs {v.shape[axis]}")
    if u.shape[axis] < 2:
        raise DataError("mci_pairwise needs at least two components")
    du = u - u.mean(axis=axis, keepdims=True)
    dv = v - v.mean(axis=axis, keepdims=True)
    var_u = (du * du).mean(axis=axis)
    var_v = (dv * dv).mean(axis=axis)
    cov = (du * dv).mean(axis=axis)
    return mci(var_u, var_v, pearson(var_u, var_v, cov))
