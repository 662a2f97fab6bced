"""Second-order Chebyshev functional link (the enhancement layer)."""

import numpy as np

from .errors import DataError

ORDER = 2


def chebyshev(x, order):
    """Chebyshev polynomial of the first kind by the three-term recurrence."""
    x = np.asarray(x, dtype=float)
    prev, cur = np.ones_like(x), x
    if order == 0:
        return prev
    for _ in range(order - 1):
        prev, cur = cur, 2.0 * x * cur - prev
    return cur


def expand(x):
    """Map ``x`` of length n to ``[1, x1, T2(x1), ..., xn, T2(xn)]``.

    Works on a trailing feature axis, so a ``(k, n)`` batch gives ``(k, 2n+1)``.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 0 or x.shape[-1] == 0:
        raise DataError("expand needs at least one input feature")
    n = x.shape[-1]
    out = np.empty(x.shape[:-1] + (2 * n + 1,))
    out[..., 0] = 1.0
    out[..., 1::2] = x
    out[..., 2::2] = 2.0 * x * x - 1.0
    return out


def slots(j):
    """Positions of feature ``j``'s linear and quadratic terms in the expanded vector."""
    return 2 * j + 1, 2 * j + 2
