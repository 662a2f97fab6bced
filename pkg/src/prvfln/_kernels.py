"""Compiled per-step kernels used by the learner's training loop.

Each kernel fuses the numpy reference functions of one phase of a step
(forward pass, coherence/growth test, relevance/prune test, output update)
into a single loop nest over plain arrays.  The reference functions in
:mod:`stats`, :mod:`cloud`, :mod:`structure` and :mod:`output` define the
semantics; the test suite checks the two against each other.
"""

import numpy as np
from numba import njit

from .active import UNIFORM_TOL
from .stats import DEGENERATE_VAR

_MIN_FIRING = 1e-300
# reassociation lets reductions vectorise; nan/inf semantics are kept so the
# finiteness checks still work
_REASSOC = {"reassoc", "contract", "nsz", "arcp"}


@njit(cache=True)
def _mci(va, vb, cov):
    rho = 0.0
    if va >= DEGENERATE_VAR and vb >= DEGENERATE_VAR:
        rho = cov / np.sqrt(va * vb)
        rho = min(max(rho, -1.0), 1.0)
    total = va + vb
    radicand = total * total - 4.0 * va * vb * (1.0 - rho * rho)
    out = 0.5 * (total - np.sqrt(max(radicand, 0.0)))
    return max(out, 0.0)


@njit(cache=True)
def _welford(acc, k, a, b, forget):
    # acc rows: count, mean_a, mean_b, m2_a, m2_b, co_moment; k flat index
    count = forget * acc[0][k] + 1.0
    da = a - acc[1][k]
    db = b - acc[2][k]
    mean_a = acc[1][k] + da / count
    mean_b = acc[2][k] + db / count
    db2 = b - mean_b
    acc[3][k] = forget * acc[3][k] + da * (a - mean_a)
    acc[4][k] = forget * acc[4][k] + db * db2
    acc[5][k] = forget * acc[5][k] + da * db2
    acc[1][k] = mean_a
    acc[2][k] = mean_b
    acc[0][k] = count


@njit(cache=True)
def _acc_mci(acc, k):
    c = max(acc[0][k], 1.0)
    return _mci(acc[3][k] / c, acc[4][k] / c, acc[5][k] / c)


@njit(cache=True)
def expand_masked(xs, visible):
    n = xs.shape[0]
    x_e = np.zeros(2 * n + 1)
    x_e[0] = 1.0
    for j in range(n):
        if visible[j]:
            x_e[2 * j + 1] = xs[j]
            x_e[2 * j + 2] = 2.0 * xs[j] * xs[j] - 1.0
    return x_e


@njit(cache=True)
def densities(xs, a, b, mean_lo, mean_hi, sqlen_lo, sqlen_hi):
    """Lower/upper spatial densities of ``xs`` for every cloud of a bank."""
    R, n = a.shape
    lo = np.empty(R)
    hi = np.empty(R)
    for i in range(R):
        d_lo = 0.0
        d_hi = 0.0
        mm_lo = 0.0
        mm_hi = 0.0
        for j in range(n):
            z = a[i, j] * xs[j] + b[i, j]
            e_lo = z - mean_lo[i, j]
            e_hi = z - mean_hi[i, j]
            d_lo += e_lo * e_lo
            d_hi += e_hi * e_hi
            mm_lo += mean_lo[i, j] * mean_lo[i, j]
            mm_hi += mean_hi[i, j] * mean_hi[i, j]
        lo[i] = 1.0 / (1.0 + d_lo + max(sqlen_lo[i] - mm_lo, 0.0))
        hi[i] = 1.0 / (1.0 + d_hi + max(sqlen_hi[i] - mm_hi, 0.0))
    return lo, hi


@njit(cache=True)
def forward(xs, visible, a, b, mean_lo, mean_hi, sqlen_lo, sqlen_hi, lam, mem_lo, mem_hi, q, weights):
    """Spatial and temporal firing, normalised mixing weights and output.

    Returns ``(y, lo_s, hi_s, lo_t, hi_t, norm, x_e)``; nothing is written.
    """
    R = a.shape[0]
    m = q.shape[0]
    d = weights.shape[1]
    lo_s, hi_s = densities(xs, a, b, mean_lo, mean_hi, sqlen_lo, sqlen_hi)
    lo_t = np.empty(R)
    hi_t = np.empty(R)
    for i in range(R):
        lo_t[i] = lam[i] * lo_s[i] + (1.0 - lam[i]) * mem_lo[i]
        hi_t[i] = lam[i] * hi_s[i] + (1.0 - lam[i]) * mem_hi[i]
    norm = np.empty((m, R))
    for o in range(m):
        total = 0.0
        for i in range(R):
            norm[o, i] = (1.0 - q[o]) * hi_t[i] + q[o] * lo_t[i]
            total += norm[o, i]
        for i in range(R):
            norm[o, i] = norm[o, i] / total if total > 0 else 1.0 / R
    x_e = expand_masked(xs, visible)
    y = np.zeros(m)
    for i in range(R):
        for o in range(m):
            local = 0.0
            for j in range(d):
                local += x_e[j] * weights[i, j, o]
            y[o] += norm[o, i] * local
    return y, lo_s, hi_s, lo_t, hi_t, norm, x_e


@njit(cache=True)
def coherence_step(xs, target, a, b, mean_lo, mean_hi, coh, glob):
    """Advance the coherence moments and evaluate the growth test quantities.

    ``coh`` holds the six (R*n*m,) moment arrays of the clouds, ``glob`` the
    six (n*m,) arrays of the raw inputs.  Returns ``(ic, best, oc)`` with
    ``oc`` NaN when the statistics are still too thin.
    """
    R, n = a.shape
    m = target.shape[0]
    for j in range(n):
        for o in range(m):
            _welford(glob, j * m + o, xs[j], target[o], 1.0)
    for i in range(R):
        for j in range(n):
            mid = 0.5 * (mean_lo[i, j] + mean_hi[i, j])
            for o in range(m):
                _welford(coh, (i * n + j) * m + o, mid, target[o], 1.0)

    ic = np.empty(R)
    for i in range(R):
        if n == 1:
            mid = 0.5 * (mean_lo[i, 0] + mean_hi[i, 0])
            e = mid - (a[i, 0] * xs[0] + b[i, 0])
            ic[i] = e * e
            continue
        su = 0.0
        sv = 0.0
        for j in range(n):
            su += 0.5 * (mean_lo[i, j] + mean_hi[i, j])
            sv += a[i, j] * xs[j] + b[i, j]
        mu = su / n
        mv = sv / n
        vu = 0.0
        vv = 0.0
        cv = 0.0
        for j in range(n):
            du = 0.5 * (mean_lo[i, j] + mean_hi[i, j]) - mu
            dv = a[i, j] * xs[j] + b[i, j] - mv
            vu += du * du
            vv += dv * dv
            cv += du * dv
        ic[i] = _mci(vu / n, vv / n, cv / n)

    best = -1
    oc = np.nan
    if R > 0:
        best = int(np.argmin(ic))
        ready = glob[0][0] >= 2
        for k in range(n * m):
            if coh[0][best * n * m + k] < 2:
                ready = False
        if ready:
            cloud_term = 0.0
            input_term = 0.0
            for k in range(n * m):
                cloud_term += _acc_mci(coh, best * n * m + k)
                input_term += _acc_mci(glob, k)
            oc = abs(cloud_term / (n * m) - input_term / (n * m))
    return ic, best, oc


@njit(cache=True)
def assimilate_row(i, xs, a, b, delta, support, mean_lo, mean_hi, sqlen_lo, sqlen_hi):
    n = a.shape[1]
    s = support[i] + 1
    keep = (s - 1) / s
    sq = 0.0
    for j in range(n):
        z = a[i, j] * xs[j] + b[i, j]
        sq += z * z
        mean_lo[i, j] = keep * mean_lo[i, j] + (z - delta[i]) / s
        mean_hi[i, j] = keep * mean_hi[i, j] + (z + delta[i]) / s
    sqlen_lo[i] = keep * sqlen_lo[i] + (sq - delta[i]) / s
    sqlen_hi[i] = keep * sqlen_hi[i] + (sq + delta[i]) / s
    support[i] = s


@njit(cache=True)
def relevance_step(fire_lo, fire_hi, target, q, rel_lo, rel_hi, relevance, life, forget,
                   min_lifespan):
    """Update firing/target moments, the relevance MCI and its lifespan stats.

    ``life`` holds (count, mean, m2) arrays of length R.  Returns the prune
    flags: relevance two lifespan deviations below its lifespan mean.
    """
    R = fire_lo.shape[0]
    m = target.shape[0]
    flags = np.zeros(R, dtype=np.bool_)
    for i in range(R):
        zeta = 0.0
        for o in range(m):
            k = i * m + o
            _welford(rel_lo, k, fire_lo[i], target[o], forget)
            _welford(rel_hi, k, fire_hi[i], target[o], forget)
            zeta += q[o] * _acc_mci(rel_lo, k) + (1.0 - q[o]) * _acc_mci(rel_hi, k)
        zeta /= m
        relevance[i] = zeta
        if rel_lo[0][i * m] >= 2:
            count = life[0][i] + 1.0
            delta = zeta - life[1][i]
            mean = life[1][i] + delta / count
            life[2][i] = life[2][i] + delta * (zeta - mean)
            life[1][i] = mean
            life[0][i] = count
        c = life[0][i]
        if c >= min_lifespan:
            std = np.sqrt(max(life[2][i] / c, 0.0))
            flags[i] = zeta < life[1][i] - 2.0 * std
    return flags


@njit(cache=True)
def gate_entropy(lo_s, hi_s, q_mean):
    """Normalised entropy of the type-reduced cloud membership probabilities."""
    R = lo_s.shape[0]
    if R < 2:
        return 1.0
    total = 0.0
    for i in range(R):
        total += (1.0 - q_mean) * hi_s[i] + q_mean * lo_s[i]
    h = 0.0
    for i in range(R):
        p = ((1.0 - q_mean) * hi_s[i] + q_mean * lo_s[i]) / total
        if p > 0:
            h -= p * np.log(p)
    h /= np.log(R)
    return 1.0 if h > 1.0 - UNIFORM_TOL else h


@njit(cache=True, fastmath=_REASSOC)
def fwgrls(psi, weights, x_e, target, fire_lo, fire_hi, q_mean, decay_rate):
    """Firing-weighted, decayed RLS on every node of a bank, in place.

    Each node is weighted by its type-reduced temporal firing, normalised
    over the bank.

    Assumes each ``psi[i]`` is symmetric and finite, which the update
    preserves: the rank-one term is the product ``u[j] * u[k]`` with
    ``u = px * sqrt(inv)``, and without forgetting ``psi`` only shrinks.  A node is skipped, and counted
    as a fault, when its gain or error is non-finite.
    """
    R, d, m = weights.shape
    firing = np.empty(R)
    total = 0.0
    for i in range(R):
        firing[i] = (1.0 - q_mean) * fire_hi[i] + q_mean * fire_lo[i]
        total += firing[i]
    for i in range(R):
        firing[i] = firing[i] / total if total > 0 else 1.0 / R
    faults = 0
    px = np.empty(d)
    u = np.empty(d)
    new_w = np.empty((d, m))
    err = np.empty(m)
    for i in range(R):
        P = psi[i]
        W = weights[i]
        quad = 0.0
        for j in range(d):
            acc = 0.0
            for k in range(d):
                acc += P[j, k] * x_e[k]
            px[j] = acc
            quad += acc * x_e[j]
        inv = 1.0 / (1.0 / max(firing[i], _MIN_FIRING) + quad)
        check = inv * quad
        for o in range(m):
            acc = 0.0
            for j in range(d):
                acc += x_e[j] * W[j, o]
            err[o] = target[o] - acc
            check += err[o]
        if not (firing[i] > 0 and np.isfinite(check)):
            faults += 1
            continue
        root = np.sqrt(inv)
        for j in range(d):
            u[j] = px[j] * root
        for j in range(d):
            pj = px[j] * inv
            uj = u[j]
            for k in range(d):
                P[j, k] -= uj * u[k]
            for o in range(m):
                acc = 0.0
                for k in range(d):
                    acc += P[j, k] * W[k, o]
                new_w[j, o] = W[j, o] - decay_rate * acc + pj * err[o]
        W[:, :] = new_w
    return faults


@njit(cache=True)
def standardize(x, count, mean, m2, update):
    """Optionally fold ``x`` into the running moments, then z-score it.

    Degenerate (near-constant) features are centred but not rescaled.
    """
    n = x.shape[0]
    out = np.empty(n)
    for j in range(n):
        if update:
            c = count[j] + 1.0
            delta = x[j] - mean[j]
            mu = mean[j] + delta / c
            m2[j] += delta * (x[j] - mu)
            mean[j] = mu
            count[j] = c
        std = np.sqrt(max(m2[j] / max(count[j], 1.0), 0.0))
        out[j] = (x[j] - mean[j]) / (std if std > 1e-12 else 1.0)
    return out
