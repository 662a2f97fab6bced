"""Online feature selection with crisp 0/1 masks over the input attributes.

Full mode sees every attribute; partial mode observes at most ``budget``
attributes per step, chosen by an epsilon-greedy draw and importance
rescaled by their inclusion probability.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .chebyshev import expand
from .output import OutputNode, combine
from .stats import RunningStats

ALPHA = 0.2
CHI = 0.01
KAPPA = 1.1


@dataclass
class FeatureMask:
    active: np.ndarray
    budget: int
    triggered: bool = False

    @classmethod
    def full(cls, n_inputs, budget=None):
        budget = n_inputs if budget is None else int(budget)
        if not 1 <= budget <= n_inputs:
            raise ValueError(f"feature budget must lie in [1, {n_inputs}], got {budget}")
        return cls(np.ones(n_inputs, dtype=bool), budget)

    def bits(self):
        return "".join("1" if a else "0" for a in self.active)


@dataclass
class ErrorTrend:
    """Running mean/std of absolute error and the previous step's pair."""

    stats: RunningStats = field(default_factory=RunningStats)
    previous: float = 0.0
    current: float = 0.0
    kappa: float = KAPPA

    def update(self, abs_error):
        self.previous = self.current
        self.stats.update(float(abs_error))
        self.current = float(self.stats.mean + self.stats.std)

    def growing(self):
        """True when ``|mean + std|`` grew by more than ``kappa`` since the last step."""
        return self.stats.count >= 2 and abs(self.current) > self.kappa * abs(self.previous)


def feature_score(weights, n_inputs):
    """Accumulated absolute linear and quadratic weight per feature.

    ``weights`` is the (R, 2n+1, m) bank; the intercept row is ignored.
    """
    w = np.abs(np.asarray(weights))
    if w.ndim == 2:
        w = w[None]
    per_slot = w.sum(axis=(0, 2))
    return per_slot[1::2][:n_inputs] + per_slot[2::2][:n_inputs]


def top_budget(scores, budget):
    order = np.argsort(-np.asarray(scores), kind="stable")
    active = np.zeros(len(scores), dtype=bool)
    active[order[:budget]] = True
    return active


def gradient(nodes: OutputNode, x_e, target, norm_firing):
    """dE/dW_i for E = 0.5 * sum_o (T_o - y_o)^2 with firing held fixed."""
    y = combine(norm_firing, x_e, nodes.weights)
    err = np.asarray(target, dtype=float) - y
    # (R, d, m): -err_o * G[o, i] * x_e[j]
    return -x_e[None, :, None] * (err[None, :] * norm_firing.T)[:, None, :]


def project_weights(nodes: OutputNode, chi=CHI):
    """Rescale each node's weight matrix into the ball of radius 1/sqrt(chi)."""
    radius = 1.0 / np.sqrt(chi)
    norms = np.sqrt(np.einsum("rjo,rjo->r", nodes.weights, nodes.weights))
    scale = np.minimum(1.0, radius / np.maximum(norms, 1e-300))
    nodes.weights *= scale[:, None, None]


def _triggered_update(nodes, x_hat_e, target, norm_firing, mask, alpha, chi):
    grad = gradient(nodes, x_hat_e, target, norm_firing)
    nodes.weights -= chi * alpha * nodes.weights + alpha * chi * grad
    project_weights(nodes, chi)
    n = len(mask.active)
    mask.active = top_budget(feature_score(nodes.weights, n), mask.budget)
    mask.triggered = True


def gofs_full_step(nodes: OutputNode, x, target, norm_firing, mask: FeatureMask, fired,
                   alpha=ALPHA, chi=CHI, decay=True):
    """One full-input selection step; returns the (possibly new) mask.

    Without a trigger the weights only shrink by ``chi * alpha`` (skipped
    when ``decay`` is off).
    """
    if fired:
        _triggered_update(nodes, expand(x), target, norm_firing, mask, alpha, chi)
    elif decay:
        nodes.weights -= chi * alpha * nodes.weights
    return mask


def inclusion_probabilities(mask_scores, budget, epsilon):
    n = len(mask_scores)
    greedy = top_budget(mask_scores, budget)
    return epsilon * budget / n + (1.0 - epsilon) * greedy, greedy


def observe_partial(rng, scores, budget, epsilon):
    """Pick the attributes observed this step and their inclusion probabilities."""
    if not 0.0 < epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in (0, 1], got {epsilon}")
    n = len(scores)
    prob, greedy = inclusion_probabilities(scores, budget, epsilon)
    if rng.random() < epsilon:
        observed = np.zeros(n, dtype=bool)
        observed[rng.choice(n, size=budget, replace=False)] = True
    else:
        observed = greedy
    return observed, prob


def rescaled_expansion(x, observed, prob):
    """Expanded input with unobserved slots zeroed and observed ones divided by p_j."""
    x_e = expand(np.where(observed, x, 0.0))
    factor = np.where(observed, 1.0 / prob, 0.0)
    x_e[1::2] *= factor
    x_e[2::2] *= factor
    return x_e


def gofs_partial_step(nodes: OutputNode, x, target, norm_firing, mask: FeatureMask, fired,
                      observed, prob, alpha=ALPHA, chi=CHI):
    """One partial-input selection step on the attributes in ``observed``."""
    if fired:
        x_hat_e = rescaled_expansion(x, observed, prob)
        _triggered_update(nodes, x_hat_e, target, norm_firing, mask, alpha, chi)
    return mask
