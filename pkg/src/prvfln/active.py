"""Entropy-gated active learning: train only on samples with ambiguous cloud membership."""

from dataclasses import dataclass

import numpy as np

# rounding keeps the entropy of an exactly uniform vector a hair below 1
UNIFORM_TOL = 1e-12


@dataclass
class EsemGateState:
    delta_threshold: float = 0.5
    warmup: int = 10
    admitted: int = 0
    seen: int = 0


def neighborhood_probabilities(lo_spatial, hi_spatial, q_mean):
    """Probability of the sample belonging to each cloud.

    Each cloud's interval density is type-reduced with the mean design
    factor and the result normalised over clouds.
    """
    lam = (1.0 - q_mean) * np.asarray(hi_spatial) + q_mean * np.asarray(lo_spatial)
    return lam / lam.sum()


def normalized_entropy(probs):
    """Shannon entropy divided by ``ln R``; 1.0 for a uniform distribution."""
    p = np.asarray(probs, dtype=float)
    if p.size < 2:
        return 1.0
    nz = p[p > 0]
    h = float(-(nz * np.log(nz)).sum() / np.log(p.size))
    return 1.0 if h > 1.0 - UNIFORM_TOL else h


def gate_decision(state: EsemGateState, entropy, n_clouds) -> bool:
    """Admit during warmup, with fewer than two clouds, or at high entropy; count it."""
    admit = state.seen < state.warmup or n_clouds < 2 or entropy >= state.delta_threshold
    state.seen += 1
    state.admitted += int(admit)
    return bool(admit)


def entropy_gate(state: EsemGateState, probs) -> bool:
    """Decide whether the sample is worth training on, and count it."""
    probs = np.asarray(probs)
    return gate_decision(state, normalized_entropy(probs), probs.size)
