"""Output nodes and their recursive adaptation (firing-weighted RLS with weight decay)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _rows

# initial covariance scale for a fresh output node
PSI_INIT = 1e5
_MIN_FIRING = 1e-300


@dataclass
class OutputNode:
    weights: np.ndarray  # (2n+1, m)
    psi: np.ndarray  # (2n+1, 2n+1)

    def __len__(self):
        return len(self.weights)


def new_node(n_expanded, n_outputs, weights=None, psi_scale=PSI_INIT) -> OutputNode:
    if weights is None:
        weights = np.zeros((n_expanded, n_outputs))
    return OutputNode(np.array(weights, dtype=float), psi_scale * np.eye(n_expanded))


def empty_bank(n_expanded, n_outputs) -> OutputNode:
    return _rows.stack([], template=new_node(n_expanded, n_outputs))


def fwgrls_update(node: OutputNode, x_e, target, firing, decay_rate=1e-5):
    """One firing-weighted, decayed RLS step on each node of a bank (in place).

    ``firing`` scales the effective sample weight: the gain uses
    ``1/firing`` in place of the unit noise term of plain RLS.  Rows whose
    update turns non-finite are left untouched.  Returns the number of such
    rows.
    """
    x_e = np.asarray(x_e, dtype=float)
    target = np.asarray(target, dtype=float)
    firing = np.atleast_1d(np.asarray(firing, dtype=float))
    psi, weights = node.psi, node.weights
    single = psi.ndim == 2
    if single:
        psi, weights = psi[None], weights[None]

    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        px = psi @ x_e
        denom = 1.0 / np.maximum(firing, _MIN_FIRING) + px @ x_e
        gain = px / denom[:, None]
        new_psi = psi - gain[:, :, None] * px[:, None, :]
        new_psi = 0.5 * (new_psi + new_psi.transpose(0, 2, 1))
        err = target - np.einsum("j,rjo->ro", x_e, weights)
        new_w = weights - decay_rate * (new_psi @ weights) + gain[:, :, None] * err[:, None, :]
    ok = np.isfinite(new_w).all(axis=(1, 2)) & np.isfinite(new_psi).all(axis=(1, 2)) & (firing > 0)
    if ok.all():
        psi[...] = new_psi
        weights[...] = new_w
    else:
        psi[ok] = new_psi[ok]
        weights[ok] = new_w[ok]
    return int((~ok).sum())


def combine(norm_firing, x_e, weights):
    """Network output ``y_o = sum_i firing[o, i] * (x_e @ W_i)[o]``.

    ``norm_firing`` has shape (m, R); ``weights`` (R, 2n+1, m).
    """
    local = np.einsum("j,rjo->ro", x_e, weights)
    return np.einsum("or,ro->o", norm_firing, local)
