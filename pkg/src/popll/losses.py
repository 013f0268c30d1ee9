"""Partial-label loss zoo.

Each loss comes in two forms: a per-example function operating on a single
probability (or score) row and a candidate set, and a batched functional used
during training that returns per-example losses plus the gradient of the
batch-mean loss w.r.t. the logits.

Forms of the baselines whose definitions live elsewhere:

* ``rc``    same weighted cross-entropy as PRODEN; weights are refreshed from
            an end-of-epoch snapshot of the current model.
* ``cc``    ``-log sum_{j in S} p_j``.
* ``lws``   ``sum_{j in S} w_j psi(p_j) + beta * sum_{j not in S} psi(1 - p_j) / (c - |S|)``
            with ``psi(u) = -log u``.
* ``cavl``  cross-entropy to the candidate with the largest class activation
            value ``|p_j * z_j|``.
* ``clpl``  ``phi(mean_{j in S} g_j) + sum_{j not in S} phi(-g_j)`` on raw
            scores with the squared hinge ``phi(u) = max(0, 1 - u)^2``.

All ``log`` arguments are clamped below at 1e-12.
"""

from __future__ import annotations

import enum
from typing import Iterable, Optional, Union

import numpy as np

from . import kernels
from .nn import LossFunctional, log_softmax, softmax

PROB_CLAMP = 1e-12

CandidateLike = Union[Iterable[int], np.ndarray]


class LossKind(str, enum.Enum):
    PRODEN = "proden"
    RC = "rc"
    CC = "cc"
    LWS = "lws"
    CAVL = "cavl"
    CLPL = "clpl"

    @property
    def uses_confidence(self) -> bool:
        """Whether the loss reads the confidence matrix."""
        return self in (LossKind.PRODEN, LossKind.RC, LossKind.LWS)


def as_mask(S: CandidateLike, c: int) -> np.ndarray:
    """Boolean membership vector for a candidate set given as mask or labels."""
    arr = np.asarray(S)
    if arr.dtype == bool:
        if arr.shape != (c,):
            raise ValueError(f"mask of shape {arr.shape} for {c} classes")
        mask = arr.copy()
    else:
        mask = np.zeros(c, dtype=bool)
        labels = arr.astype(int).ravel()
        if labels.size and (labels.min() < 0 or labels.max() >= c):
            raise ValueError(f"candidate labels {labels.tolist()} outside [0, {c})")
        mask[labels] = True
    if not mask.any():
        raise ValueError("candidate set is empty")
    return mask


def _neglog(p):
    return -np.log(np.maximum(p, PROB_CLAMP))


def _refresh(prob_row, mask):
    return kernels.normalize_weights(prob_row[None, :], mask[None, :])[0]


def proden(prob_row, S, w_row):
    """Weighted cross-entropy and the refreshed weights p_j / sum_{k in S} p_k."""
    p = np.asarray(prob_row, dtype=np.float64)
    mask = as_mask(S, p.size)
    w = np.asarray(w_row, dtype=np.float64)
    loss = float(np.sum(np.where(mask, w * _neglog(p), 0.0)))
    return loss, _refresh(p, mask)


def rc(prob_row, S, w_row):
    return proden(prob_row, S, w_row)


def cc(prob_row, S) -> float:
    p = np.asarray(prob_row, dtype=np.float64)
    mask = as_mask(S, p.size)
    return float(_neglog(p[mask].sum()))


def lws(prob_row, S, beta: float, w_row=None) -> float:
    """Leveraged weighted loss; ``w_row`` defaults to uniform over S."""
    if not (np.isfinite(beta) and beta > 0):
        raise ValueError("lws beta must be positive and finite")
    p = np.asarray(prob_row, dtype=np.float64)
    mask = as_mask(S, p.size)
    w = mask / mask.sum() if w_row is None else np.asarray(w_row, dtype=np.float64)
    inside = np.sum(w[mask] * _neglog(p[mask]))
    n_out = p.size - mask.sum()
    outside = _neglog(1.0 - p[~mask]).sum() / n_out if n_out else 0.0
    return float(inside + beta * outside)


def cavl_weights(logit_row, S) -> np.ndarray:
    """One-hot on the candidate with the largest class activation value."""
    z = np.asarray(logit_row, dtype=np.float64)
    mask = as_mask(S, z.size)
    activation = np.abs(softmax(z[None, :])[0] * z)
    w = np.zeros(z.size)
    w[kernels.restricted_argmax(activation[None, :], mask[None, :])[0]] = 1.0
    return w


def cavl_weights_from_activation(activation_row, S) -> np.ndarray:
    a = np.asarray(activation_row, dtype=np.float64)
    mask = as_mask(S, a.size)
    w = np.zeros(a.size)
    w[kernels.restricted_argmax(a[None, :], mask[None, :])[0]] = 1.0
    return w


def clpl(score_row, S) -> float:
    g = np.asarray(score_row, dtype=np.float64)
    mask = as_mask(S, g.size)
    hinge = lambda u: np.maximum(0.0, 1.0 - u) ** 2  # noqa: E731
    return float(hinge(g[mask].mean()) + hinge(-g[~mask]).sum())


def init_confidence(mask: np.ndarray) -> np.ndarray:
    """Uniform weights over each candidate set."""
    return kernels.normalize_weights(np.ones(mask.shape), mask)


def batch_loss(
    kind: Union[LossKind, str],
    mask: np.ndarray,
    weights: Optional[np.ndarray] = None,
    beta: float = 1.0,
) -> LossFunctional:
    """Training functional for one mini-batch.

    ``mask`` and ``weights`` are the batch rows of the candidate masks and
    confidence matrix. The returned callable gives per-example losses and the
    gradient of their mean w.r.t. the logits.
    """
    kind = LossKind(kind)
    if kind is LossKind.LWS and not (np.isfinite(beta) and beta > 0):
        raise ValueError("lws beta must be positive and finite")
    if kind.uses_confidence and weights is None:
        raise ValueError(f"{kind.value} needs a confidence matrix")
    if weights is None:
        weights = np.zeros(mask.shape)

    def fn(logits, probs):
        logp = log_softmax(logits)
        if kind is LossKind.CAVL:
            lead = kernels.restricted_argmax(np.abs(probs * logits), mask)
            w = np.zeros_like(probs)
            w[np.arange(len(w)), lead] = 1.0
            per, grad = kernels.loss_grad(kernels.WEIGHTED_CE, logits, logp, probs, mask, w, 0.0)
        else:
            code = {
                LossKind.PRODEN: kernels.WEIGHTED_CE,
                LossKind.RC: kernels.WEIGHTED_CE,
                LossKind.CC: kernels.CC,
                LossKind.LWS: kernels.LWS,
                LossKind.CLPL: kernels.CLPL,
            }[kind]
            per, grad = kernels.loss_grad(code, logits, logp, probs, mask, weights, beta)
        return per, grad / len(per)

    return fn
