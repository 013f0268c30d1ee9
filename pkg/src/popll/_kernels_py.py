"""Vectorised numpy implementations of the per-example kernels.

This is the reference backend and the fallback when the compiled extension
is unavailable. ``_kernels.pyx`` mirrors every function here.
"""

import numpy as np

LOG_CLAMP = np.log(1e-12)
PROB_CLAMP = 1e-12

WEIGHTED_CE, CC, LWS, CLPL = 0, 1, 2, 3


def restricted_argmax(scores, mask):
    """Per-row argmax over entries where ``mask`` is set, lowest index on ties."""
    return np.argmax(np.where(mask, scores, -np.inf), axis=1)


def purify(probs, mask, threshold):
    """Drop every candidate whose gap to the in-set leader is >= ``threshold``.

    Returns the new mask and the number of labels removed from each row.
    """
    mask = np.asarray(mask, dtype=bool)
    lead = restricted_argmax(probs, mask)
    top = probs[np.arange(len(probs)), lead]
    drop = mask & (top[:, None] - probs >= threshold)
    drop[np.arange(len(probs)), lead] = False
    return mask & ~drop, drop.sum(axis=1)


def normalize_weights(scores, mask):
    """Scores restricted to the mask and row-normalised; zero rows go uniform."""
    mask = np.asarray(mask, dtype=bool)
    w = np.where(mask, scores, 0.0)
    total = w.sum(axis=1, keepdims=True)
    flat = total[:, 0] <= 0
    if flat.any():
        w[flat] = mask[flat]
        total[flat] = mask[flat].sum(axis=1, keepdims=True)
    return w / total


def loss_grad(kind, logits, logp, probs, mask, weights, beta):
    """Per-example loss and its gradient w.r.t. the logits (not averaged)."""
    mask = np.asarray(mask, dtype=bool)
    if kind == WEIGHTED_CE:
        live = logp > LOG_CLAMP
        a = np.where(live, weights, 0.0)
        loss = -(weights * np.maximum(logp, LOG_CLAMP)).sum(axis=1)
        grad = probs * a.sum(axis=1, keepdims=True) - a
        return loss, grad
    if kind == CC:
        total = np.where(mask, probs, 0.0).sum(axis=1)
        live = total > PROB_CLAMP
        loss = -np.log(np.maximum(total, PROB_CLAMP))
        safe = np.where(live, total, 1.0)
        grad = probs - probs * mask / safe[:, None]
        grad[~live] = 0.0
        return loss, grad
    if kind == LWS:
        c = mask.shape[1]
        size = mask.sum(axis=1)
        outside = np.where(size < c, 1.0 / np.maximum(c - size, 1), 0.0)
        live = logp > LOG_CLAMP
        w_in = np.where(mask, weights, 0.0)
        a = np.where(live, w_in, 0.0)
        loss = -(w_in * np.maximum(logp, LOG_CLAMP)).sum(axis=1)
        grad = probs * a.sum(axis=1, keepdims=True) - a
        rest = 1.0 - probs
        off = ~mask
        loss = loss + beta * outside * np.where(
            off, -np.log(np.maximum(rest, PROB_CLAMP)), 0.0
        ).sum(axis=1)
        keep = off & (rest > PROB_CLAMP)
        g = np.where(keep, beta * outside[:, None] / np.where(keep, rest, 1.0), 0.0)
        grad = grad + probs * (g - (g * probs).sum(axis=1, keepdims=True))
        return loss, grad
    if kind == CLPL:
        size = mask.sum(axis=1)
        mean_in = np.where(mask, logits, 0.0).sum(axis=1) / size
        h_in = np.maximum(0.0, 1.0 - mean_in)
        h_out = np.where(mask, 0.0, np.maximum(0.0, 1.0 + logits))
        loss = h_in**2 + (h_out**2).sum(axis=1)
        grad = np.where(mask, (-2.0 * h_in / size)[:, None], 2.0 * h_out)
        return loss, grad
    raise ValueError(f"unknown loss kernel {kind}")
