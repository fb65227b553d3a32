"""CTC loss, its exact gradient, and greedy decoding.

Logits are normalized with a log-softmax internally, so both raw
activations and log-probabilities are accepted. Gradients are taken with
respect to the pre-softmax activations.
"""

from __future__ import annotations

import numpy as np

from .. import _backend
from .vocab import BLANK


class InfeasibleAlignmentError(ValueError):
    """The target needs more frames than the logits provide."""


def log_softmax(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    m = np.max(z, axis=-1, keepdims=True)
    shifted = z - m
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def min_frames(target) -> int:
    """Shortest input that admits an alignment: one frame per token plus a
    blank between each pair of repeated neighbours."""
    target = list(target)
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


def extend_with_blanks(target) -> np.ndarray:
    ext = np.zeros(2 * len(target) + 1, dtype=np.int64)
    ext[1::2] = np.asarray(target, dtype=np.int64)
    return ext


def _check(logits, target):
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2 or logits.shape[0] < 1:
        raise ValueError(f"logits must be a non-empty (T, V) matrix, got shape {logits.shape}")
    target = tuple(int(t) for t in target)
    V = logits.shape[1]
    for t in target:
        if not 0 < t < V:
            raise ValueError(f"target id {t} out of range for {V} classes")
    need = min_frames(target)
    if logits.shape[0] < need:
        raise InfeasibleAlignmentError(
            f"target of {len(target)} tokens needs >= {need} frames, got {logits.shape[0]}"
        )
    return logits, target


def ctc_loss_and_grad(logits, target, need_grad: bool = True):
    logits, target = _check(logits, target)
    lp = log_softmax(logits)
    ext = extend_with_blanks(target)
    alpha, beta = _backend.ctc_alpha_beta(lp, ext)
    S = ext.shape[0]
    tail = alpha[-1, S - 1] if S == 1 else np.logaddexp(alpha[-1, S - 1], alpha[-1, S - 2])
    if tail == -np.inf:
        raise InfeasibleAlignmentError("no admissible alignment for this target")
    loss = -float(tail)
    if not need_grad:
        return loss, None
    occ = np.exp(alpha + beta + loss)  # per-state posteriors, rows sum to 1
    grad = np.exp(lp)
    for s in range(S):
        grad[:, ext[s]] -= occ[:, s]
    return loss, grad


def ctc_loss(logits, target) -> float:
    return ctc_loss_and_grad(logits, target, need_grad=False)[0]


def ctc_grad(logits, target) -> np.ndarray:
    return ctc_loss_and_grad(logits, target)[1]


def collapse(path) -> tuple[int, ...]:
    out = []
    prev = None
    for p in path:
        p = int(p)
        if p != prev and p != BLANK:
            out.append(p)
        prev = p
    return tuple(out)


def greedy_decode(logits, vocab=None) -> tuple[int, ...]:
    """Per-frame argmax, merge repeats, drop blanks."""
    logits = np.asarray(logits)
    if logits.ndim != 2:
        raise ValueError("logits must be a (T, V) matrix")
    if vocab is not None and logits.shape[1] != len(vocab):
        raise ValueError(f"logit width {logits.shape[1]} != vocabulary size {len(vocab)}")
    return collapse(np.argmax(logits, axis=1))
