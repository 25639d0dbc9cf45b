"""Alignment-free sequence loss, its gradient, and greedy decoding.

The loss sums, over every frame labeling that collapses to the target, the
product of per-frame posteriors. All lattice math runs in log domain; minus
infinity marks impossible states and propagates through ``np.logaddexp``.
The blank symbol is always index 0.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BLANK = 0


class InfeasibleLength(Exception):
    """Target cannot be emitted in the given number of frames."""


def _probs(grid) -> np.ndarray:
    p = getattr(grid, "probs", grid)
    return np.asarray(p, dtype=np.float64)


def _target_labels(target) -> np.ndarray:
    labels = np.asarray(getattr(target, "tokens", target), dtype=np.int64)
    if labels.ndim != 1:
        raise ValueError("target must be a flat sequence of labels")
    if np.any(labels == BLANK):
        raise ValueError("blank must not appear in a target sequence")
    return labels


def _augment(labels: np.ndarray) -> np.ndarray:
    aug = np.full(2 * labels.size + 1, BLANK, dtype=np.int64)
    aug[1::2] = labels
    return aug


def min_frames(labels: np.ndarray) -> int:
    """Frames needed to emit the labels: length plus adjacent repeats."""
    repeats = int(np.sum(labels[1:] == labels[:-1])) if labels.size > 1 else 0
    return labels.size + repeats


@dataclass(eq=False)
class AlignmentLattice:
    """Forward/backward log-probabilities over the blank-augmented target."""

    log_alpha: np.ndarray  # (L, 2U+1)
    augmented: np.ndarray
    log_total: float
    target_key: tuple


def ctc_loss(grid, target) -> tuple[float, AlignmentLattice]:
    """Negative log-likelihood of the target under per-frame posteriors.

    Parameters
    ----------
    grid : PosteriorGrid or (L, V) array
        Rows of per-frame symbol probabilities.
    target : TokenSequence or sequence of int
        Blank-free label sequence.

    Returns
    -------
    (float, AlignmentLattice)
        The loss and the forward lattice needed by :func:`ctc_grad`.
    """
    probs = _probs(grid)
    labels = _target_labels(target)
    L = probs.shape[0]
    need = min_frames(labels)
    if L < need:
        raise InfeasibleLength(f"{L} frames cannot emit {labels.size} labels (need {need})")
    aug = _augment(labels)
    S = aug.size
    with np.errstate(divide="ignore"):
        logp = np.log(probs)

    log_alpha = np.full((L, S), -np.inf)
    log_alpha[0, 0] = logp[0, BLANK]
    if S > 1:
        log_alpha[0, 1] = logp[0, aug[1]]
    # states may also come from s-1, and from s-2 when that does not merge
    # a repeated label or hop over a required blank
    skip_ok = np.zeros(S, dtype=bool)
    skip_ok[2:] = (aug[2:] != BLANK) & (aug[2:] != aug[:-2])
    step = np.full(S, -np.inf)
    skip = np.full(S, -np.inf)
    for t in range(1, L):
        prev = log_alpha[t - 1]
        step[1:] = prev[:-1]
        acc = np.logaddexp(prev, step)
        if S > 2:
            skip[2:] = prev[:-2]
            acc = np.where(skip_ok, np.logaddexp(acc, skip), acc)
        log_alpha[t] = acc + logp[t, aug]

    tail = log_alpha[L - 1, S - 1]
    if S > 1:
        tail = np.logaddexp(tail, log_alpha[L - 1, S - 2])
    log_total = float(tail)
    lattice = AlignmentLattice(
        log_alpha=log_alpha,
        augmented=aug,
        log_total=log_total,
        target_key=(L, tuple(int(x) for x in labels)),
    )
    return -log_total, lattice


def ctc_grad(lattice: AlignmentLattice, grid, target) -> np.ndarray:
    """Gradient of the loss with respect to pre-softmax activations.

    Equals the posterior probabilities minus the per-frame label occupancy
    accumulated from the forward/backward lattice.
    """
    probs = _probs(grid)
    labels = _target_labels(target)
    L, V = probs.shape
    if lattice.target_key != (L, tuple(int(x) for x in labels)):
        raise ValueError("lattice does not belong to this (grid, target) pair")
    aug = lattice.augmented
    S = aug.size
    with np.errstate(divide="ignore"):
        logp = np.log(probs)

    # beta[t, s]: completion probability from state s after frame t, so that
    # alpha + beta sums to the total at every frame
    log_beta = np.full((L, S), -np.inf)
    log_beta[L - 1, S - 1] = 0.0
    if S > 1:
        log_beta[L - 1, S - 2] = 0.0
    skip_ok = np.zeros(S, dtype=bool)
    skip_ok[: S - 2] = (aug[2:] != BLANK) & (aug[2:] != aug[:-2])
    step = np.full(S, -np.inf)
    skip = np.full(S, -np.inf)
    for t in range(L - 2, -1, -1):
        nxt = log_beta[t + 1] + logp[t + 1, aug]
        step[:-1] = nxt[1:]
        acc = np.logaddexp(nxt, step)
        if S > 2:
            skip[:-2] = nxt[2:]
            acc = np.where(skip_ok, np.logaddexp(acc, skip), acc)
        log_beta[t] = acc

    log_gamma = lattice.log_alpha + log_beta - lattice.log_total
    occupancy = np.zeros((L, V))
    gamma = np.exp(log_gamma)
    for s in range(S):
        occupancy[:, aug[s]] += gamma[:, s]
    return probs - occupancy


def greedy_decode(grid) -> np.ndarray:
    """Per-frame argmax labels; ties break toward the lowest index."""
    return np.argmax(_probs(grid), axis=1)


def collapse(labels, vocab=None):
    """Merge runs of equal labels, then delete blanks.

    Returns a plain list of labels, or a :class:`codec.TokenSequence` when a
    vocabulary is given.
    """
    out: list[int] = []
    prev = None
    for raw in labels:
        label = int(raw)
        if label != prev:
            if label != BLANK:
                out.append(label)
            prev = label
    if vocab is None:
        return out
    from .codec import TokenSequence

    return TokenSequence(tokens=tuple(out), vocab=vocab)
