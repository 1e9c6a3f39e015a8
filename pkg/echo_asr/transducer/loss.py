"""
Transducer loss (forward-backward in log space) и brute-force оракул.

Узел (t, u): blank -> (t+1, u), label y_{u+1} -> (t, u+1).
Путь обязан закончиться blank в (T-1, U), поэтому у (T, U) ровно
C(T+U-1, U) выравниваний.
"""

from __future__ import annotations

import itertools
import math
from typing import Sequence, Tuple

import numpy as np
from scipy.special import log_softmax, logsumexp, softmax

from echo_asr.errors import EmptyInputError, OracleTooLargeError, ShapeError, VocabError
from echo_asr.transducer.model import BLANK, LogitLattice

BRUTE_FORCE_LIMIT = 12


def alignment_count(T: int, U: int) -> int:
    return math.comb(T + U - 1, U)


def _validate(lattice: LogitLattice, labels: Sequence[int]) -> np.ndarray:
    if lattice.T == 0:
        raise EmptyInputError("lattice has no frames")
    lab = np.asarray(list(labels), dtype=np.int64)
    if lab.shape[0] != lattice.U:
        raise ShapeError("label length must equal lattice U", U=lattice.U, labels=int(lab.shape[0]))
    V = lattice.num_classes - 1
    if lab.size and (lab.min() < 1 or lab.max() > V):
        raise VocabError("label tokens must be in [1, V]", vocab_size=V)
    if not np.all(np.isfinite(lattice.logits)):
        raise ShapeError("lattice logits must be finite")
    return lab


def transducer_loss(lattice: LogitLattice, labels: Sequence[int]) -> Tuple[float, np.ndarray]:
    """Returns (negative log-likelihood, dLoss/dLogits)."""
    lab = _validate(lattice, labels)
    T, U = lattice.T, lattice.U
    lp = log_softmax(lattice.logits, axis=-1)
    blank = lp[:, :, BLANK]
    emit = lp[:, np.arange(U), lab] if U else np.zeros((T, 0))

    alpha = np.full((T, U + 1), -np.inf)
    alpha[0, 0] = 0.0
    for t in range(T):
        for u in range(U + 1):
            if t == 0 and u == 0:
                continue
            a = alpha[t - 1, u] + blank[t - 1, u] if t > 0 else -np.inf
            b = alpha[t, u - 1] + emit[t, u - 1] if u > 0 else -np.inf
            alpha[t, u] = np.logaddexp(a, b)

    beta = np.full((T, U + 1), -np.inf)
    beta[T - 1, U] = blank[T - 1, U]
    for t in range(T - 1, -1, -1):
        for u in range(U, -1, -1):
            if t == T - 1 and u == U:
                continue
            a = blank[t, u] + beta[t + 1, u] if t < T - 1 else -np.inf
            b = emit[t, u] + beta[t, u + 1] if u < U else -np.inf
            beta[t, u] = np.logaddexp(a, b)

    log_p = alpha[T - 1, U] + blank[T - 1, U]

    dlp = np.zeros_like(lp)
    dlp[: T - 1, :, BLANK] = -np.exp(alpha[: T - 1] + blank[: T - 1] + beta[1:] - log_p)
    dlp[T - 1, U, BLANK] = -np.exp(alpha[T - 1, U] + blank[T - 1, U] - log_p)
    if U:
        rows = np.arange(T)[:, None]
        cols = np.arange(U)[None, :]
        dlp[rows, cols, lab[None, :]] = -np.exp(alpha[:, :U] + emit + beta[:, 1:] - log_p)

    # через log_softmax: d/dlogits = dlp - softmax * sum(dlp) ; sum(dlp) на узле = -occupancy
    occupancy = np.exp(alpha + beta - log_p)
    grad = dlp + softmax(lattice.logits, axis=-1) * occupancy[:, :, None]
    return float(-log_p), grad


def brute_force_loss(lattice: LogitLattice, labels: Sequence[int]) -> float:
    """Явный перебор всех выравниваний. Только для проверки: T + U <= 12."""
    lab = _validate(lattice, labels)
    T, U = lattice.T, lattice.U
    if T + U > BRUTE_FORCE_LIMIT:
        raise OracleTooLargeError("brute-force enumeration limited to T + U <= 12", T=T, U=U)
    lp = log_softmax(lattice.logits, axis=-1)

    path_scores = []
    steps = T - 1 + U
    for label_steps in itertools.combinations(range(steps), U):
        chosen = set(label_steps)
        t = u = 0
        score = 0.0
        for i in range(steps):
            if i in chosen:
                score += lp[t, u, lab[u]]
                u += 1
            else:
                score += lp[t, u, BLANK]
                t += 1
        score += lp[T - 1, U, BLANK]
        path_scores.append(score)
    return float(-logsumexp(path_scores))
