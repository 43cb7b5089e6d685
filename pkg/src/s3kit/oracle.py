"""Brute-force references for checking the pruners.

Nothing here touches the Schur-update code paths: every loss comes from a
fresh dense solve of the constrained quadratic.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from math import comb, prod

import numpy as np

from .errors import Singular, TooLarge
from .spec import SparsitySpec

MAX_MASKS = 10**6


@dataclass
class OracleResult:
    best_mask: tuple[int, ...]
    best_loss: float
    all_losses: dict[tuple[int, ...], float]


def exact_compensated_loss(W_row, H_damped, zero_set) -> tuple[float, np.ndarray]:
    """Minimum of ``0.5 dw^T H dw`` subject to ``(w + dw)[zero_set] = 0``.

    Returns the loss and the compensated row.
    """
    w = np.asarray(W_row, dtype=np.float64).ravel()
    H = np.asarray(H_damped, dtype=np.float64)
    Z = np.asarray(sorted(set(int(e) for e in zero_set)), dtype=np.int64)
    if Z.size == 0:
        return 0.0, w.copy()
    F = np.setdiff1d(np.arange(w.size), Z)
    dw = np.zeros_like(w)
    dw[Z] = -w[Z]
    if F.size:
        try:
            dw[F] = np.linalg.solve(H[np.ix_(F, F)], -H[np.ix_(F, Z)] @ dw[Z])
        except np.linalg.LinAlgError as exc:
            raise Singular(str(exc)) from None
    loss = 0.5 * float(dw @ H @ dw)
    out = w + dw
    out[Z] = 0.0
    return loss, out


def matrix_compensated_loss(W, H_damped, zero_elements) -> float:
    """Sum of per-row compensated losses for flat element indices of ``W``."""
    W = np.atleast_2d(np.asarray(W, dtype=np.float64))
    K = W.shape[1]
    by_row: dict[int, list[int]] = {}
    for e in zero_elements:
        by_row.setdefault(int(e) // K, []).append(int(e) % K)
    return sum(exact_compensated_loss(W[m], H_damped, cols)[0] for m, cols in by_row.items())


def brute_force_best_mask(spec: SparsitySpec, W_row, H_damped) -> OracleResult:
    """Exhaustively search every per-scope keep-set for the lowest loss.

    Masks are reported as sorted tuples of retained block ordinals; ties
    resolve to the first mask in enumeration order.
    """
    n, k = spec.blocks_per_scope, spec.keep
    total = comb(n, k) ** spec.num_scopes
    if total > MAX_MASKS:
        raise TooLarge(f"{total} masks exceed the enumeration limit {MAX_MASKS}")
    W = np.atleast_2d(np.asarray(W_row, dtype=np.float64))
    choices = [list(itertools.combinations(blocks.tolist(), k)) for blocks in spec.scope_table]
    all_blocks = set(range(spec.num_blocks))
    losses: dict[tuple[int, ...], float] = {}
    best, best_loss = None, np.inf
    for combo in itertools.product(*choices):
        kept = tuple(sorted(itertools.chain.from_iterable(combo)))
        pruned = sorted(all_blocks.difference(kept))
        zero = spec.block_table[pruned].ravel() if pruned else []
        loss = matrix_compensated_loss(W, H_damped, zero)
        losses[kept] = loss
        if loss < best_loss:
            best, best_loss = kept, loss
    return OracleResult(best, float(best_loss), losses)


def enumerate_feasible_sparsities(spec: SparsitySpec) -> set:
    """Distinct per-scope pruned fractions reachable by any mask of one scope."""
    n = spec.blocks_per_scope
    seen = set()
    for r in range(n + 1):
        for kept in itertools.combinations(range(n), r):
            seen.add(Fraction(n - len(kept), n))
    return seen


def count_masks(spec: SparsitySpec) -> int:
    return prod([comb(spec.blocks_per_scope, spec.keep)] * spec.num_scopes)
