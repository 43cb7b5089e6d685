"""Empirical Hessians, damping, and Schur-complement pruning of the inverse."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import AlreadyPruned, NonFinite, SingularAfterDamping, SingularBlock

DEFAULT_LAMBDA_REL = 0.01
INVERSE_COND_LIMIT = 1e14
BLOCK_COND_LIMIT = 1e12


@dataclass(frozen=True, eq=False)
class CalibrationSet:
    samples: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.samples, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise ValueError(f"calibration samples must be N x K with N, K >= 1, got {X.shape}")
        if not np.all(np.isfinite(X)):
            raise NonFinite("calibration samples contain non-finite values")
        object.__setattr__(self, "samples", X)


@dataclass(frozen=True, eq=False)
class HessianState:
    """Hessian ``H``, damping ``lam`` and the maintained inverse.

    ``H_inv`` is the inverse of ``H + lam*I`` restricted to the unpruned
    coordinates; rows and columns of pruned coordinates are held at zero.
    """

    H: np.ndarray
    H_inv: np.ndarray
    damping: float
    pruned: frozenset = field(default_factory=frozenset)

    @property
    def dim(self) -> int:
        return self.H.shape[0]

    @property
    def H_damped(self) -> np.ndarray:
        return self.H + self.damping * np.eye(self.dim)

    def survivors(self) -> np.ndarray:
        return np.array([i for i in range(self.dim) if i not in self.pruned], dtype=np.int64)


def empirical_hessian(calib) -> np.ndarray:
    """``X^T X / N`` for an ``N x K`` calibration matrix."""
    if not isinstance(calib, CalibrationSet):
        calib = CalibrationSet(calib)
    X = calib.samples
    H = X.T @ X / X.shape[0]
    return (H + H.T) / 2


def damp_and_invert(H, lambda_rel: float = DEFAULT_LAMBDA_REL) -> HessianState:
    H = np.asarray(H, dtype=np.float64)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError(f"Hessian must be square, got {H.shape}")
    if not np.all(np.isfinite(H)):
        raise NonFinite("Hessian contains non-finite values")
    if lambda_rel < 0:
        raise ValueError("lambda_rel must be non-negative")
    lam = float(lambda_rel * np.mean(np.diag(H)))
    damped = H + lam * np.eye(H.shape[0])
    cond = np.linalg.cond(damped)
    if not np.isfinite(cond) or cond > INVERSE_COND_LIMIT:
        raise SingularAfterDamping(f"condition number {cond:.3g} after damping {lam:.3g}")
    H_inv = np.linalg.inv(damped)
    return HessianState(H, (H_inv + H_inv.T) / 2, lam, frozenset())


def _as_index(elements: Iterable[int]) -> np.ndarray:
    return np.asarray(sorted(int(e) for e in elements), dtype=np.int64)


def invert_block(B: np.ndarray) -> np.ndarray:
    """Inverse of a small symmetric block, refusing ill-conditioned ones."""
    cond = np.linalg.cond(B)
    if not np.isfinite(cond) or cond > BLOCK_COND_LIMIT:
        raise SingularBlock(f"inverse-Hessian block has condition number {cond:.3g}")
    inv = np.linalg.inv(B)
    return (inv + inv.T) / 2


def block_inv_submatrix(state: HessianState, elements) -> np.ndarray:
    idx = _as_index(elements)
    hit = state.pruned.intersection(idx.tolist())
    if hit:
        raise AlreadyPruned(f"elements already pruned: {sorted(hit)}")
    return state.H_inv[np.ix_(idx, idx)].copy()


def schur_eliminate(H_inv: np.ndarray, idx: np.ndarray, block_inv: np.ndarray | None = None) -> None:
    """Remove coordinates ``idx`` from an inverse in place.

    ``block_inv`` may carry a precomputed inverse of ``H_inv[idx, idx]``.
    """
    if idx.size == 0:
        return
    if block_inv is None:
        block_inv = invert_block(H_inv[np.ix_(idx, idx)])
    cols = H_inv[:, idx]
    H_inv -= cols @ block_inv @ cols.T
    H_inv[idx, :] = 0.0
    H_inv[:, idx] = 0.0
    H_inv[...] = 0.5 * (H_inv + H_inv.T)


def schur_prune(state: HessianState, elements) -> HessianState:
    idx = _as_index(elements)
    if idx.size == 0:
        return state
    hit = state.pruned.intersection(idx.tolist())
    if hit:
        raise AlreadyPruned(f"elements already pruned: {sorted(hit)}")
    H_inv = state.H_inv.copy()
    schur_eliminate(H_inv, idx)
    return HessianState(state.H, H_inv, state.damping, state.pruned | frozenset(idx.tolist()))
