"""Block saliencies, OBS updates and scope-structured pruning.

Weights are an ``M x K`` matrix whose flattened row-major storage is the
physical tensor addressed by a spec. Each output row carries its own copy
of the inverse Hessian; a block spanning several rows contributes the sum
of its per-row terms.
"""

from __future__ import annotations

import enum
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .errors import AlreadyPruned, GridShapeMismatch, SingularBlock, SpecInvalid, ZeroReference
from .hessian import (
    DEFAULT_LAMBDA_REL,
    HessianState,
    damp_and_invert,
    empirical_hessian,
    invert_block,
    schur_eliminate,
)
from .spec import (
    CouplingSpec,
    MaskGrid,
    SparsitySpec,
    coupled_hard_threshold,
    hard_threshold,
    threshold_scopes,
    validate_spec,
)


class Method(enum.Enum):
    S_OBD = "s-obd"
    S_OBS = "s-obs"
    WANDA = "wanda"
    SPARSEGPT_LIKE = "sparsegpt"


class OrderMode(enum.Enum):
    STATIC = "static"
    GREEDY_RECOMPUTE = "greedy"


@dataclass(frozen=True)
class PruneConfig:
    method: Method = Method.S_OBS
    order_mode: OrderMode = OrderMode.GREEDY_RECOMPUTE
    lambda_rel: float = DEFAULT_LAMBDA_REL
    keep: Optional[int] = None
    threads: int = 1


@dataclass
class ScopeRecord:
    scope: int
    retained: list[int]
    pruned_saliency_sum: float


@dataclass
class PruneReport:
    method: Method
    order_mode: OrderMode
    per_block_saliency: np.ndarray
    retained: MaskGrid
    predicted_loss_increase: float
    relative_output_error: float = float("nan")
    wall_time: float = 0.0
    per_scope: list[ScopeRecord] = field(default_factory=list)
    fallback_rows: list[int] = field(default_factory=list)

    def to_json(self, include_time: bool = True) -> dict:
        out = {
            "method": self.method.value,
            "order_mode": self.order_mode.value,
            "per_scope": [
                {
                    "scope": r.scope,
                    "retained": list(r.retained),
                    "pruned_saliency_sum": float(r.pruned_saliency_sum),
                }
                for r in self.per_scope
            ],
            "predicted_loss_increase": float(self.predicted_loss_increase),
            "relative_output_error": float(self.relative_output_error),
            "fallback_rows": list(self.fallback_rows),
        }
        if include_time:
            out["wall_time_s"] = float(self.wall_time)
        return out


# --------------------------------------------------------------------------
# helpers


def _as_matrix(spec: SparsitySpec, W) -> np.ndarray:
    W = np.array(W, dtype=np.float64)
    if W.ndim == 1:
        W = W[None, :]
    if W.ndim != 2:
        raise ValueError(f"weights must be a matrix, got shape {W.shape}")
    if W.size != spec.physical.size:
        raise ValueError(f"weights of size {W.size} do not match tensor size {spec.physical.size}")
    if not np.all(np.isfinite(W)):
        raise ValueError("weights contain non-finite values")
    return W


def _with_keep(spec: SparsitySpec, keep: Optional[int]) -> SparsitySpec:
    if keep is not None and keep != spec.keep:
        spec = replace(spec, keep=keep)
    violations = validate_spec(spec)
    if violations:
        raise SpecInvalid(violations)
    return spec


def _block_rows(spec: SparsitySpec, K: int) -> list[list[tuple[int, np.ndarray]]]:
    """For every block, its ``(row, sorted columns)`` pieces."""
    out = []
    for elems in spec.block_table:
        rows, cols = np.divmod(np.sort(elems), K)
        pieces = []
        for m in np.unique(rows):
            pieces.append((int(m), cols[rows == m]))
        out.append(pieces)
    return out


def _row_states(state, M: int) -> list[HessianState]:
    if isinstance(state, HessianState):
        return [state] * M
    states = list(state)
    if len(states) != M:
        raise ValueError(f"need {M} per-row states, got {len(states)}")
    return states


# --------------------------------------------------------------------------
# saliencies


def saliency_obd(spec: SparsitySpec, W, diagH) -> np.ndarray:
    """Half the diagonal-Hessian-weighted squared norm of each block."""
    W = _as_matrix(spec, W)
    diagH = np.asarray(diagH, dtype=np.float64).ravel()
    if diagH.size != W.shape[1]:
        raise ValueError(f"need {W.shape[1]} diagonal entries, got {diagH.size}")
    if np.any(diagH < 0):
        raise ValueError("diagonal Hessian entries must be non-negative")
    per_elem = 0.5 * (W**2 * diagH[None, :]).ravel()
    return per_elem[spec.block_table].sum(axis=1)


def saliency_wanda(spec: SparsitySpec, W, X) -> np.ndarray:
    W = _as_matrix(spec, W)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != W.shape[1]:
        raise ValueError(f"activations {X.shape} do not match {W.shape[1]} input features")
    per_elem = (np.abs(W) * np.linalg.norm(X, axis=0)[None, :]).ravel()
    return per_elem[spec.block_table].sum(axis=1)


def saliency_obs(spec: SparsitySpec, W, state) -> np.ndarray:
    """``0.5 * w_j^T ([H^-1]_jj)^-1 w_j`` per block, summed over the rows it spans.

    ``state`` is one :class:`HessianState` shared by all rows or a sequence
    with one state per row.
    """
    W = _as_matrix(spec, W)
    states = _row_states(state, W.shape[0])
    out = np.zeros(spec.num_blocks)
    for j, pieces in enumerate(_block_rows(spec, W.shape[1])):
        for m, cols in pieces:
            st = states[m]
            if st.pruned.intersection(cols.tolist()):
                raise AlreadyPruned(f"block {j} touches pruned coordinates in row {m}")
            w = W[m, cols]
            out[j] += 0.5 * w @ invert_block(st.H_inv[np.ix_(cols, cols)]) @ w
    return out


def obs_update(W_row, state: HessianState, elements) -> np.ndarray:
    """Zero ``elements`` of a row and optimally compensate the rest."""
    w = np.array(W_row, dtype=np.float64).ravel()
    idx = np.asarray(sorted(int(e) for e in elements), dtype=np.int64)
    if idx.size == 0:
        return w
    if state.pruned.intersection(idx.tolist()):
        raise AlreadyPruned("elements already pruned")
    Hinv = state.H_inv
    w = w - Hinv[:, idx] @ (invert_block(Hinv[np.ix_(idx, idx)]) @ w[idx])
    w[idx] = 0.0
    return w


def aggregate_coupled_saliency(
    coupling: CouplingSpec, per_member_scores: Union[Mapping[str, Sequence[float]], Sequence]
) -> np.ndarray:
    """Sum member block scores onto the common (permuted) block grid."""
    if isinstance(per_member_scores, Mapping):
        per_member_scores = [per_member_scores[m.tensor_id] for m in coupling.members]
    if len(per_member_scores) != len(coupling.members):
        raise GridShapeMismatch("one score vector per coupling member required")
    total = np.zeros(coupling.num_blocks)
    for m, bmap, scores in zip(coupling.members, coupling.member_block_maps, per_member_scores):
        scores = np.asarray(scores, dtype=np.float64).ravel()
        if scores.size != m.spec.num_blocks:
            raise GridShapeMismatch(
                f"{m.tensor_id}: {scores.size} scores for {m.spec.num_blocks} blocks"
            )
        total += scores[bmap]
    return total


# --------------------------------------------------------------------------
# error metrics


def relative_output_error(X, W, W_hat) -> float:
    """``||X (W_hat - W)^T||_F / ||X W^T||_F``."""
    X = np.asarray(X, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    W_hat = np.asarray(W_hat, dtype=np.float64)
    if W.shape != W_hat.shape or X.shape[-1] != W.shape[-1]:
        raise ValueError("shape mismatch between X, W and W_hat")
    ref = np.linalg.norm(X @ W.T)
    if ref == 0:
        raise ZeroReference("||X W^T|| is zero")
    return float(np.linalg.norm(X @ (W_hat - W).T) / ref)


def hessian_relative_error(H, W, W_hat) -> float:
    """The same ratio computed from ``H = X^T X / N`` instead of ``X``."""
    H = np.asarray(H, dtype=np.float64)
    W = np.atleast_2d(np.asarray(W, dtype=np.float64))
    D = np.atleast_2d(np.asarray(W_hat, dtype=np.float64)) - W
    ref = np.einsum("mi,ij,mj->", W, H, W)
    if ref <= 0:
        raise ZeroReference("tr(W H W^T) is zero")
    num = max(float(np.einsum("mi,ij,mj->", D, H, D)), 0.0)
    return float(np.sqrt(num / ref))


# --------------------------------------------------------------------------
# structured OBS


class _RowGroupPruner:
    """Runs the per-scope OBS loop for a set of rows that share scopes."""

    def __init__(self, W, base_inv, block_rows, mode):
        self.W = W
        self.base_inv = base_inv
        self.block_rows = block_rows
        self.mode = mode
        self.inv: dict[int, np.ndarray] = {}

    def _inv(self, m):
        if m not in self.inv:
            self.inv[m] = self.base_inv.copy()
        return self.inv[m]

    def saliency(self, j):
        s = 0.0
        for m, cols in self.block_rows[j]:
            w = self.W[m, cols]
            s += 0.5 * w @ invert_block(self._inv(m)[np.ix_(cols, cols)]) @ w
        return s

    def prune(self, j):
        for m, cols in self.block_rows[j]:
            Hinv = self._inv(m)
            Binv = invert_block(Hinv[np.ix_(cols, cols)])
            w = self.W[m]
            w -= Hinv[:, cols] @ (Binv @ w[cols])
            w[cols] = 0.0
            schur_eliminate(Hinv, cols, Binv)

    def run_scope(self, blocks, keep):
        blocks = list(blocks)
        first = np.array([self.saliency(j) for j in blocks])
        incurred = 0.0
        if self.mode is OrderMode.STATIC:
            kept = threshold_scopes(np.arange(len(blocks))[None, :], first, keep)
            doomed = [i for i in range(len(blocks)) if not kept[i]]
            # increasing saliency; among ties the higher ordinal goes first
            doomed.sort(key=lambda i: (first[i], -i))
            for i in doomed:
                incurred += self.saliency(blocks[i])
                self.prune(blocks[i])
            retained = [blocks[i] for i in range(len(blocks)) if kept[i]]
        else:
            remaining = list(range(len(blocks)))
            scores = first.copy()
            while len(remaining) > keep:
                cur = np.array([scores[i] for i in remaining])
                low = np.flatnonzero(cur == cur.min())[-1]
                i = remaining.pop(int(low))
                incurred += scores[i]
                self.prune(blocks[i])
                for r in remaining:
                    scores[r] = self.saliency(blocks[r])
            retained = [blocks[i] for i in remaining]
        return first, retained, incurred


def _row_groups(spec: SparsitySpec, K: int, M: int) -> list[tuple[list[int], list[int]]]:
    """Partition rows into groups linked by shared scopes.

    Returns ``(rows, scope ordinals)`` per group, both ascending.
    """
    parent = list(range(M))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    scope_rows = []
    for blocks in spec.scope_table:
        rows = np.unique(spec.block_table[blocks].ravel() // K)
        scope_rows.append(rows)
        for r in rows[1:]:
            ra, rb = find(int(rows[0])), find(int(r))
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
    groups: dict[int, tuple[list[int], list[int]]] = {}
    for s, rows in enumerate(scope_rows):
        root = find(int(rows[0]))
        groups.setdefault(root, ([], []))[1].append(s)
    for m in range(M):
        root = find(m)
        if root in groups:
            groups[root][0].append(m)
    return [groups[k] for k in sorted(groups)]


def prune_scope_obs(spec: SparsitySpec, W, state: HessianState, config: PruneConfig = PruneConfig()):
    """Structured OBS over every scope of ``spec``.

    Returns ``(pruned W, MaskGrid, PruneReport)``. Rows that hit a singular
    inverse-Hessian block fall back to magnitude pruning and are listed in
    ``report.fallback_rows``.
    """
    t0 = time.perf_counter()
    spec = _with_keep(spec, config.keep)
    W0 = _as_matrix(spec, W)
    M, K = W0.shape
    if state.dim != K:
        raise ValueError(f"Hessian is {state.dim}x{state.dim}, weights have {K} columns")
    block_rows = _block_rows(spec, K)
    groups = _row_groups(spec, K, M)

    def work(group):
        rows, scopes = group
        Wg = W0.copy()
        runner = _RowGroupPruner(Wg, state.H_inv, block_rows, config.order_mode)
        out = []
        try:
            for s in scopes:
                out.append((s, *runner.run_scope(spec.scope_table[s], spec.keep)))
        except SingularBlock:
            return _magnitude_group(spec, W0, rows, scopes), True
        return (Wg[rows], out), False

    threads = max(1, int(config.threads or 1))
    if threads > 1 and len(groups) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, groups))
    else:
        results = [work(g) for g in groups]

    W_out = W0.copy()
    saliency = np.zeros(spec.num_blocks)
    retained = np.zeros(spec.num_blocks, dtype=bool)
    records, fallback = [], []
    for (rows, _), ((new_rows, scope_out), failed) in zip(groups, results):
        W_out[rows] = new_rows
        if failed:
            fallback += rows
        for s, first, kept, incurred in scope_out:
            saliency[spec.scope_table[s]] = first
            retained[kept] = True
            records.append(ScopeRecord(int(s), sorted(int(j) for j in kept), float(incurred)))
    records.sort(key=lambda r: r.scope)

    mask = MaskGrid(spec, tuple(retained))
    W_out.ravel()[mask.dense() == 0] = 0.0
    report = PruneReport(
        method=Method.S_OBS,
        order_mode=config.order_mode,
        per_block_saliency=saliency,
        retained=mask,
        predicted_loss_increase=float(sum(r.pruned_saliency_sum for r in records)),
        relative_output_error=_safe_h_error(state.H, W0, W_out),
        per_scope=records,
        fallback_rows=sorted(fallback),
    )
    report.wall_time = time.perf_counter() - t0
    return W_out, mask, report


def _magnitude_group(spec, W0, rows, scopes):
    scores = (W0.ravel() ** 2)[spec.block_table].sum(axis=1)
    Wg = W0.copy()
    out = []
    for s in scopes:
        blocks = spec.scope_table[s]
        kept = threshold_scopes(np.arange(len(blocks))[None, :], scores[blocks], spec.keep)
        pruned = blocks[~kept]
        Wg.ravel()[spec.block_table[pruned].ravel()] = 0.0
        out.append((s, scores[blocks], list(blocks[kept]), 0.0))
    return Wg[rows], out


def _safe_h_error(H, W, W_hat) -> float:
    try:
        return hessian_relative_error(H, W, W_hat)
    except ZeroReference:
        return float("nan")


# --------------------------------------------------------------------------
# compensation-free pruners


def _apply_scores(spec, W0, scores, method, H, t0):
    mask = hard_threshold(spec, scores)
    W_out = (W0.ravel() * mask.dense()).reshape(W0.shape)
    records = []
    for s, blocks in enumerate(spec.scope_table):
        kept = [int(j) for j in blocks if mask.retained[j]]
        lost = float(sum(scores[j] for j in blocks if not mask.retained[j]))
        records.append(ScopeRecord(s, kept, lost))
    report = PruneReport(
        method=method,
        order_mode=OrderMode.STATIC,
        per_block_saliency=np.asarray(scores, dtype=np.float64),
        retained=mask,
        predicted_loss_increase=float(sum(r.pruned_saliency_sum for r in records)),
        relative_output_error=_safe_h_error(H, W0, W_out) if H is not None else float("nan"),
        per_scope=records,
    )
    report.wall_time = time.perf_counter() - t0
    return W_out, mask, report


def prune_obd(spec: SparsitySpec, W, H, keep: Optional[int] = None):
    """Keep the top blocks by diagonal-Hessian saliency; no compensation."""
    t0 = time.perf_counter()
    spec = _with_keep(spec, keep)
    W0 = _as_matrix(spec, W)
    H = np.asarray(H, dtype=np.float64)
    return _apply_scores(spec, W0, saliency_obd(spec, W0, np.diag(H)), Method.S_OBD, H, t0)


def prune_wanda(spec: SparsitySpec, W, X, keep: Optional[int] = None):
    t0 = time.perf_counter()
    spec = _with_keep(spec, keep)
    W0 = _as_matrix(spec, W)
    H = empirical_hessian(X)
    return _apply_scores(spec, W0, saliency_wanda(spec, W0, X), Method.WANDA, H, t0)


def prune_coupled(coupling: CouplingSpec, weights: Mapping[str, np.ndarray], diag_hessians: Mapping[str, np.ndarray]):
    """Coupled diagonal-Hessian pruning: aggregate, threshold, apply.

    Returns the pruned tensors and masks keyed by tensor id.
    """
    scores = {
        m.tensor_id: saliency_obd(m.spec, weights[m.tensor_id], diag_hessians[m.tensor_id])
        for m in coupling.members
    }
    masks = coupled_hard_threshold(coupling, aggregate_coupled_saliency(coupling, scores))
    pruned = {}
    for m in coupling.members:
        W = np.asarray(weights[m.tensor_id], dtype=np.float64)
        pruned[m.tensor_id] = (W.ravel() * masks[m.tensor_id].dense()).reshape(W.shape)
    return pruned, masks


# --------------------------------------------------------------------------
# column-sequential baseline


def sparsegpt_like(spec: SparsitySpec, W, state: HessianState, config: PruneConfig = PruneConfig()):
    """Column-sequential OBS with one shared inverse-Hessian trajectory.

    Columns are visited left to right. When the sweep reaches the first
    column of a scope, that scope's blocks are ranked by ``sum w^2 / d^2``
    using the current weights (``d`` is the diagonal of the upper Cholesky
    factor of ``H^-1``) and the losers are masked. Each column's pruning
    error is then pushed onto the columns to its right.
    """
    t0 = time.perf_counter()
    spec = _with_keep(spec, config.keep)
    W0 = _as_matrix(spec, W)
    M, K = W0.shape
    if state.dim != K:
        raise ValueError(f"Hessian is {state.dim}x{state.dim}, weights have {K} columns")

    starts: dict[int, list[int]] = {}
    for s, blocks in enumerate(spec.scope_table):
        elems = spec.block_table[blocks].ravel()
        rows = np.unique(elems // K)
        if rows.size != 1:
            raise SpecInvalid([f"scope {s} spans rows {rows.tolist()}; column-sequential pruning needs row-local scopes"])
        starts.setdefault(int((elems % K).min()), []).append(s)

    U = np.linalg.cholesky(state.H_inv).T
    d = np.diag(U)
    Wc = W0.copy()
    flat = Wc.ravel()
    pruned = np.zeros(M * K, dtype=bool)
    saliency = np.zeros(spec.num_blocks)
    retained = np.zeros(spec.num_blocks, dtype=bool)
    loss = 0.0
    for i in range(K):
        for s in starts.get(i, ()):
            blocks = spec.scope_table[s]
            elems = spec.block_table[blocks]
            scores = (flat[elems] ** 2 / d[elems % K] ** 2).sum(axis=1)
            saliency[blocks] = scores
            kept = threshold_scopes(np.arange(len(blocks))[None, :], scores, spec.keep)
            retained[blocks[kept]] = True
            pruned[elems[~kept].ravel()] = True
        col = Wc[:, i].copy()
        q = np.where(pruned.reshape(M, K)[:, i], 0.0, col)
        err = (col - q) / d[i]
        loss += 0.5 * float(err @ err)
        Wc[:, i:] -= np.outer(err, U[i, i:])
        Wc[:, i] = q

    mask = MaskGrid(spec, tuple(retained))
    records = []
    for s, blocks in enumerate(spec.scope_table):
        kept = [int(j) for j in blocks if retained[j]]
        lost = float(sum(saliency[j] for j in blocks if not retained[j])) / 2
        records.append(ScopeRecord(s, kept, lost))
    report = PruneReport(
        method=Method.SPARSEGPT_LIKE,
        order_mode=OrderMode.STATIC,
        per_block_saliency=saliency,
        retained=mask,
        predicted_loss_increase=loss,
        relative_output_error=_safe_h_error(state.H, W0, Wc),
        per_scope=records,
    )
    report.wall_time = time.perf_counter() - t0
    return Wc, mask, report


# --------------------------------------------------------------------------
# dispatch


def prune(spec: SparsitySpec, W, X, config: PruneConfig = PruneConfig()):
    """Prune ``W`` with calibration inputs ``X`` using ``config.method``.

    The report's ``relative_output_error`` is measured against ``X``.
    """
    X = np.asarray(X, dtype=np.float64)
    H = empirical_hessian(X)
    if config.method is Method.S_OBD:
        result = prune_obd(spec, W, H, config.keep)
    elif config.method is Method.WANDA:
        result = prune_wanda(spec, W, X, config.keep)
    else:
        state = damp_and_invert(H, config.lambda_rel)
        fn = prune_scope_obs if config.method is Method.S_OBS else sparsegpt_like
        result = fn(spec, W, state, config)
    W_out, mask, report = result
    W0 = _as_matrix(spec, W)
    try:
        report.relative_output_error = relative_output_error(X, W0, W_out)
    except ZeroReference:
        report.relative_output_error = float("nan")
    return W_out, mask, report
