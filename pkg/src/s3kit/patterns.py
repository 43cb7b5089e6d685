"""Catalog of canonical and experimental sparsity patterns.

Every pattern targets a dense row-major tensor (``phys`` is set), so element
indices are linear offsets into that tensor.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence, Union

from .errors import DimensionError, UnknownPattern
from .layout import DomainSpec, Layout
from .spec import CouplingLevel, CouplingMember, CouplingSpec, SparsitySpec, grid_coord_to_ordinal


def _need(cond: bool, msg: str):
    if not cond:
        raise DimensionError(msg)


def _positive(**dims):
    for name, v in dims.items():
        _need(isinstance(v, int) and v >= 1, f"{name} must be a positive integer, got {v!r}")


def _matrix(M: int, K: int) -> Layout:
    return Layout((M, K), (K, 1))


def unstructured(M: int, K: int, k: Optional[int] = None) -> SparsitySpec:
    _positive(M=M, K=K)
    phys = _matrix(M, K)
    keep = M * K // 2 if k is None else k
    return SparsitySpec(phys, (1, 1), (M, K), keep, phys=phys)


def nm(N: int, M: int, K: int, rows: int = 1) -> SparsitySpec:
    """Keep ``N`` of every ``M`` consecutive elements along each row."""
    _positive(N=N, M=M, K=K, rows=rows)
    _need(N <= M, f"N={N} exceeds M={M}")
    _need(K % M == 0, f"M={M} does not divide K={K}")
    phys = _matrix(rows, K)
    return SparsitySpec(phys, (1, 1), (1, M), N, phys=phys)


def two_four(M: int, K: int) -> SparsitySpec:
    _positive(M=M, K=K)
    _need(K % 4 == 0, f"4 does not divide K={K}")
    phys = _matrix(M, K)
    return SparsitySpec(phys, (1, 1), (1, 4), 2, phys=phys)


def four_eight(M: int, K: int) -> SparsitySpec:
    _positive(M=M, K=K)
    _need(K % 8 == 0, f"8 does not divide K={K}")
    phys = _matrix(M, K)
    return SparsitySpec(phys, (1, 2), (1, 4), 2, phys=phys)


def block_bxb(M: int, K: int, b: int, k: Optional[int] = None) -> SparsitySpec:
    _positive(M=M, K=K, b=b)
    _need(M % b == 0 and K % b == 0, f"b={b} must divide M={M} and K={K}")
    phys = _matrix(M, K)
    per_row = K // b
    return SparsitySpec(phys, (b, b), (1, per_row), max(1, per_row // 2) if k is None else k, phys=phys)


def channel(C: int, K: int, k: Optional[int] = None) -> SparsitySpec:
    """Output-channel pruning; ``K`` is the flattened fan-in (C_in*H*W)."""
    _positive(C=C, K=K)
    phys = _matrix(C, K)
    return SparsitySpec(phys, (1, K), (C, 1), max(1, C // 2) if k is None else k, phys=phys)


def coupled_two_four(M: int, K: int) -> SparsitySpec:
    """2:4 over column pairs ``{c, c+8}`` inside each 16-column segment."""
    _positive(M=M, K=K)
    _need(K % 16 == 0, f"16 does not divide K={K}")
    view = Layout((M, K // 16, 8, 2), (K, 16, 1, 8))
    return SparsitySpec(view, (1, 1, 1, 2), (1, 1, 4, 1), 2, phys=_matrix(M, K))


def coupled_two_four_v8(M: int, K: int) -> SparsitySpec:
    """Variant pairing columns ``{c, c+4}`` inside each 8-column segment."""
    _positive(M=M, K=K)
    _need(K % 8 == 0, f"8 does not divide K={K}")
    view = Layout((M, K // 8, 4, 2), (K, 8, 1, 4))
    return SparsitySpec(view, (1, 1, 1, 2), (1, 1, 4, 1), 2, phys=_matrix(M, K))


def col16_block(K: int, M: int = 16) -> SparsitySpec:
    """16-column blocks; rows ``p`` and ``p+8`` of each 16-row chunk share a scope."""
    _positive(K=K, M=M)
    _need(K % 16 == 0, f"16 does not divide K={K}")
    _need(M % 16 == 0, f"16 does not divide M={M}")
    if M == 16:
        view = Layout((8, 2, K), (K, 8 * K, 1))
        return SparsitySpec(view, (1, 1, 16), (1, 2, 1), 1, phys=_matrix(M, K))
    view = Layout((M // 16, 8, 2, K), (16 * K, K, 8 * K, 1))
    return SparsitySpec(view, (1, 1, 1, 16), (1, 1, 2, 1), 1, phys=_matrix(M, K))


def partial_24(d: int) -> SparsitySpec:
    """2:4 on the last ``3d/4`` rows of a ``d x d`` matrix; the rest stays dense."""
    _positive(d=d)
    _need(d % 4 == 0, f"4 does not divide d={d}")
    q = d // 4
    domain = DomainSpec((q, 0), (3 * q, d))
    view = Layout((3 * q, q, 4), (d, 4, 1))
    return SparsitySpec(view, (1, 1, 1), (1, 1, 4), 2, domain=domain, phys=_matrix(d, d))


def head(h: int, d: int, k: Optional[int] = None) -> CouplingSpec:
    """Attention-head pruning coupled across Q, K, V (rows) and O (columns)."""
    _positive(h=h, d=d)
    _need(d % h == 0, f"h={h} does not divide d={d}")
    hd = d // h
    keep = max(1, h // 2) if k is None else k
    phys = _matrix(d, d)
    qkv = SparsitySpec(Layout((h, hd, d), (hd * d, d, 1)), (1, hd, d), (h, 1, 1), keep, phys=phys)
    out = SparsitySpec(Layout((d, h, hd), (d, hd, 1)), (d, 1, hd), (1, h, 1), keep, phys=phys)
    members = [CouplingMember(name, qkv, (0, 1, 2)) for name in ("q", "k", "v")]
    members.append(CouplingMember("o", out, (1, 0, 2)))
    return CouplingSpec(tuple(members), CouplingLevel.SCOPE)


CATALOG: dict[str, Callable[..., Union[SparsitySpec, CouplingSpec]]] = {
    "unstructured": unstructured,
    "nm": nm,
    "block_bxb": block_bxb,
    "channel": channel,
    "head": head,
    "two_four": two_four,
    "four_eight": four_eight,
    "coupled_two_four": coupled_two_four,
    "coupled_two_four_v8": coupled_two_four_v8,
    "col16_block": col16_block,
    "partial_24": partial_24,
}


def make_pattern(name: str, **dims) -> Union[SparsitySpec, CouplingSpec]:
    try:
        factory = CATALOG[name]
    except KeyError:
        raise UnknownPattern(f"unknown pattern {name!r}; known: {', '.join(CATALOG)}") from None
    try:
        return factory(**dims)
    except TypeError as exc:
        raise DimensionError(f"{name}: {exc}") from None


def universality_witness(
    shape: Sequence[int], offset: Sequence[int], extent: Sequence[int]
) -> tuple[SparsitySpec, int]:
    """Build a spec in which one block is exactly the given hyperrectangle.

    Tile-aligned rectangles get a pure reshaping view (each dimension split
    into ``(s/e, e)``); any other rectangle is isolated with a domain.
    Returns the SparsitySpec and the ordinal of the matching block.
    """
    shape, offset, extent = tuple(shape), tuple(offset), tuple(extent)
    phys = Layout.row_major(shape)
    aligned = all(s % e == 0 and o % e == 0 for s, o, e in zip(shape, offset, extent))
    if aligned:
        vshape, vstride, block, coord = [], [], [], []
        for s, o, e, d in zip(shape, offset, extent, phys.stride):
            vshape += [s // e, e]
            vstride += [e * d, d]
            block += [1, e]
            coord += [o // e, 0]
        n = len(vshape)
        spec = SparsitySpec(Layout(vshape, vstride), block, (1,) * n, 1, phys=phys)
        return spec, grid_coord_to_ordinal(spec.grid_shape, coord)
    domain = DomainSpec(offset, extent)
    spec = SparsitySpec(Layout.row_major(extent), extent, (1,) * len(extent), 1, domain=domain, phys=phys)
    return spec, 0
