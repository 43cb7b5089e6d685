"""View / Block / Scope specifications, coupling and mask generation.

Ordinal conventions
-------------------
Coordinates of a layout enumerate with the last dimension fastest (see
:mod:`s3kit.layout`). Block and scope *ordinals* pack grid coordinates the
other way round, with dimension 0 fastest::

    ordinal(j) = sum_k j_k * prod_{l<k} g_l

so that ``element_to_block`` is exactly the packing formula for the
element-to-block map. :func:`grid_ordinal_to_row_major` converts to the
last-fastest numbering when needed.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from math import prod
from typing import Optional, Sequence, Union

import numpy as np

from .errors import (
    GridShapeMismatch,
    NonFiniteScore,
    NotInView,
    OutOfBounds,
    SpecInvalid,
)
from .layout import (
    Coord,
    Domain,
    DomainSpec,
    ElementSet,
    GeneralizedDomain,
    Layout,
    _int_tuple,
    domain_from_json,
)

# --------------------------------------------------------------------------
# grid ordinals


def grid_coord_to_ordinal(grid_shape: Sequence[int], coord: Sequence[int]) -> int:
    if len(coord) != len(grid_shape):
        raise OutOfBounds(f"coord {tuple(coord)} does not match grid {tuple(grid_shape)}")
    ordinal, radix = 0, 1
    for j, g in zip(coord, grid_shape):
        if not 0 <= j < g:
            raise OutOfBounds(f"grid coord {tuple(coord)} outside {tuple(grid_shape)}")
        ordinal += j * radix
        radix *= g
    return ordinal


def grid_ordinal_to_coord(grid_shape: Sequence[int], ordinal: int) -> Coord:
    if not 0 <= ordinal < prod(grid_shape):
        raise OutOfBounds(f"ordinal {ordinal} outside grid {tuple(grid_shape)}")
    out = []
    for g in grid_shape:
        ordinal, r = divmod(ordinal, g)
        out.append(r)
    return tuple(out)


def grid_ordinal_to_row_major(grid_shape: Sequence[int], ordinal: int) -> int:
    return Layout.row_major(grid_shape)(grid_ordinal_to_coord(grid_shape, ordinal))


def row_major_to_grid_ordinal(grid_shape: Sequence[int], row_major: int) -> int:
    return grid_coord_to_ordinal(grid_shape, Layout.row_major(grid_shape).coord(row_major))


def _grid_ordinals(grid_shape: Sequence[int]) -> np.ndarray:
    """Array of shape ``grid_shape`` holding each cell's packed ordinal."""
    n = prod(grid_shape)
    # C-order over reversed dims is dimension-0-fastest over the original.
    return np.arange(n, dtype=np.int64).reshape(tuple(reversed(grid_shape))).transpose()


def _tile(arr: np.ndarray, tile: Sequence[int]) -> np.ndarray:
    """Split ``arr`` into tiles; rows follow the packed tile ordinal.

    Returns an array of shape ``(num_tiles, prod(tile))`` whose row ``t``
    lists the entries of tile ``t`` in row-major order within the tile.
    """
    n = arr.ndim
    split = []
    for s, b in zip(arr.shape, tile):
        split += [s // b, b]
    arr = arr.reshape(split)
    outer = [2 * k for k in reversed(range(n))]
    inner = [2 * k + 1 for k in range(n)]
    return arr.transpose(outer + inner).reshape(-1, prod(tile))


# --------------------------------------------------------------------------
# specification types


@dataclass(frozen=True)
class BlockGrid:
    grid_shape: tuple[int, ...]
    grid_strides: tuple[int, ...]

    @property
    def num_blocks(self) -> int:
        return prod(self.grid_shape)


@dataclass(frozen=True)
class SparsitySpec:
    """A View/Block/Scope triple with a per-scope keep count.

    ``view`` addresses the sparsified region: the whole tensor, or the
    domain's local row-major index space when ``domain`` is set. ``phys``
    is the tensor's physical layout; it defaults to a flat dense layout of
    the view's size and is required alongside a domain.
    """

    view: Layout
    block: tuple[int, ...]
    scope: tuple[int, ...]
    keep: int
    domain: Optional[Domain] = None
    phys: Optional[Layout] = None

    def __post_init__(self):
        object.__setattr__(self, "block", _int_tuple(self.block, "block"))
        object.__setattr__(self, "scope", _int_tuple(self.scope, "scope"))
        (keep,) = _int_tuple(self.keep, "keep")
        object.__setattr__(self, "keep", keep)

    # -- derived sizes ----------------------------------------------------

    @property
    def physical(self) -> Layout:
        if self.phys is not None:
            return self.phys
        if self.domain is not None:
            raise SpecInvalid(["a domain requires the physical layout 'phys'"])
        return Layout.row_major((self.view.size,))

    @property
    def region_size(self) -> int:
        return self.domain.size if self.domain is not None else self.physical.size

    @property
    def block_size(self) -> int:
        return prod(self.block)

    @property
    def grid(self) -> BlockGrid:
        shape = tuple(s // b for s, b in zip(self.view.shape, self.block))
        strides = tuple(b * d for b, d in zip(self.block, self.view.stride))
        return BlockGrid(shape, strides)

    @property
    def grid_shape(self) -> tuple[int, ...]:
        return self.grid.grid_shape

    @property
    def num_blocks(self) -> int:
        return self.grid.num_blocks

    @property
    def blocks_per_scope(self) -> int:
        return prod(self.scope)

    @property
    def scope_grid_shape(self) -> tuple[int, ...]:
        return tuple(g // s for g, s in zip(self.grid_shape, self.scope))

    @property
    def num_scopes(self) -> int:
        return prod(self.scope_grid_shape)

    # -- cached index tables ----------------------------------------------

    def _require_valid(self):
        violations = validate_spec(self)
        if violations:
            raise SpecInvalid(violations)

    @cached_property
    def embedding(self) -> np.ndarray:
        """Physical index of each region-local linear index."""
        if self.domain is None:
            return np.arange(self.physical.size, dtype=np.int64)
        return self.domain.embedding(self.physical)

    @cached_property
    def view_indices(self) -> np.ndarray:
        """Physical index of each view coordinate, in enumeration order."""
        self._require_valid()
        return self.embedding[self.view.indices()]

    @cached_property
    def block_table(self) -> np.ndarray:
        """``(num_blocks, block_size)`` physical indices per block ordinal."""
        grid = self.view_indices.reshape(self.view.shape)
        return _tile(grid, self.block)

    @cached_property
    def scope_table(self) -> np.ndarray:
        """``(num_scopes, blocks_per_scope)`` block ordinals per scope, ascending."""
        self._require_valid()
        table = _tile(_grid_ordinals(self.grid_shape), self.scope)
        return np.sort(table, axis=1)

    @cached_property
    def _view_ordinal_of(self) -> np.ndarray:
        inv = np.full(self.physical.size, -1, dtype=np.int64)
        inv[self.view_indices] = np.arange(self.view_indices.size)
        return inv

    def to_json(self) -> dict:
        out = {
            "view": self.view.to_json(),
            "block": list(self.block),
            "scope": list(self.scope),
            "keep": self.keep,
        }
        if self.domain is not None:
            out["domain"] = self.domain.to_json()
        if self.phys is not None:
            out["phys"] = self.phys.to_json()
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "SparsitySpec":
        domain = domain_from_json(obj["domain"]) if obj.get("domain") is not None else None
        phys = Layout.from_json(obj["phys"]) if obj.get("phys") is not None else None
        return cls(
            view=Layout.from_json(obj["view"]),
            block=_int_tuple(obj["block"], "block"),
            scope=_int_tuple(obj["scope"], "scope"),
            keep=obj["keep"],
            domain=domain,
            phys=phys,
        )


def validate_spec(spec: SparsitySpec) -> list[str]:
    """Return every violated constraint; an empty list means valid."""
    out = []
    view = spec.view
    n = view.rank
    if len(spec.block) != n:
        out.append(f"block arity {len(spec.block)} != view arity {n}")
    if len(spec.scope) != n:
        out.append(f"scope arity {len(spec.scope)} != view arity {n}")
    if out:
        return out

    for k, (s, b) in enumerate(zip(view.shape, spec.block)):
        if b < 1:
            out.append(f"block dim {k}: extent {b} must be >= 1")
        elif s % b:
            out.append(f"block dim {k}: {b} does not divide {s}")
    if not out:
        for k, (g, s) in enumerate(zip(spec.grid_shape, spec.scope)):
            if s < 1:
                out.append(f"scope dim {k}: extent {s} must be >= 1")
            elif g % s:
                out.append(f"scope dim {k}: {s} does not divide block grid extent {g}")

    if spec.domain is not None and spec.phys is None:
        out.append("a domain requires the physical layout 'phys'")
        return out
    if spec.domain is not None:
        try:
            spec.domain.check(spec.phys)
        except OutOfBounds as exc:
            out.append(f"domain: {exc}")
            return out
        if isinstance(spec.domain, GeneralizedDomain):
            emb = spec.domain.embedding(spec.phys)
            if np.unique(emb).size != emb.size:
                out.append("domain layout maps two coordinates to one element")

    region = spec.region_size
    if view.size != region:
        out.append(f"view size {view.size} != {region}")
    elif any(s > 1 and d == 0 for s, d in zip(view.shape, view.stride)):
        out.append("view has a zero stride on a non-singleton dimension")
    else:
        idx = view.indices()
        if idx.max() >= region:
            out.append(f"view reaches index {int(idx.max())} >= {region}")
        elif np.unique(idx).size != idx.size:
            out.append("view maps two coordinates to one element")

    if not 0 <= spec.keep <= prod(spec.scope):
        out.append(f"keep {spec.keep} outside [0, {prod(spec.scope)}]")
    return out


# --------------------------------------------------------------------------
# block and scope maps


def block_elements(spec: SparsitySpec, block_ordinal: int) -> ElementSet:
    if not 0 <= block_ordinal < spec.num_blocks:
        raise OutOfBounds(f"block {block_ordinal} outside [0, {spec.num_blocks})")
    return ElementSet.from_array(spec.block_table[block_ordinal])


def block_coord_elements(spec: SparsitySpec, block_coord: Sequence[int]) -> ElementSet:
    return block_elements(spec, grid_coord_to_ordinal(spec.grid_shape, block_coord))


def element_to_block(spec: SparsitySpec, element: int) -> int:
    """Block ordinal containing a physical element index."""
    inv = spec._view_ordinal_of
    if not 0 <= element < inv.size or inv[element] < 0:
        raise NotInView(f"element {element} is not covered by the view")
    v = spec.view.coord(int(inv[element]))
    ordinal, radix = 0, 1
    for vk, bk, gk in zip(v, spec.block, spec.grid_shape):
        ordinal += (vk // bk) * radix
        radix *= gk
    return ordinal


def block_to_scope(spec: SparsitySpec, block_ordinal: int) -> int:
    j = grid_ordinal_to_coord(spec.grid_shape, block_ordinal)
    return grid_coord_to_ordinal(
        spec.scope_grid_shape, tuple(jk // sk for jk, sk in zip(j, spec.scope))
    )


def scope_blocks(spec: SparsitySpec, scope_ordinal: int) -> list[int]:
    if not 0 <= scope_ordinal < spec.num_scopes:
        raise OutOfBounds(f"scope {scope_ordinal} outside [0, {spec.num_scopes})")
    return [int(j) for j in spec.scope_table[scope_ordinal]]


def scope_elements(spec: SparsitySpec, scope_ordinal: int) -> ElementSet:
    blocks = scope_blocks(spec, scope_ordinal)
    return ElementSet.from_array(spec.block_table[blocks])


def achievable_sparsities(spec: SparsitySpec) -> set[Fraction]:
    n = spec.blocks_per_scope
    return {Fraction(k, n) for k in range(n + 1)}


# --------------------------------------------------------------------------
# thresholding and masks


def threshold_scopes(scope_table: np.ndarray, scores: np.ndarray, keep: int) -> np.ndarray:
    """Keep the ``keep`` best blocks of each scope row; ties favour lower ordinals."""
    per_scope = scores[scope_table]
    # stable sort on negated score keeps ascending ordinal order among ties
    order = np.argsort(-per_scope, axis=1, kind="stable")
    retained = np.zeros(scores.shape[0], dtype=bool)
    winners = np.take_along_axis(scope_table, order[:, :keep], axis=1)
    retained[winners.ravel()] = True
    return retained


@dataclass(frozen=True)
class MaskGrid:
    spec: SparsitySpec
    retained: tuple[bool, ...]

    def __post_init__(self):
        object.__setattr__(self, "retained", tuple(bool(r) for r in self.retained))
        if len(self.retained) != self.spec.num_blocks:
            raise ValueError("one retention flag per block required")

    def retained_blocks(self) -> list[int]:
        return [j for j, r in enumerate(self.retained) if r]

    def pruned_blocks(self) -> list[int]:
        return [j for j, r in enumerate(self.retained) if not r]

    def scope_counts(self) -> np.ndarray:
        return np.asarray(self.retained)[self.spec.scope_table].sum(axis=1)

    def dense(self) -> np.ndarray:
        """0/1 retention mask over the physical tensor, flattened."""
        out = np.ones(self.spec.physical.size)
        pruned = self.pruned_blocks()
        out[self.spec.block_table[pruned].ravel()] = 0.0
        return out


def hard_threshold(spec: SparsitySpec, scores) -> MaskGrid:
    scores = np.asarray(scores, dtype=np.float64).ravel()
    if scores.size != spec.num_blocks:
        raise ValueError(f"expected {spec.num_blocks} scores, got {scores.size}")
    if not np.all(np.isfinite(scores)):
        raise NonFiniteScore("scores must be finite")
    return MaskGrid(spec, tuple(threshold_scopes(spec.scope_table, scores, spec.keep)))


def element_mask(mask: MaskGrid) -> ElementSet:
    """Physical indices zeroed by a mask."""
    pruned = mask.pruned_blocks()
    return ElementSet.from_array(mask.spec.block_table[pruned])


# --------------------------------------------------------------------------
# coupling


class CouplingLevel(enum.Enum):
    BLOCK = "block"
    SCOPE = "scope"


@dataclass(frozen=True)
class CouplingMember:
    tensor_id: str
    spec: SparsitySpec
    permutation: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "permutation", _int_tuple(self.permutation, "permutation"))

    @property
    def permuted_grid_shape(self) -> tuple[int, ...]:
        return tuple(self.spec.grid_shape[p] for p in self.permutation)

    def block_at(self, common_coord: Sequence[int]) -> int:
        j = [0] * len(self.permutation)
        for i, p in enumerate(self.permutation):
            j[p] = common_coord[i]
        return grid_coord_to_ordinal(self.spec.grid_shape, j)


@dataclass(frozen=True)
class CouplingSpec:
    members: tuple[CouplingMember, ...]
    level: CouplingLevel = CouplingLevel.BLOCK

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(self.members))
        if not self.members:
            raise ValueError("coupling needs at least one member")
        for m in self.members:
            if sorted(m.permutation) != list(range(m.spec.view.rank)):
                raise ValueError(f"{m.tensor_id}: {m.permutation} is not a permutation")
        shapes = {m.permuted_grid_shape for m in self.members}
        if len(shapes) != 1:
            raise GridShapeMismatch(f"permuted grid shapes disagree: {sorted(shapes)}")

    @property
    def grid_shape(self) -> tuple[int, ...]:
        return self.members[0].permuted_grid_shape

    @property
    def num_blocks(self) -> int:
        return prod(self.grid_shape)

    @property
    def coupled_block_size(self) -> int:
        return sum(m.spec.block_size for m in self.members)

    @cached_property
    def member_block_maps(self) -> tuple[np.ndarray, ...]:
        """Per member, the member block ordinal at each common-grid ordinal."""
        maps = []
        for m in self.members:
            maps.append(
                np.array(
                    [
                        m.block_at(grid_ordinal_to_coord(self.grid_shape, o))
                        for o in range(self.num_blocks)
                    ],
                    dtype=np.int64,
                )
            )
        return tuple(maps)

    @property
    def scope(self) -> tuple[int, ...]:
        lead = self.members[0]
        return tuple(lead.spec.scope[p] for p in lead.permutation)

    @property
    def keep(self) -> int:
        return self.members[0].spec.keep

    @cached_property
    def scope_table(self) -> np.ndarray:
        table = _tile(_grid_ordinals(self.grid_shape), self.scope)
        return np.sort(table, axis=1)

    def to_json(self) -> dict:
        return {
            "level": self.level.value,
            "members": [
                {"tensor": m.tensor_id, "permutation": list(m.permutation), "spec": m.spec.to_json()}
                for m in self.members
            ],
        }


def coupled_block_elements(
    coupling: CouplingSpec, grid_coord: Sequence[int]
) -> list[tuple[str, ElementSet]]:
    grid_coord = _int_tuple(grid_coord, "grid_coord")
    grid_coord_to_ordinal(coupling.grid_shape, grid_coord)  # bounds check
    return [
        (m.tensor_id, block_elements(m.spec, m.block_at(grid_coord)))
        for m in coupling.members
    ]


def coupled_hard_threshold(coupling: CouplingSpec, coupled_scores) -> dict[str, MaskGrid]:
    """Threshold aggregated scores on the common grid, then scatter to members."""
    scores = np.asarray(coupled_scores, dtype=np.float64).ravel()
    if scores.size != coupling.num_blocks:
        raise GridShapeMismatch(f"expected {coupling.num_blocks} coupled scores")
    if not np.all(np.isfinite(scores)):
        raise NonFiniteScore("scores must be finite")
    keep = threshold_scopes(coupling.scope_table, scores, coupling.keep)
    out = {}
    for m, bmap in zip(coupling.members, coupling.member_block_maps):
        retained = np.zeros(m.spec.num_blocks, dtype=bool)
        retained[bmap] = keep
        out[m.tensor_id] = MaskGrid(m.spec, tuple(retained))
    return out


# --------------------------------------------------------------------------
# JSON documents


def load_spec_document(obj: dict) -> Union[SparsitySpec, CouplingSpec]:
    """Parse a spec document; a ``coupling`` list yields a :class:`CouplingSpec`.

    Coupling entries may carry their own ``spec``; otherwise they share the
    document's top-level spec.
    """
    if "members" in obj:
        entries, base = obj["members"], None
        level = obj.get("level", "block")
    else:
        base = SparsitySpec.from_json(obj)
        if not obj.get("coupling"):
            return base
        entries, level = obj["coupling"], obj.get("coupling_level", "block")
    members = []
    for e in entries:
        spec = SparsitySpec.from_json(e["spec"]) if "spec" in e else base
        if spec is None:
            raise ValueError(f"coupling member {e.get('tensor')!r} has no spec")
        members.append(CouplingMember(str(e["tensor"]), spec, e["permutation"]))
    return CouplingSpec(tuple(members), CouplingLevel(level))


def validate_document(doc: Union[SparsitySpec, CouplingSpec]) -> list[str]:
    if isinstance(doc, SparsitySpec):
        return validate_spec(doc)
    out = []
    for m in doc.members:
        out += [f"{m.tensor_id}: {v}" for v in validate_spec(m.spec)]
    return out


__all__ = [
    "BlockGrid",
    "CouplingLevel",
    "CouplingMember",
    "CouplingSpec",
    "DomainSpec",
    "MaskGrid",
    "SparsitySpec",
    "achievable_sparsities",
    "block_coord_elements",
    "block_elements",
    "block_to_scope",
    "coupled_block_elements",
    "coupled_hard_threshold",
    "element_mask",
    "element_to_block",
    "grid_coord_to_ordinal",
    "grid_ordinal_to_coord",
    "grid_ordinal_to_row_major",
    "hard_threshold",
    "load_spec_document",
    "row_major_to_grid_ordinal",
    "scope_blocks",
    "scope_elements",
    "validate_document",
    "validate_spec",
]
