"""Shape/stride layouts, domains and element sets.

A layout ``shape:stride`` maps a coordinate ``i`` to ``sum(i_k * d_k)``.
Enumeration ordinals decode in mixed radix with the last dimension varying
fastest, so ``Layout((2, 3), (3, 1))`` enumerates ``0..5`` in order.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import prod
from typing import Iterable, Sequence, Union

import numpy as np

from .errors import OutOfBounds, SizeMismatch

Coord = tuple[int, ...]


def _int_tuple(values, name: str) -> tuple[int, ...]:
    if isinstance(values, (int, np.integer)) and not isinstance(values, bool):
        values = (values,)
    out = []
    for v in values:
        if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
            raise TypeError(f"{name} must contain integers, got {v!r}")
        out.append(int(v))
    return tuple(out)


def row_major_strides(shape: Sequence[int]) -> tuple[int, ...]:
    strides = []
    acc = 1
    for s in reversed(shape):
        strides.append(acc)
        acc *= s
    return tuple(reversed(strides))


def _enumerate(shape: Sequence[int], stride: Sequence[int]) -> np.ndarray:
    idx = np.zeros(1, dtype=np.int64)
    for s, d in zip(shape, stride):
        idx = (idx[:, None] + np.arange(s, dtype=np.int64) * d).ravel()
    return idx


@dataclass(frozen=True)
class Layout:
    shape: tuple[int, ...]
    stride: tuple[int, ...]

    def __post_init__(self):
        shape = _int_tuple(self.shape, "shape")
        stride = _int_tuple(self.stride, "stride")
        if len(shape) < 1:
            raise ValueError("layout needs at least one dimension")
        if len(shape) != len(stride):
            raise ValueError(f"shape {shape} and stride {stride} differ in arity")
        if any(s < 1 for s in shape):
            raise ValueError(f"extents must be >= 1, got {shape}")
        if any(d < 0 for d in stride):
            raise ValueError(f"strides must be non-negative, got {stride}")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "stride", stride)

    @classmethod
    def row_major(cls, shape: Sequence[int]) -> "Layout":
        shape = _int_tuple(shape, "shape")
        return cls(shape, row_major_strides(shape))

    @property
    def rank(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        return prod(self.shape)

    @property
    def cosize(self) -> int:
        return 1 + sum((s - 1) * d for s, d in zip(self.shape, self.stride))

    def __call__(self, coord: Sequence[int]) -> int:
        coord = _int_tuple(coord, "coord")
        if len(coord) != self.rank:
            raise OutOfBounds(f"coord {coord} has arity {len(coord)}, layout has {self.rank}")
        for k, (i, s) in enumerate(zip(coord, self.shape)):
            if not 0 <= i < s:
                raise OutOfBounds(f"coord[{k}]={i} outside [0, {s})")
        return sum(i * d for i, d in zip(coord, self.stride))

    def coord(self, ordinal: int) -> Coord:
        if not 0 <= ordinal < self.size:
            raise OutOfBounds(f"ordinal {ordinal} outside [0, {self.size})")
        out = []
        for s in reversed(self.shape):
            ordinal, r = divmod(ordinal, s)
            out.append(r)
        return tuple(reversed(out))

    def indices(self) -> np.ndarray:
        """Linear indices of every coordinate, in enumeration order."""
        return _enumerate(self.shape, self.stride)

    def __str__(self):
        def fmt(t):
            return "(" + ",".join(map(str, t)) + ("," if len(t) == 1 else "") + ")"

        return f"{fmt(self.shape)}:{fmt(self.stride)}"

    def to_json(self) -> dict:
        return {"shape": list(self.shape), "stride": list(self.stride)}

    @classmethod
    def from_json(cls, obj: dict) -> "Layout":
        return cls(_int_tuple(obj["shape"], "shape"), _int_tuple(obj["stride"], "stride"))


@dataclass(frozen=True)
class TabulatedLayout:
    """A layout given by an explicit index table.

    Produced by :func:`layout_compose` when the composed map has no
    strided closed form.
    """

    shape: tuple[int, ...]
    table: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "shape", _int_tuple(self.shape, "shape"))
        object.__setattr__(self, "table", _int_tuple(self.table, "table"))
        if prod(self.shape) != len(self.table):
            raise SizeMismatch("index table length does not match shape")

    @property
    def rank(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        return len(self.table)

    @property
    def cosize(self) -> int:
        return max(self.table) + 1

    def coord(self, ordinal: int) -> Coord:
        return Layout.row_major(self.shape).coord(ordinal)

    def __call__(self, coord: Sequence[int]) -> int:
        return self.table[Layout.row_major(self.shape)(coord)]

    def indices(self) -> np.ndarray:
        return np.asarray(self.table, dtype=np.int64)


AnyLayout = Union[Layout, TabulatedLayout]


def layout_size(layout: AnyLayout) -> int:
    return layout.size


def layout_cosize(layout: AnyLayout) -> int:
    return layout.cosize


def layout_index(layout: AnyLayout, coord: Sequence[int]) -> int:
    return layout(coord)


def index_to_coord(layout: AnyLayout, ordinal: int) -> Coord:
    return layout.coord(ordinal)


def layout_compose(outer: AnyLayout, inner: AnyLayout) -> AnyLayout:
    """Compose two layouts of equal size.

    Each index produced by ``outer`` is read as an enumeration ordinal of
    ``inner``; the result maps outer coordinates to inner's indices. A
    strided layout is returned when the composed map is linear in the
    coordinates, otherwise a :class:`TabulatedLayout`.
    """
    if outer.size != inner.size:
        raise SizeMismatch(f"cannot compose sizes {outer.size} and {inner.size}")
    ords = outer.indices()
    if ords.size and ords.max() >= inner.size:
        raise OutOfBounds(f"outer reaches ordinal {int(ords.max())} >= {inner.size}")
    table = inner.indices()[ords]

    shape = outer.shape
    grid = table.reshape(shape)
    strides = []
    for k, s in enumerate(shape):
        if s == 1:
            strides.append(0)
            continue
        unit = [0] * len(shape)
        unit[k] = 1
        strides.append(int(grid[tuple(unit)] - grid[(0,) * len(shape)]))
    if table[0] == 0 and all(d >= 0 for d in strides):
        if np.array_equal(_enumerate(shape, strides), table):
            return Layout(shape, tuple(strides))
    return TabulatedLayout(shape, tuple(int(t) for t in table))


# --------------------------------------------------------------------------
# Element sets and domains


class ElementSet:
    """Strictly increasing tuple of physical linear indices."""

    __slots__ = ("indices",)

    def __init__(self, indices: Iterable[int] = ()):
        arr = np.unique(np.fromiter((int(i) for i in indices), dtype=np.int64))
        if arr.size and arr[0] < 0:
            raise ValueError("element indices must be non-negative")
        self.indices = tuple(int(i) for i in arr)

    @classmethod
    def from_array(cls, arr) -> "ElementSet":
        return cls(np.asarray(arr, dtype=np.int64).ravel().tolist())

    def array(self) -> np.ndarray:
        return np.asarray(self.indices, dtype=np.int64)

    def __len__(self):
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)

    def __contains__(self, item):
        i = np.searchsorted(self.indices, item)
        return i < len(self.indices) and self.indices[i] == item

    def __eq__(self, other):
        if isinstance(other, ElementSet):
            return self.indices == other.indices
        if isinstance(other, (set, frozenset)):
            return set(self.indices) == other
        return NotImplemented

    def __hash__(self):
        return hash(self.indices)

    def __repr__(self):
        if len(self.indices) > 12:
            head = ", ".join(map(str, self.indices[:6]))
            return f"ElementSet({{{head}, ...}} n={len(self.indices)})"
        return f"ElementSet({set(self.indices) or '{}'})"


@dataclass(frozen=True)
class DomainSpec:
    offset: tuple[int, ...]
    extent: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "offset", _int_tuple(self.offset, "offset"))
        object.__setattr__(self, "extent", _int_tuple(self.extent, "extent"))
        if len(self.offset) != len(self.extent):
            raise ValueError("offset and extent differ in arity")
        if any(o < 0 for o in self.offset) or any(e < 1 for e in self.extent):
            raise ValueError("domain needs offsets >= 0 and extents >= 1")

    @property
    def size(self) -> int:
        return prod(self.extent)

    def check(self, phys: Layout) -> None:
        if len(self.offset) != phys.rank:
            raise OutOfBounds(f"domain arity {len(self.offset)} != tensor arity {phys.rank}")
        for k, (o, e, s) in enumerate(zip(self.offset, self.extent, phys.shape)):
            if o + e > s:
                raise OutOfBounds(f"domain dim {k}: offset {o} + extent {e} > {s}")

    def to_generalized(self, phys: Layout) -> "GeneralizedDomain":
        self.check(phys)
        return GeneralizedDomain(Layout(self.extent, phys.stride), phys(self.offset))

    def embedding(self, phys: Layout) -> np.ndarray:
        return self.to_generalized(phys).embedding(phys)

    def to_json(self) -> dict:
        return {"offset": list(self.offset), "extent": list(self.extent)}


@dataclass(frozen=True)
class GeneralizedDomain:
    layout: Layout
    base_offset: int = 0

    def __post_init__(self):
        (base,) = _int_tuple(self.base_offset, "base_offset")
        if base < 0:
            raise ValueError("base_offset must be non-negative")
        object.__setattr__(self, "base_offset", base)

    @property
    def size(self) -> int:
        return self.layout.size

    def check(self, phys: Layout) -> None:
        top = self.base_offset + self.layout.cosize - 1
        if top >= phys.size:
            raise OutOfBounds(f"domain reaches index {top} >= tensor size {phys.size}")

    def embedding(self, phys: Layout) -> np.ndarray:
        """Physical index of each domain-local ordinal."""
        self.check(phys)
        return self.base_offset + self.layout.indices()

    def to_json(self) -> dict:
        return {"layout": self.layout.to_json(), "base_offset": self.base_offset}


Domain = Union[DomainSpec, GeneralizedDomain]


def domain_from_json(obj: dict) -> Domain:
    if "layout" in obj:
        return GeneralizedDomain(Layout.from_json(obj["layout"]), obj.get("base_offset", 0))
    return DomainSpec(obj["offset"], obj["extent"])


def domain_elements(domain: Domain, phys: Layout) -> ElementSet:
    return ElementSet.from_array(domain.embedding(phys))


def domain_union(a: ElementSet, b: ElementSet) -> ElementSet:
    return ElementSet.from_array(np.union1d(a.array(), b.array()))


def domain_complement(a: ElementSet, tensor_size: int) -> ElementSet:
    arr = a.array()
    if arr.size and arr[-1] >= tensor_size:
        raise OutOfBounds(f"index {int(arr[-1])} >= tensor size {tensor_size}")
    return ElementSet.from_array(np.setdiff1d(np.arange(tensor_size), arr))
