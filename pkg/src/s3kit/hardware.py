"""mma.m16n8k16 fragment ownership, 2:4 hardware checks and metadata cost."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import OutOfBounds, UnsupportedBits
from .layout import Layout
from .spec import SparsitySpec, validate_spec

WARP_SIZE = 32


class FragmentKind(enum.Enum):
    A = "A"  # 16x16, row-major, m x k
    B = "B"  # 16x8, col-major, k x n
    C = "C"  # 16x8 accumulator, m x n


FRAGMENT_SHAPES = {
    FragmentKind.A: (16, 16),
    FragmentKind.B: (16, 8),
    FragmentKind.C: (16, 8),
}


def _kind(kind) -> FragmentKind:
    return kind if isinstance(kind, FragmentKind) else FragmentKind(str(kind).upper())


@dataclass(frozen=True)
class FragmentAssignment:
    matrix_kind: FragmentKind
    thread: int
    rows: frozenset
    cols: frozenset

    def elements(self) -> set[tuple[int, int]]:
        return {(r, c) for r in self.rows for c in self.cols}


def fragment_assignment(kind, thread: int) -> FragmentAssignment:
    """Rows and columns of a fragment held by lane ``thread``."""
    kind = _kind(kind)
    if not 0 <= thread < WARP_SIZE:
        raise OutOfBounds(f"thread {thread} outside [0, {WARP_SIZE})")
    g, tau = divmod(thread, 4)
    k_pairs = frozenset({2 * tau, 2 * tau + 1, 2 * tau + 8, 2 * tau + 9})
    if kind is FragmentKind.A:
        return FragmentAssignment(kind, thread, frozenset({g, g + 8}), k_pairs)
    if kind is FragmentKind.B:
        return FragmentAssignment(kind, thread, k_pairs, frozenset({g}))
    return FragmentAssignment(kind, thread, frozenset({g, g + 8}), frozenset({2 * tau, 2 * tau + 1}))


def mma_fragment_owner(kind, row: int, col: int) -> int:
    kind = _kind(kind)
    rows, cols = FRAGMENT_SHAPES[kind]
    if not (0 <= row < rows and 0 <= col < cols):
        raise OutOfBounds(f"({row}, {col}) outside {kind.value} fragment {rows}x{cols}")
    if kind is FragmentKind.A:
        g, tau = row % 8, (col % 8) // 2
    elif kind is FragmentKind.B:
        g, tau = col, (row % 8) // 2
    else:
        g, tau = row % 8, col // 2
    return 4 * g + tau


# --------------------------------------------------------------------------
# metadata compression

# values per scope, values stored per scope, mask bits per scope
_COMPRESSION_PATTERNS = {
    "standard_24": (4, 2, 4),
    "coupled_24": (8, 4, 4),
}
SUPPORTED_VALUE_BITS = (4, 8, 16, 32)


@dataclass(frozen=True)
class CompressionQuote:
    pattern: str
    value_bits: int
    mask_bits: int
    uncompressed_bits: int
    compressed_bits: int

    @property
    def ratio(self) -> Fraction:
        return Fraction(self.compressed_bits, self.uncompressed_bits)

    @property
    def mask_overhead(self) -> Fraction:
        """Mask bits relative to the stored value bits."""
        return Fraction(self.mask_bits, self.compressed_bits - self.mask_bits)

    def to_json(self) -> dict:
        return {
            "pattern": self.pattern,
            "value_bits": self.value_bits,
            "mask_bits": self.mask_bits,
            "uncompressed_bits": self.uncompressed_bits,
            "compressed_bits": self.compressed_bits,
            "ratio": {"num": self.ratio.numerator, "den": self.ratio.denominator},
            "mask_overhead": float(self.mask_overhead),
            "mask_overhead_ratio": {
                "num": self.mask_overhead.numerator,
                "den": self.mask_overhead.denominator,
            },
        }


def compression_quote(pattern: str, value_bits: int) -> CompressionQuote:
    try:
        scope_values, stored, mask_bits = _COMPRESSION_PATTERNS[pattern]
    except KeyError:
        raise ValueError(f"unknown compression pattern {pattern!r}") from None
    if value_bits not in SUPPORTED_VALUE_BITS:
        raise UnsupportedBits(f"value_bits must be one of {SUPPORTED_VALUE_BITS}, got {value_bits}")
    return CompressionQuote(
        pattern=pattern,
        value_bits=value_bits,
        mask_bits=mask_bits,
        uncompressed_bits=scope_values * value_bits,
        compressed_bits=stored * value_bits + mask_bits,
    )


# --------------------------------------------------------------------------
# hardware 2:4 equivalence


def hardware_24_spec(M: int, K: int) -> SparsitySpec:
    phys = Layout((M, K), (K, 1))
    return SparsitySpec(Layout((M, K // 4, 4), (K, 4, 1)), (1, 1, 1), (1, 1, 4), 2, phys=phys)


def _scope_sets(spec: SparsitySpec) -> set[frozenset]:
    return {frozenset(spec.block_table[b].ravel().tolist()) for b in spec.scope_table}


def check_tensorcore_24(spec: SparsitySpec, M: int, K: int) -> tuple[bool, list[str]]:
    """Whether ``spec`` prunes exactly like sparse tensor cores' 2:4 mode.

    Equivalence is structural: the per-scope element sets and keep count
    must match the canonical hardware spec, however the view is written.
    """
    if K % 4:
        return False, [f"K={K} is not a multiple of 4"]
    if spec.physical.size != M * K:
        return False, [f"spec covers {spec.physical.size} elements, tensor has {M * K}"]
    violations = validate_spec(spec)
    if violations:
        return False, violations

    diagnostics = []
    if spec.block_size != 1:
        cols = spec.block_table % K
        rows = spec.block_table // K
        contiguous = np.all(np.diff(np.sort(cols, axis=1), axis=1) == 1) and np.all(
            rows == rows[:, :1]
        )
        if not contiguous:
            diagnostics.append("non-contiguous pairs" if spec.block_size == 2 else "non-contiguous blocks")
        else:
            diagnostics.append(f"blocks hold {spec.block_size} elements, hardware prunes scalars")
    for blocks in spec.scope_table:
        elems = spec.block_table[blocks].ravel()
        rows, cols = elems // K, elems % K
        if np.unique(rows).size > 1:
            diagnostics.append("scope spans several rows")
            break
        span = int(cols.max() - cols.min() + 1)
        if span != 4:
            diagnostics.append(f"scope spans {span} columns")
            break
    if spec.keep != 2 or spec.blocks_per_scope * spec.block_size != 4:
        diagnostics.append(f"keeps {spec.keep} of {spec.blocks_per_scope} blocks, hardware keeps 2 of 4")
    if not diagnostics and _scope_sets(spec) != _scope_sets(hardware_24_spec(M, K)):
        diagnostics.append("scope element sets differ from aligned groups of 4 columns")
    return not diagnostics, diagnostics
