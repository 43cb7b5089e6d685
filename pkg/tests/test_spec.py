from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import blocks_by_definition, scopes_by_definition
from s3kit.errors import GridShapeMismatch, NonFiniteScore, NotInView, OutOfBounds, SpecInvalid
from s3kit.layout import DomainSpec, Layout
from s3kit.oracle import enumerate_feasible_sparsities
from s3kit.patterns import col16_block, coupled_two_four, four_eight, head, nm, two_four
from s3kit.spec import (
    CouplingLevel,
    CouplingMember,
    CouplingSpec,
    MaskGrid,
    SparsitySpec,
    achievable_sparsities,
    block_coord_elements,
    block_elements,
    block_to_scope,
    coupled_block_elements,
    coupled_hard_threshold,
    element_mask,
    element_to_block,
    grid_coord_to_ordinal,
    grid_ordinal_to_coord,
    grid_ordinal_to_row_major,
    hard_threshold,
    load_spec_document,
    row_major_to_grid_ordinal,
    scope_blocks,
    scope_elements,
    validate_spec,
)


def row(K):
    return Layout((1, K), (K, 1))


# -- validation ------------------------------------------------------------


def test_two_four_validates():
    spec = SparsitySpec(Layout((4, 8), (8, 1)), (1, 1), (1, 4), 2)
    assert validate_spec(spec) == []
    assert spec.num_blocks == 32 and spec.num_scopes == 8


def test_non_divisible_block_names_dimension():
    spec = SparsitySpec(Layout((4, 8), (8, 1)), (1, 3), (1, 1), 1)
    (msg,) = validate_spec(spec)
    assert "dim 1" in msg and "3 does not divide 8" in msg


def test_view_size_mismatch():
    spec = SparsitySpec(Layout((4, 9), (8, 1)), (1, 1), (1, 1), 1, phys=Layout((4, 8), (8, 1)))
    assert "view size 36 != 32" in validate_spec(spec)


@pytest.mark.parametrize(
    "spec, fragment",
    [
        (SparsitySpec(Layout((4, 8), (0, 1)), (1, 1), (1, 1), 1, phys=Layout((4, 8), (8, 1))), "zero stride"),
        (SparsitySpec(Layout((4, 8), (4, 1)), (1, 1), (1, 1), 1, phys=Layout((4, 8), (8, 1))), "two coordinates"),
        (SparsitySpec(Layout((4, 8), (8, 1)), (1, 1), (1, 4), 5), "keep 5"),
        (SparsitySpec(Layout((4, 8), (8, 1)), (1,), (1, 4), 2), "block arity"),
        (SparsitySpec(Layout((4, 8), (8, 1)), (1, 2), (1, 3), 1), "scope dim 1"),
        (
            SparsitySpec(Layout((4, 8), (8, 1)), (1, 1), (1, 1), 1, domain=DomainSpec((1, 0), (4, 8)), phys=Layout((4, 8), (8, 1))),
            "domain",
        ),
    ],
)
def test_violations(spec, fragment):
    assert any(fragment in v for v in validate_spec(spec))


def test_invalid_spec_raises_on_use():
    spec = SparsitySpec(Layout((4, 8), (8, 1)), (1, 3), (1, 1), 1)
    with pytest.raises(SpecInvalid):
        spec.block_table


# -- block and scope maps -------------------------------------------------


def test_scalar_block_identity():
    spec = two_four(1, 8)
    assert block_elements(spec, 5) == {5}


def test_col16_block_example():
    K = 32
    spec = col16_block(K)
    assert block_coord_elements(spec, (0, 1, 0)) == set(range(8 * K, 8 * K + 16))
    assert element_to_block(spec, 260) == grid_coord_to_ordinal(spec.grid_shape, (0, 1, 0))
    # invert by search
    hits = [j for j in range(spec.num_blocks) if 260 in block_elements(spec, j)]
    assert hits == [element_to_block(spec, 260)]


def test_coupled_two_four_block_example():
    spec = coupled_two_four(1, 32)
    assert block_coord_elements(spec, (0, 0, 3, 0)) == {3, 11}
    # substitute into the view by hand: [m, g, i, j] -> 16g + i + 8j
    assert {16 * 0 + 3 + 8 * j for j in range(2)} == {3, 11}


def test_scope_examples():
    spec = two_four(1, 8)
    assert scope_blocks(spec, 1) == [4, 5, 6, 7]
    assert scope_elements(spec, 0) == {0, 1, 2, 3}
    assert scope_elements(four_eight(1, 16), 0) == set(range(8))


def test_col16_scope_pairs_rows_p_and_p_plus_8():
    K = 32
    spec = col16_block(K)
    blocks = scope_blocks(spec, 0)
    rows = sorted({e // K for j in blocks for e in block_elements(spec, j)})
    assert len(blocks) == 2 and rows == [0, 8]


def test_global_scope():
    spec = SparsitySpec(Layout((4, 8), (8, 1)), (2, 2), (2, 4), 3)
    assert spec.num_scopes == 1
    assert scope_blocks(spec, 0) == list(range(8))
    assert scope_elements(spec, 0) == set(range(32))


def test_beta_matches_literal_packing():
    spec = SparsitySpec(Layout((4, 8), (8, 1)), (2, 4), (1, 1), 1)
    # grid (2, 2); element at row 2, col 4 is block coord (1, 1) -> 1 + 1*2
    assert element_to_block(spec, 2 * 8 + 4) == 3
    # element at row 0 col 4 -> (0, 1) -> 2: dimension 0 varies fastest
    assert element_to_block(spec, 4) == 2


def test_element_outside_view():
    spec = SparsitySpec(
        Layout((2, 4), (4, 1)), (1, 1), (1, 4), 2, domain=DomainSpec((1, 0), (2, 4)), phys=Layout((4, 4), (4, 1))
    )
    with pytest.raises(NotInView):
        element_to_block(spec, 0)
    with pytest.raises(OutOfBounds):
        block_elements(spec, spec.num_blocks)


def test_grid_ordinal_conversions():
    g = (3, 4, 2)
    for o in range(24):
        assert grid_coord_to_ordinal(g, grid_ordinal_to_coord(g, o)) == o
        assert row_major_to_grid_ordinal(g, grid_ordinal_to_row_major(g, o)) == o
    assert grid_ordinal_to_coord(g, 1) == (1, 0, 0)
    assert grid_ordinal_to_row_major(g, 1) == 8


# -- randomized partition / round-trip properties ---------------------------


@st.composite
def random_specs(draw):
    n = draw(st.integers(1, 3))
    block = [draw(st.sampled_from([1, 2, 3])) for _ in range(n)]
    scope = [draw(st.sampled_from([1, 2])) for _ in range(n)]
    mult = [draw(st.integers(1, 3)) for _ in range(n)]
    shape = [b * s * m for b, s, m in zip(block, scope, mult)]
    # random dimension order of a dense tensor, so the view is a permutation
    perm = draw(st.permutations(range(n)))
    stride = [0] * n
    acc = 1
    for k in reversed(perm):
        stride[k] = acc
        acc *= shape[k]
    keep = draw(st.integers(0, int(np.prod(scope))))
    return SparsitySpec(Layout(shape, stride), block, scope, keep)


@settings(max_examples=60, deadline=None)
@given(random_specs())
def test_blocks_match_definition_and_partition(spec):
    assert validate_spec(spec) == []
    ref = blocks_by_definition(spec)
    assert len(ref) == spec.num_blocks
    seen = set()
    for j in range(spec.num_blocks):
        elems = block_elements(spec, j)
        assert elems == ref[j]
        assert not seen & set(elems)
        seen |= set(elems)
        for e in elems:
            assert element_to_block(spec, e) == j
    assert seen == set(range(spec.physical.size))


@settings(max_examples=60, deadline=None)
@given(random_specs())
def test_scopes_match_definition_and_partition(spec):
    ref = scopes_by_definition(spec)
    all_blocks = []
    for l in range(spec.num_scopes):
        blocks = scope_blocks(spec, l)
        assert set(blocks) == ref[l]
        for j in blocks:
            assert block_to_scope(spec, j) == l
        all_blocks += blocks
    assert sorted(all_blocks) == list(range(spec.num_blocks))


@settings(max_examples=60, deadline=None)
@given(random_specs(), st.data())
def test_hard_threshold_counts(spec, data):
    scores = data.draw(st.lists(st.floats(-5, 5), min_size=spec.num_blocks, max_size=spec.num_blocks))
    mask = hard_threshold(spec, scores)
    assert np.all(mask.scope_counts() == spec.keep)
    # every retained block beats or ties every pruned block in its scope
    s = np.asarray(scores)
    for blocks in spec.scope_table:
        kept = [j for j in blocks if mask.retained[j]]
        lost = [j for j in blocks if not mask.retained[j]]
        if kept and lost:
            assert min(s[kept]) >= max(s[lost])


# -- thresholds and masks -------------------------------------------------


def test_threshold_examples():
    spec = two_four(1, 4)
    assert hard_threshold(spec, [4, 1, 3, 2]).retained_blocks() == [0, 2]
    assert hard_threshold(spec, [1, 1, 1, 1]).retained_blocks() == [0, 1]
    full = SparsitySpec(Layout((1, 4), (4, 1)), (1, 1), (1, 4), 4)
    assert hard_threshold(full, [0, 3, 2, 1]).retained_blocks() == [0, 1, 2, 3]


def test_tie_rule_matches_stable_sort():
    rng = np.random.default_rng(0)
    spec = two_four(1, 16)
    for _ in range(50):
        scores = rng.integers(0, 3, 16).astype(float)
        got = hard_threshold(spec, scores).retained_blocks()
        want = []
        for blocks in spec.scope_table:
            order = sorted(blocks, key=lambda j: (-scores[j], j))
            want += order[:2]
        assert got == sorted(want)


def test_threshold_rejects_bad_scores():
    with pytest.raises(NonFiniteScore):
        hard_threshold(two_four(1, 4), [1, np.nan, 0, 0])
    with pytest.raises(ValueError):
        hard_threshold(two_four(1, 4), [1, 2])


def test_element_mask_examples():
    spec = two_four(1, 8)
    keep = [1, 3, 4, 6]
    mask = MaskGrid(spec, tuple(j in keep for j in range(8)))
    assert element_mask(mask) == {0, 2, 5, 7}
    assert element_mask(MaskGrid(spec, (True,) * 8)) == set()
    assert element_mask(MaskGrid(spec, (False,) * 8)) == set(range(8))


# -- achievable sparsities ------------------------------------------------


@pytest.mark.parametrize(
    "spec",
    [two_four(1, 8), SparsitySpec(Layout((1, 4), (4, 1)), (1, 1), (1, 1), 1), nm(4, 8, 16), four_eight(1, 16)],
)
def test_achievable_sparsities_match_enumeration(spec):
    n = spec.blocks_per_scope
    got = achievable_sparsities(spec)
    assert got == enumerate_feasible_sparsities(spec)
    assert got == {Fraction(i, n) for i in range(n + 1)}


def test_achievable_sparsity_values():
    assert achievable_sparsities(two_four(1, 8)) == {0, Fraction(1, 4), Fraction(1, 2), Fraction(3, 4), 1}
    assert achievable_sparsities(SparsitySpec(Layout((1, 4), (4, 1)), (1, 1), (1, 1), 1)) == {0, 1}
    assert len(achievable_sparsities(nm(4, 8, 16))) == 9


# -- coupling --------------------------------------------------------------


def test_single_member_coupling_is_degenerate():
    spec = two_four(2, 8)
    c = CouplingSpec((CouplingMember("w", spec, (0, 1)),))
    for j in range(spec.num_blocks):
        coord = grid_ordinal_to_coord(spec.grid_shape, j)
        assert coupled_block_elements(c, coord) == [("w", block_elements(spec, j))]


def test_two_tensor_scalar_coupling():
    spec = SparsitySpec(Layout((4,), (1,)), (1,), (4,), 2)
    c = CouplingSpec((CouplingMember("t1", spec, (0,)), CouplingMember("t2", spec, (0,))))
    assert coupled_block_elements(c, (2,)) == [("t1", {2}), ("t2", {2})]
    assert c.coupled_block_size == 2


def test_head_coupling_elements():
    h, d = 2, 8
    c = head(h, d)
    assert c.level is CouplingLevel.SCOPE
    for g in range(h):
        parts = dict(coupled_block_elements(c, (g, 0, 0)))
        hd = d // h
        rows = {r * d + col for r in range(g * hd, (g + 1) * hd) for col in range(d)}
        cols = {r * d + col for r in range(d) for col in range(g * hd, (g + 1) * hd)}
        for t in "qkv":
            assert parts[t] == rows
        assert parts["o"] == cols
        assert sum(len(v) for v in parts.values()) == 4 * d * hd


def test_coupled_threshold_scatters():
    spec = SparsitySpec(Layout((4,), (1,)), (1,), (4,), 2)
    c = CouplingSpec((CouplingMember("a", spec, (0,)), CouplingMember("b", spec, (0,))))
    masks = coupled_hard_threshold(c, [0.1, 5, 0.2, 3])
    assert masks["a"].retained_blocks() == masks["b"].retained_blocks() == [1, 3]


def test_grid_shape_mismatch():
    a = SparsitySpec(Layout((4,), (1,)), (1,), (1,), 1)
    b = SparsitySpec(Layout((8,), (1,)), (1,), (1,), 1)
    with pytest.raises(GridShapeMismatch):
        CouplingSpec((CouplingMember("a", a, (0,)), CouplingMember("b", b, (0,))))


# -- JSON -------------------------------------------------------------------


def test_spec_json_round_trip():
    for spec in (two_four(4, 8), col16_block(32), coupled_two_four(2, 16)):
        assert SparsitySpec.from_json(spec.to_json()) == spec


def test_document_with_coupling_list():
    doc = {
        "view": {"shape": [4], "stride": [1]},
        "block": [1],
        "scope": [4],
        "keep": 2,
        "coupling": [{"tensor": "a", "permutation": [0]}, {"tensor": "b", "permutation": [0]}],
    }
    c = load_spec_document(doc)
    assert isinstance(c, CouplingSpec) and [m.tensor_id for m in c.members] == ["a", "b"]
    assert load_spec_document(c.to_json()) == c


def test_spec_rejects_float_fields():
    with pytest.raises((TypeError, ValueError)):
        SparsitySpec.from_json({"view": {"shape": [4], "stride": [1]}, "block": [1.0], "scope": [4], "keep": 2})
