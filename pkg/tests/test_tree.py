import random

import pytest
from hypothesis import given, settings, strategies as st

from cuckoo_oram import Mode, OramParams, TreeOram
from cuckoo_oram.cuckoo import Item, Pointer
from cuckoo_oram.errors import UsageError
from cuckoo_oram.hierarchy import Geometry
from cuckoo_oram.server import RegionKind
from cuckoo_oram.tree import child_slot, fixup_pointers, path_ids, tree_shape


def tree(n, seed=0, mode=Mode.OBLIVIOUS, **kw):
    kw.setdefault("cipher", "transparent")
    kw.setdefault("nu", 2.0)
    return TreeOram(OramParams(n, mode=mode, master_seed=seed, **kw))


@pytest.mark.parametrize("n, leaves, h", [(4, 4, 2), (5, 8, 3), (1024, 1024, 10), (2, 2, 1)])
def test_tree_shape(n, leaves, h):
    assert tree_shape(n) == (leaves, h)


def test_small_tree_paths():
    # n=4: 7 nodes, root 0, internal 1 and 2, leaves 3..6
    assert path_ids(0, 4) == [1, 3]
    assert path_ids(3, 4) == [2, 6]
    assert [child_slot(i) for i in (1, 2, 5, 6)] == [0, 1, 0, 1]


def test_geometry_holds_every_non_root_node():
    oram = tree(4)
    assert oram.geometry.q_size == 2 and oram.geometry.q_period == 1
    assert oram.geometry.capacity[-1] >= 6


@pytest.mark.parametrize("n", [2, 4, 6, 16])
def test_init_reachability(n):
    oram = tree(n, seed=n)
    seen = oram.walk()
    leaves = oram.leaves
    assert sorted(seen) == list(range(1, 2 * leaves - 1))


def test_root_region_fixed():
    oram = tree(8)
    for x in (1, 5, 1):
        oram.server.drain_trace()
        oram.read(x)
        events = oram.server.drain_trace()
        assert events[1].region.kind is RegionKind.ROOT and events[1].offset == 0


def access_phase_reads(oram, x):
    oram.server.drain_trace()
    oram.read(x)
    reads = 0
    for e in oram.server.drain_trace()[1:]:
        if e.op.value == "W":
            break
        reads += 1
    return reads


def test_access_footprint():
    oram = tree(64, cipher="transparent")
    g = oram.geometry
    expected = 1 + oram.height * (g.q_size + g.stash_capacity + 2 * g.levels)
    rng = random.Random(2)
    counts = {access_phase_reads(oram, x) for x in [0, 0, 63] + rng.sample(range(64), 10)}
    assert counts == {expected}


def test_footprint_n1024_shape():
    leaves, h = tree_shape(1024)
    g = Geometry.build(h, 1, 2 * leaves - 2, OramParams(1024))
    assert (g.q_size, g.stash_capacity, g.levels) == (10, 10, 8)
    assert 1 + h * (g.q_size + g.stash_capacity + 2 * g.levels) == 361


def node(x, kids):
    return Item(x, children=tuple(kids) if kids else None)


def test_fixup_leaf_only_group():
    parent = node(1, [Pointer(2, 1, 1), Pointer(2, 4, 4)])
    leaf = node(3, None)
    fixup_pointers([leaf], {(3, 2): Pointer(1, 0, 5)})
    assert leaf.children is None
    assert parent.children == (Pointer(2, 1, 1), Pointer(2, 4, 4))


def test_fixup_matches_origin_level():
    rec = node(1, [Pointer(2, 1, 1), Pointer(3, 4, 4)])
    fixup_pointers([rec], {(3, 2): Pointer(1, 7, 7), (4, 2): Pointer(1, 8, 8)})
    # child 4 came from level 3, so the level-2 entry for it is a different copy
    assert rec.children == (Pointer(1, 7, 7), Pointer(3, 4, 4))


@given(st.lists(st.tuples(st.integers(1, 30), st.integers(0, 4), st.integers(0, 4)),
                min_size=1, max_size=15),
       st.dictionaries(st.tuples(st.integers(3, 62), st.integers(0, 4)),
                       st.builds(Pointer, st.integers(0, 4), st.integers(0, 9),
                                 st.integers(0, 9)), max_size=20))
def test_fixup_idempotent(specs, relocation):
    recs = [node(x, [Pointer(a, 0, 0), Pointer(b, 1, 1)]) for x, a, b in specs]
    fixup_pointers(recs, relocation)
    once = [r.children for r in recs]
    fixup_pointers(recs, relocation)
    assert [r.children for r in recs] == once
    for r, (x, a, b) in zip(recs, specs):
        for side, level in enumerate((a, b)):
            expect = relocation.get((2 * x + 1 + side, level), Pointer(level, side, side))
            assert r.children[side] == expect


def check_invariants(oram):
    seen = oram.walk()
    assert sorted(seen) == list(range(1, 2 * oram.leaves - 1))
    for nid, (level, _) in seen.items():
        parent = (nid - 1) // 2
        if parent:
            assert seen[parent][0] <= level, f"node {nid} above its parent"
    return seen


@pytest.mark.parametrize("mode", [Mode.FUNCTIONAL, Mode.OBLIVIOUS])
def test_invariants_every_episode(mode):
    n = 16
    oram = tree(n, seed=7, mode=mode)
    plain = [0] * n
    rng = random.Random(7)
    for _ in range(90):
        x, v = rng.randrange(n), rng.randrange(100)
        assert oram.write(x, v) == plain[x]
        plain[x] = v
        seen = check_invariants(oram)
        leaves = {nid - (oram.leaves - 1): item.value for nid, (_, item) in seen.items()
                  if nid >= oram.leaves - 1}
        assert [leaves[x] for x in range(n)] == plain


@settings(max_examples=20, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 11), st.booleans(), st.integers(-5, 5)), max_size=60),
       st.integers(0, 2**32))
def test_oracle_equivalence(ops, seed):
    oram = tree(12, seed, mode=Mode.FUNCTIONAL)
    plain = [0] * 12
    for x, w, v in ops:
        assert (oram.write(x, v) if w else oram.read(x)) == plain[x]
        if w:
            plain[x] = v


def test_oblivious_matches_functional():
    xs = [random.Random(1).randrange(10) for _ in range(60)]
    a, b = tree(10, 1, Mode.FUNCTIONAL), tree(10, 1, Mode.OBLIVIOUS)
    for i, x in enumerate(xs):
        assert a.write(x, i) == b.write(x, i)
    assert a.stash_stats.per_flush == b.stash_stats.per_flush


def test_bad_requests():
    oram = tree(8, mode=Mode.FUNCTIONAL)
    with pytest.raises(UsageError):
        oram.read(8)
    with pytest.raises(UsageError):
        oram.access("write", 1)
