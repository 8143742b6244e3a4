import itertools

import pytest
from hypothesis import given, settings, strategies as st

from cuckoo_oram.cuckoo import Item, StashEntry
from cuckoo_oram.osort import (PrivateWorkspace, compact_live, dedup_by_epoch, merge_network,
                               network_size, oblivious_sort, rebuild_key)
from cuckoo_oram.crypto import generate_key, make_cipher
from cuckoo_oram.server import Region, RegionKind, Server
from cuckoo_oram.storage import EMPTY, PlainVault, Vault

def apply_network(pairs, values):
    values = list(values)
    for i, j in pairs:
        if values[j] < values[i]:
            values[i], values[j] = values[j], values[i]
    return values


@pytest.mark.parametrize("n", range(1, 13))
def test_zero_one_principle(n):
    pairs = merge_network(n)
    for bits in itertools.product((0, 1), repeat=n):
        assert apply_network(pairs, bits) == sorted(bits)


def test_network_size_counts_comparators():
    for n in range(0, 260):
        assert network_size(n) == len(merge_network(n))


@given(st.lists(st.integers(-50, 50), max_size=70))
def test_network_sorts(values):
    assert apply_network(merge_network(len(values)), values) == sorted(values)


def entries(specs):
    """specs: (x, epoch) for a live item or None for an empty cell."""
    return [EMPTY if s is None else StashEntry(Item(s[0], s[1] * 7, s[1]), False, 0)
            for s in specs]


def region_of(specs):
    return Region(RegionKind.BUFFER, len(specs))


def load(vault, specs):
    region = region_of(specs)
    vault.allocate(region)
    vault.write_all(region, entries(specs))
    return region


spec_lists = st.lists(st.none() | st.tuples(st.integers(0, 9), st.integers(0, 20)),
                      min_size=2, max_size=24)


@settings(deadline=None)
@given(spec_lists, st.sampled_from([2, 3, 1000]))
def test_sort_matches_sorted(specs, ws):
    vault = PlainVault()
    region = load(vault, specs)
    oblivious_sort(vault, region, rebuild_key, PrivateWorkspace(ws))
    got = [rebuild_key(e) for e in vault.peek_all(region)]
    assert got == sorted(rebuild_key(e) for e in entries(specs))


def traced(specs, ws):
    vault = Vault(Server(), make_cipher("transparent", generate_key()))
    region = load(vault, specs)
    vault.server.drain_trace()
    workspace = PrivateWorkspace(ws)
    compact_live(vault, region, workspace)
    dedup_by_epoch(vault, region, workspace)
    return [(e.region, e.offset, e.op) for e in vault.server.drain_trace()]


@settings(deadline=None, max_examples=40)
@given(st.data(), st.integers(2, 20), st.sampled_from([2, 4, 64]))
def test_trace_independent_of_contents(data, size, ws):
    cell = st.none() | st.tuples(st.integers(0, 5), st.integers(0, 9))
    a = data.draw(st.lists(cell, min_size=size, max_size=size))
    b = data.draw(st.lists(cell, min_size=size, max_size=size))
    assert traced(a, ws) == traced(b, ws)


@settings(deadline=None)
@given(spec_lists, st.sampled_from([2, 1000]))
def test_dedup_keeps_freshest(specs, ws):
    vault = PlainVault()
    region = load(vault, specs)
    workspace = PrivateWorkspace(ws)
    oblivious_sort(vault, region, rebuild_key, workspace)
    live = dedup_by_epoch(vault, region, workspace)
    freshest = {}
    for s in specs:
        if s is not None:
            freshest[s[0]] = max(freshest.get(s[0], -1), s[1])
    kept = [(e.item.x, e.item.epoch) for e in vault.peek_all(region) if e.item.live]
    assert live == len(kept)
    assert sorted(kept) == sorted(freshest.items())


@settings(deadline=None)
@given(spec_lists, st.sampled_from([2, 1000]))
def test_compact_is_stable_filter(specs, ws):
    vault = PlainVault()
    region = load(vault, specs)
    live = compact_live(vault, region, PrivateWorkspace(ws))
    out = vault.peek_all(region)
    assert all(e.item.live for e in out[:live])
    assert not any(e.item.live for e in out[live:])
    assert [e.item.x for e in out[:live]] == sorted(s[0] for s in specs if s is not None)
    # running it again changes nothing
    before = [(e.item.x, e.item.epoch, e.item.live) for e in out]
    compact_live(vault, region, PrivateWorkspace(ws))
    assert [(e.item.x, e.item.epoch, e.item.live) for e in vault.peek_all(region)] == before


def test_workspace_overrun():
    ws = PrivateWorkspace(3)
    with ws.hold(2):
        with pytest.raises(AssertionError):
            with ws.hold(2):
                pass
    assert ws.current_use == 0 and ws.peak == 2


def test_workspace_sizing():
    assert PrivateWorkspace.for_ram(64, 0.5).capacity == 8
    assert PrivateWorkspace.for_ram(100, 1).capacity == 100
