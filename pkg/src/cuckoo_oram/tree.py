"""PRF-free variant: a complete binary tree of pointer-carrying node records.

Leaves hold the n values (n padded to a power of two N). Every non-root
node lives in the hierarchy under a random location pair; its parent
stores a :class:`Pointer` (level, i1, i2) to it, so no hashing is needed
to find it. The root sits alone in a ROOT region and is rewritten every
episode.

An access walks root to leaf, then moves the whole path into Q, so Q
holds exactly h = log2 N nodes and is flushed to T_1 after every
episode. Each rebuild draws fresh pairs for every node it moves and
records the moves in a relocation map keyed by (node id, level it came
from); parents rebuilt later in the same cascade, and the root, are
repointed from that map. The cascade runs deepest first, so every
parent of a moved node is either in the same group or in a later one.
"""

import numpy as np

from .cuckoo import Item, Pointer, StashEntry
from .errors import InitializationError, StashOverflowError, UsageError
from .hierarchy import AccessOp, Geometry, LeveledOram
from .server import Region, RegionKind


def tree_shape(n):
    """``(N, h)``: leaf count padded to a power of two and the tree height."""
    h = max(1, (n - 1).bit_length())
    return 1 << h, h


def path_ids(x, leaves):
    """Node ids from depth 1 down to the leaf for index ``x`` (root excluded)."""
    ids = []
    v = x + leaves - 1
    while v > 0:
        ids.append(v)
        v = (v - 1) // 2
    ids.reverse()
    return ids


def child_slot(node_id):
    """0 when ``node_id`` is a left child, 1 when right."""
    return (node_id - 1) % 2


def fixup_pointers(records, relocation):
    """Repoint children of ``records`` that appear in ``relocation``.

    ``relocation`` maps (child id, level the child was at) to its new
    :class:`Pointer`. Pointers to children that did not move are left
    alone. A sort-merge join: requests sorted by key against the sorted
    relocation keys.
    """
    requests = []
    for pos, rec in enumerate(records):
        if rec.children is None:
            continue
        for side, ptr in enumerate(rec.children):
            requests.append(((2 * rec.x + 1 + side, ptr.level), pos, side))
    requests.sort()
    keys = sorted(relocation)
    j = 0
    for key, pos, side in requests:
        while j < len(keys) and keys[j] < key:
            j += 1
        if j < len(keys) and keys[j] == key:
            rec = records[pos]
            kids = list(rec.children)
            kids[side] = relocation[key]
            rec.children = tuple(kids)


class TreeOram(LeveledOram):
    def __init__(self, params, server=None, key=None):
        super().__init__(params, server, key)
        self.leaves, self.height = tree_shape(params.n)
        h = self.height
        self.geometry = Geometry.build(h, 1, 2 * self.leaves - 2, params)
        self._origins = {}
        if server is None:
            self._init_tree()

    @classmethod
    def attach(cls, params, server, key):
        return cls(params, server, key)

    def root_region(self):
        return Region(RegionKind.ROOT, 1)

    def _init_tree(self):
        L = self.geometry.levels
        st = self._fresh_state()
        placeholder = Pointer(L, 0, 0)
        nodes = []
        for nid in range(1, 2 * self.leaves - 1):
            kids = (placeholder, placeholder) if nid < self.leaves - 1 else None
            nodes.append(Item(nid, 0, 0, None, True, kids))
        self._origins = {nid: L for nid in range(1, 2 * self.leaves - 1)}
        relocation = {}
        try:
            self._init_regions(st, nodes, relocation)
        except StashOverflowError as exc:
            raise InitializationError(str(exc)) from exc
        root = Item(0, 0, 0, None, True, (placeholder, placeholder))
        fixup_pointers([root], relocation)
        self.vault.allocate(self.root_region())
        self.vault.write(self.root_region(), 0, StashEntry(root, False, 0))

    # -- rebuild hooks -------------------------------------------------------

    def _addressing(self, st, level, items, attempt):
        m = self.geometry.cells[level]
        rng = np.random.default_rng([self.params.master_seed & (2**63 - 1), st.t, level, attempt])
        pairs = rng.integers(0, m, size=(len(items), 2)).tolist()
        for it, pair in zip(items, pairs):
            it.loc_pair = tuple(pair)
        return None

    def _staged_item(self, entry):
        self._origins[entry.item.x] = entry.tag
        return entry.item

    def _commit_relocation(self, level, items, relocation):
        for it in items:
            relocation[(it.x, self._origins[it.x])] = Pointer(level, *it.loc_pair)
        fixup_pointers(items, relocation)
        self._origins = {}

    # -- access ----------------------------------------------------------------

    def read(self, x):
        return self.access(AccessOp.READ, x)

    def write(self, x, value):
        return self.access(AccessOp.WRITE, x, value)

    def access(self, op, x, value=None):
        if isinstance(op, str):
            op = AccessOp(op)
        if not 0 <= x < self.params.n:
            raise UsageError(f"index {x} outside [0, {self.params.n})")
        if op is AccessOp.WRITE and value is None:
            raise UsageError("write needs a value")
        g = self.geometry
        st = self.load_state()
        rng = self.episode_rng(st.t) if self.oblivious else None
        root_region = self.root_region()
        root = self.vault.read(root_region, 0).item.copy()
        q_region = self.q_region(st)
        s_region = self.s_region()
        ids = path_ids(x, self.leaves)

        path = []
        cleaned = set()
        ptr = root.children[child_slot(ids[0])]
        q_entries = stash = None
        for depth, nid in enumerate(ids):
            if self.oblivious or q_entries is None:
                q_entries = self.vault.read_all(q_region)
                stash = self.vault.read_all(s_region)
            found = None
            if ptr.level == 0:
                for entry in q_entries:
                    if entry.item.live and entry.item.x == nid:
                        found = entry.item
            for entry in stash:
                if entry.dirty and entry.tag == ptr.level and entry.item.x == nid:
                    found = entry.item
                    cleaned.add((nid, ptr.level))
            for level in range(1, g.levels + 1):
                if level == ptr.level:
                    offs = (ptr.i1, ptr.i2)
                elif self.oblivious:
                    m = g.cells[level]
                    offs = (rng.randrange(m), rng.randrange(m))
                else:
                    continue
                regions = self.table_regions(st, level)
                for side in (0, 1):
                    item = self.vault.read(regions[side], offs[side]).item
                    if level == ptr.level and item.live and item.x == nid:
                        found = item
            if found is None:
                raise AssertionError(f"node {nid} missing at {ptr}")
            rec = found.copy()
            path.append(rec)
            if depth + 1 < len(ids):
                ptr = rec.children[child_slot(ids[depth + 1])]

        leaf = path[-1]
        old = leaf.value
        if op is AccessOp.WRITE:
            leaf.value = value
        # the path moves to Q as a group: node at depth d takes slot d - 1
        parent = root
        for slot, rec in enumerate(path):
            rec.epoch = st.t + 1
            rec.loc_pair = None
            kids = list(parent.children)
            kids[child_slot(rec.x)] = Pointer(0, slot, slot)
            parent.children = tuple(kids)
            parent = rec
        new_q = [StashEntry(rec, False, 0) for rec in path]
        new_q.extend(q_entries[len(path):])
        for entry in stash:
            if entry.dirty and (entry.item.x, entry.tag) in cleaned:
                entry.dirty = False
        self.vault.write_all(q_region, new_q)
        self.vault.write_all(s_region, stash)
        st.t += 1
        relocation = self.cascade(st)
        fixup_pointers([root], relocation)
        self.vault.write(root_region, 0, StashEntry(root, False, 0))
        self.store_state(st)
        return old

    # -- test oracles ------------------------------------------------------------

    def walk(self):
        """Follow pointers from the root without tracing.

        Returns ``{node id: (level, item)}`` for every reachable node and
        raises AssertionError if a pointer dangles or a node is reached twice.
        """
        st = self.peek_state()
        root = self.vault.peek(self.root_region(), 0).item
        stash = self.vault.peek_all(self.s_region())
        q_region = self.q_region(st)
        seen = {}
        todo = [(0, root)]
        while todo:
            nid, rec = todo.pop()
            if rec.children is None:
                continue
            for side, ptr in enumerate(rec.children):
                cid = 2 * nid + 1 + side
                child = None
                if ptr.level == 0:
                    cand = self.vault.peek(q_region, ptr.i1).item
                    child = cand if cand.live and cand.x == cid else None
                else:
                    for e in stash:
                        if e.dirty and e.tag == ptr.level and e.item.x == cid:
                            child = e.item
                    regions = self.table_regions(st, ptr.level)
                    for s, off in zip((0, 1), (ptr.i1, ptr.i2)):
                        cand = self.vault.peek(regions[s], off).item
                        if cand.live and cand.x == cid:
                            child = cand
                if child is None:
                    raise AssertionError(f"dangling pointer to node {cid}: {ptr}")
                if cid in seen:
                    raise AssertionError(f"node {cid} reached twice")
                seen[cid] = (ptr.level, child)
                todo.append((cid, child))
        return seen
