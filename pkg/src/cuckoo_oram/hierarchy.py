"""Stateless hierarchical ORAM over cuckoo tables that share one stash.

Server layout: a cache Q, a shared stash S, cuckoo tables T_1..T_L whose
capacities double per level, and a one-cell META record holding the
access counter, region generations and table seeds. Each logical access
is one episode: an access phase that reads all of Q and S plus two cells
per table, then a rebuild phase that rewrites Q and S and runs whatever
level moves the access counter schedules.

Stash entries remember the level whose rebuild spilled them and travel
with that level when it is next moved, so a stale spilled copy can never
shadow a fresher copy held in a shallower table.
"""

import enum
import math
import random
import struct
from dataclasses import dataclass

from . import osort
from .crypto import SeedChain, generate_key, make_cipher, prf_location
from .cuckoo import Item, StashEntry, build
from .errors import InitializationError, StashOverflowError, UsageError
from .server import Region, RegionKind, Server
from .stats import StashStats
from .storage import EMPTY, PlainVault, Vault


# cipher name selecting an unencrypted, untraced store that only counts
# accesses; the protocol's access pattern is unchanged
COUNTING = "none"


class Mode(enum.Enum):
    FUNCTIONAL = "functional"
    OBLIVIOUS = "oblivious"


class AccessOp(enum.Enum):
    READ = "read"
    WRITE = "write"


def ceil_log2(n):
    return max(1, (n - 1).bit_length())


@dataclass(frozen=True)
class OramParams:
    n: int
    epsilon: float = 0.2
    c: int = 2
    stash_factor: float = 1.0
    nu: float = 1.0
    mode: Mode = Mode.OBLIVIOUS
    master_seed: int = 0
    cipher: str = "aesgcm"
    record_trace: bool = True
    build_retries: int = 8
    workspace_cells: int = None

    def __post_init__(self):
        if self.n < 2:
            raise UsageError("n must be at least 2")
        if self.epsilon <= 0:
            raise UsageError("epsilon must be positive")
        if self.c < 1:
            raise UsageError("c must be at least 1")
        if self.stash_factor < 1:
            raise UsageError("stash factor must be at least 1")
        if self.nu <= 0:
            raise UsageError("nu must be positive")
        if isinstance(self.mode, str):
            object.__setattr__(self, "mode", Mode(self.mode))

    @property
    def log_n(self):
        return ceil_log2(self.n)

    @property
    def stash_capacity(self):
        return math.ceil(self.stash_factor * self.log_n - 1e-9)

    @property
    def move_limit(self):
        return self.c * self.log_n

    def workspace(self):
        if self.workspace_cells is not None:
            return osort.PrivateWorkspace(self.workspace_cells)
        return osort.PrivateWorkspace.for_ram(self.n, self.nu)


def table_cells(level, q_size, epsilon):
    """Cells per side of level ``level``: ceil((1 + eps) * 2**level * |Q|)."""
    return math.ceil(round((1 + epsilon) * (2 ** level) * q_size, 9))


@dataclass(frozen=True)
class Geometry:
    """Region sizes and the flush cadence.

    ``q_period`` is the number of episodes between Q flushes; level i
    moves into level i+1 every ``2**i * q_period`` episodes.
    """

    q_size: int
    q_period: int
    levels: int
    cells: tuple
    capacity: tuple
    stash_capacity: int
    move_limit: int

    @classmethod
    def build(cls, q_size, q_period, items, params):
        levels = 1
        while (2 ** levels) * q_size < items:
            levels += 1
        cells = (0,) + tuple(table_cells(i, q_size, params.epsilon) for i in range(1, levels + 1))
        capacity = (q_size,) + tuple((2 ** i) * q_size for i in range(1, levels + 1))
        return cls(q_size, q_period, levels, cells, capacity,
                   params.stash_capacity, params.move_limit)

    def total_cells(self, extra=0):
        return self.q_size + self.stash_capacity + 2 * sum(self.cells) + extra


def prf_geometry(params):
    """|Q| = ceil(log2 n), L = min{i : 2**i * |Q| >= n}."""
    q = params.log_n
    return Geometry.build(q, q, params.n, params)


def flushes_due(t, geometry):
    """Level moves scheduled after episode ``t``, deepest first.

    Returns ``(source, destination)`` pairs with source 0 meaning Q.
    """
    if t < 1:
        raise UsageError("t must be at least 1")
    moves = []
    for i in range(geometry.levels - 1, 0, -1):
        if t % ((2 ** i) * geometry.q_period) == 0:
            moves.append((i, i + 1))
    if t % geometry.q_period == 0:
        moves.append((0, 1))
    return moves


def merge_stash(kept, spilled, tag, capacity=None):
    """Union of kept dirty entries and a build's spill, one entry per index.

    The highest epoch wins. Raises :class:`StashOverflowError` when the
    union exceeds ``capacity``. Returns dirty entries only; callers pad
    with clean markers when writing the stash out.
    """
    best = {}
    for entry in kept:
        if entry.dirty:
            best[entry.item.x] = entry
    for item in spilled:
        cur = best.get(item.x)
        if cur is None or item.epoch > cur.item.epoch:
            best[item.x] = StashEntry(item, True, tag)
    merged = sorted(best.values(), key=lambda e: (e.tag, e.item.x))
    if capacity is not None and len(merged) > capacity:
        raise StashOverflowError(f"stash needs {len(merged)} slots, has {capacity}")
    return merged


# -- META record ---------------------------------------------------------

_META_HEAD = struct.Struct(">QQQB32s")
_META_LEVEL = struct.Struct(">QQQ")


@dataclass
class EpisodeState:
    """Everything a client reads from META at the start of an episode."""

    t: int
    chain: SeedChain
    gens: list
    seeds: list
    buf_gen: int = 0

    def copy(self):
        return EpisodeState(self.t, self.chain, list(self.gens), list(self.seeds), self.buf_gen)

    def encode(self):
        head = self.chain.head
        out = [_META_HEAD.pack(self.t, self.chain.position, self.buf_gen, len(head),
                               head.ljust(32, b"\0"))]
        for gen, (s0, s1) in zip(self.gens, self.seeds):
            out.append(_META_LEVEL.pack(gen, s0, s1))
        return b"".join(out)

    @classmethod
    def decode(cls, data, levels):
        t, position, buf_gen, hlen, head = _META_HEAD.unpack_from(data, 0)
        gens, seeds = [], []
        off = _META_HEAD.size
        for _ in range(levels + 1):
            gen, s0, s1 = _META_LEVEL.unpack_from(data, off)
            off += _META_LEVEL.size
            gens.append(gen)
            seeds.append((s0, s1))
        return cls(t, SeedChain(head[:hlen], position), gens, seeds, buf_gen)


class LeveledOram:
    """Machinery shared by the PRF hierarchy and the tree variant.

    Subclasses supply ``geometry``, ``_addressing`` (seed or location-pair
    assignment for a rebuild) and the access phase.
    """

    geometry: Geometry

    def __init__(self, params, server=None, key=None):
        self.params = params
        self.oblivious = params.mode is Mode.OBLIVIOUS
        self.key = key if key is not None else generate_key()
        if self.oblivious and params.cipher != COUNTING:
            self.server = server if server is not None else Server(params.record_trace)
            self.vault = Vault(self.server, make_cipher(params.cipher, self.key))
        else:
            self.vault = server if server is not None else PlainVault()
            self.server = self.vault
        self.workspace = params.workspace()
        self.stash_stats = StashStats(capacity=params.stash_capacity)
        self.build_failures = 0
        self.leaky_probes = False

    # -- regions -----------------------------------------------------------

    def q_region(self, st):
        return Region(RegionKind.CACHE_Q, self.geometry.q_size, gen=st.gens[0])

    def s_region(self):
        return Region(RegionKind.STASH_S, self.geometry.stash_capacity)

    def meta_region(self):
        return Region(RegionKind.META, 1)

    def table_regions(self, st, level):
        m = self.geometry.cells[level]
        gen = st.gens[level]
        return (Region(RegionKind.TABLE, m, level, 0, gen),
                Region(RegionKind.TABLE, m, level, 1, gen))

    def episode_rng(self, t):
        return random.Random(b"probe" + self.params.master_seed.to_bytes(8, "big")
                             + t.to_bytes(8, "big"))

    # -- META --------------------------------------------------------------

    def load_state(self):
        if not self.oblivious:
            return self.server.read_cell(self.meta_region(), 0).copy()
        data = self.vault.cipher.decrypt(self.server.read_cell(self.meta_region(), 0))
        return EpisodeState.decode(data, self.geometry.levels)

    def peek_state(self):
        """META without tracing (test oracles)."""
        raw = self.vault.peek_raw(self.meta_region(), 0)
        if not self.oblivious:
            return raw.copy()
        return EpisodeState.decode(raw, self.geometry.levels)

    def store_state(self, st):
        if not self.oblivious:
            self.server.write_cell(self.meta_region(), 0, st.copy())
            return
        self.server.write_cell(self.meta_region(), 0, self.vault.cipher.encrypt(st.encode()))

    def _fresh_state(self):
        chain = SeedChain.start(self.params.master_seed)
        seeds = [(0, 0)]
        for _ in range(self.geometry.levels):
            chain, pair = chain.take(2)
            seeds.append(tuple(pair))
        return EpisodeState(0, chain, [0] * (self.geometry.levels + 1), seeds)

    def _write_fresh(self, region, entries=None):
        self.vault.allocate(region)
        self.vault.write_all(region, [EMPTY] * region.cell_count if entries is None else entries)

    def _init_regions(self, st, deepest_items, relocation=None):
        """Allocate every region; T_L receives ``deepest_items``."""
        g = self.geometry
        meta = self.meta_region()
        self.vault.allocate(meta)
        self._write_fresh(self.q_region(st))
        for level in range(1, g.levels):
            for region in self.table_regions(st, level):
                self._write_fresh(region)
        spilled_entries = self._build_into(st, g.levels, deepest_items, [],
                                           {} if relocation is None else relocation)
        self._write_fresh(self.s_region(), self._pad_stash(spilled_entries))
        self.store_state(st)

    def _pad_stash(self, dirty_entries):
        cap = self.geometry.stash_capacity
        out = list(dirty_entries)
        # functional mode lets the stash grow past capacity and counts it
        out.extend([EMPTY] * (cap - len(out)))
        return out

    # -- rebuild pipeline ----------------------------------------------------

    def _addressing(self, st, level, items, attempt):
        """Return seeds for ``level``, or None after setting ``loc_pair`` on items."""
        raise NotImplementedError

    def _build_into(self, st, level, items, kept, relocation):
        """Build ``items`` into a fresh generation of ``level``; returns the merged stash.

        Retries with fresh addressing while the merged stash would
        overflow; functional mode records the overflow instead.
        """
        g = self.geometry
        attempts = self.params.build_retries if self.oblivious else 1
        for attempt in range(attempts):
            seeds = self._addressing(st, level, items, attempt)
            table, spilled = build(items, level, g.cells[level], seeds, None, g.move_limit,
                                   capacity=g.capacity[level])
            merged = merge_stash(kept, spilled, level)
            if len(merged) <= g.stash_capacity or not self.oblivious:
                break
            self.build_failures += 1
        else:
            raise StashOverflowError(
                f"level {level} rebuild overflowed the stash {attempts} times")
        if seeds is not None:
            st.seeds[level] = seeds
        self._commit_relocation(level, items, relocation)
        for region in self.table_regions(st, level):
            self.vault.release(region)
        st.gens[level] += 1
        for side, region in enumerate(self.table_regions(st, level)):
            self.vault.allocate(region)
            self.vault.write_all(region, [
                StashEntry(it, False, 0) if it is not None else EMPTY
                for it in table.slots[side]
            ])
        self.stash_stats.record(len(merged))
        return merged

    def _commit_relocation(self, level, items, relocation):
        pass

    def _source_regions(self, st, level):
        if level == 0:
            return [self.q_region(st)]
        return list(self.table_regions(st, level))

    def flush(self, st, src, dst, relocation=None):
        """Move level ``src`` (0 = Q) into level ``dst``, merging its contents.

        Steps: copy S (moving tags only), source and destination into a
        scratch buffer; sort by (index, newest first); drop stale copies;
        compact; build the destination with fresh addressing; merge the
        spill into S; reset the source to empty markers.
        """
        relocation = {} if relocation is None else relocation
        s_region = self.s_region()
        stash = self.vault.read_all(s_region)
        moving = (src, dst)
        kept = [e for e in stash if e.dirty and e.tag not in moving]
        sources = self._source_regions(st, src) + list(self.table_regions(st, dst))
        if self.oblivious:
            items = self._gather_oblivious(st, stash, moving, sources, src)
        else:
            items = self._gather_plain(stash, moving, sources, src)
        merged = self._build_into(st, dst, items, kept, relocation)
        self.vault.write_all(s_region, self._pad_stash(merged))
        for region in self._source_regions(st, src):
            self.vault.release(region)
        if dst != src:
            st.gens[src] += 1
            if src > 0:
                st.chain, pair = st.chain.take(2)
                st.seeds[src] = tuple(pair)
            for region in self._source_regions(st, src):
                self._write_fresh(region)

    def _gather_oblivious(self, st, stash, moving, sources, src):
        size = len(stash) + sum(r.cell_count for r in sources)
        st.buf_gen += 1
        buf = self.vault.allocate(Region(RegionKind.BUFFER, size, gen=st.buf_gen))
        pos = 0
        for entry in stash:
            if entry.dirty and entry.tag in moving:
                self.vault.write(buf, pos, StashEntry(entry.item.copy(), False, entry.tag))
            else:
                self.vault.write(buf, pos, EMPTY)
            pos += 1
        for region in sources:
            origin = src if region.kind is RegionKind.CACHE_Q else region.level
            for off in range(region.cell_count):
                entry = self.vault.read(region, off)
                self.vault.write(buf, pos, StashEntry(entry.item.copy(), False, origin))
                pos += 1
        ws = self.workspace
        osort.oblivious_sort(self.vault, buf, osort.rebuild_key, ws)
        osort.dedup_by_epoch(self.vault, buf, ws)
        live = osort.compact_live(self.vault, buf, ws)
        # the build stages the whole level client-side (see README, workspace note)
        staged = [self.vault.read(buf, i) for i in range(size)]
        self.vault.release(buf)
        return [self._staged_item(e) for e in staged[:live]]

    def _gather_plain(self, stash, moving, sources, src):
        best = {}
        records = [(e.item, e.tag) for e in stash if e.dirty and e.tag in moving]
        for region in sources:
            origin = src if region.kind is RegionKind.CACHE_Q else region.level
            for entry in self.vault.read_all(region):
                if entry.item.live:
                    records.append((entry.item, origin))
        for item, origin in records:
            item = item.copy()
            cur = best.get(item.x)
            if cur is None or item.epoch > cur[0].epoch:
                best[item.x] = (item, origin)
        return [self._staged_item(StashEntry(it, False, origin))
                for it, origin in sorted(best.values(), key=lambda r: r[0].x)]

    def _staged_item(self, entry):
        return entry.item

    def cascade(self, st, relocation=None):
        relocation = {} if relocation is None else relocation
        for src, dst in flushes_due(st.t, self.geometry):
            self.flush(st, src, dst, relocation)
        return relocation

    # -- test oracles ---------------------------------------------------------

    def census(self):
        """Decrypt every region without tracing; returns {region label: entries}."""
        out = {}
        for region in self.server.regions():
            if region.kind in (RegionKind.META,):
                continue
            out[(region.label, region.gen)] = self.vault.peek_all(region)
        return out


class HierarchicalOram(LeveledOram):
    """PRF-addressed hierarchy: the O(log n) construction.

    In OBLIVIOUS mode all state lives encrypted on an instrumented
    :class:`~cuckoo_oram.server.Server`. FUNCTIONAL mode runs the same
    protocol over an in-memory store and skips the decoy probes.
    """

    def __init__(self, params, server=None, key=None):
        super().__init__(params, server, key)
        self.geometry = prf_geometry(params)
        if server is None:
            st = self._fresh_state()
            items = [Item(x, 0, 0) for x in range(params.n)]
            try:
                self._init_regions(st, items)
            except StashOverflowError as exc:
                raise InitializationError(str(exc)) from exc

    @classmethod
    def attach(cls, params, server, key):
        """A fresh client for existing server state (statelessness)."""
        return cls(params, server, key)

    def _addressing(self, st, level, items, attempt):
        st.chain, pair = st.chain.take(2)
        return tuple(pair)

    def read(self, x):
        return self.access(AccessOp.READ, x)

    def write(self, x, value):
        return self.access(AccessOp.WRITE, x, value)

    def access(self, op, x, value=None):
        """One episode. Returns the value held before the access."""
        if isinstance(op, str):
            op = AccessOp(op)
        if not 0 <= x < self.params.n:
            raise UsageError(f"index {x} outside [0, {self.params.n})")
        if op is AccessOp.WRITE and value is None:
            raise UsageError("write needs a value")
        g = self.geometry
        st = self.load_state()
        rng = self.episode_rng(st.t) if self.oblivious else None
        q_region = self.q_region(st)
        s_region = self.s_region()
        q_entries = self.vault.read_all(q_region)
        stash = self.vault.read_all(s_region)

        found = None
        for entry in q_entries:
            it = entry.item
            if it.live and it.x == x and (found is None or it.epoch > found.epoch):
                found = it
        stash_hit = None
        for entry in stash:
            if entry.dirty and entry.item.x == x:
                stash_hit = entry
        from_stash = False
        for level in range(1, g.levels + 1):
            m = g.cells[level]
            seeds = st.seeds[level]
            if found is None or self.leaky_probes:
                offs = (prf_location(seeds[0], x, m), prf_location(seeds[1], x, m))
            elif self.oblivious:
                offs = (rng.randrange(m), rng.randrange(m))
            else:
                continue
            regions = self.table_regions(st, level)
            cells = (self.vault.read(regions[0], offs[0]), self.vault.read(regions[1], offs[1]))
            if found is None:
                for entry in cells:
                    if entry.item.live and entry.item.x == x:
                        found = entry.item
                        break
                if found is None and stash_hit is not None and stash_hit.tag == level:
                    found = stash_hit.item
                    from_stash = True
        if found is None:
            raise AssertionError(f"index {x} missing from every level")

        old = found.value
        new_value = value if op is AccessOp.WRITE else old
        q_entries[st.t % g.q_size] = StashEntry(Item(x, new_value, st.t + 1), False, 0)
        if from_stash:
            stash_hit.dirty = False
        self.vault.write_all(q_region, q_entries)
        self.vault.write_all(s_region, stash)
        st.t += 1
        self.cascade(st)
        self.store_state(st)
        return old
