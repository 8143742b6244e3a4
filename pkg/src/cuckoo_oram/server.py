"""In-memory honest-but-curious server with an access trace.

The server stores opaque :class:`~cuckoo_oram.crypto.Cell` objects in
named regions and records every cell read and write as a
:class:`TraceEvent`. That trace, plus the ciphertexts, is all the
adversary ever sees.
"""

import enum
import io
import json
import struct
from typing import NamedTuple

from .crypto import Cell
from .errors import UsageError


class RegionKind(enum.Enum):
    CACHE_Q = "Q"
    STASH_S = "S"
    TABLE = "T"
    ROOT = "ROOT"
    META = "META"
    BUFFER = "BUF"

    # members are singletons; identity hashing keeps region lookups cheap
    __hash__ = object.__hash__


class Region(NamedTuple):
    """Identity of one allocated region.

    ``gen`` counts reallocations of the same (kind, level, side) so that
    probes against different table instances can be told apart.
    """

    kind: RegionKind
    cell_count: int
    level: int = 0
    side: int = 0
    gen: int = 0

    @property
    def label(self):
        if self.kind is RegionKind.TABLE:
            return f"T{self.level}.{self.side}"
        return self.kind.value


class Op(enum.Enum):
    READ = "R"
    WRITE = "W"


class TraceEvent(NamedTuple):
    seq: int
    region: Region
    offset: int
    op: Op

    def to_json(self):
        return json.dumps(
            {"seq": self.seq, "region": self.region.label, "gen": self.region.gen,
             "off": self.offset, "op": self.op.value},
            separators=(",", ":"),
        )


class Server:
    """Addressable cell regions with an access counter and trace recorder.

    With ``record_trace=False`` the server only counts accesses, which is
    what throughput-oriented experiment runs use.
    """

    def __init__(self, record_trace=True):
        self.record_trace = record_trace
        self.access_count = 0
        self._regions = {}
        self._trace = []
        self._seq = 0

    def allocate(self, region, fill):
        """Create ``region`` holding ``fill`` (a list of cells, length cell_count).

        Allocation is not a cell access; callers that must hide the new
        contents write them afterwards.
        """
        if len(fill) != region.cell_count:
            raise UsageError("fill length does not match region size")
        self._regions[region] = list(fill)

    def release(self, region):
        self._regions.pop(region, None)

    def regions(self):
        return list(self._regions)

    def _cells(self, region, offset):
        try:
            cells = self._regions[region]
        except KeyError:
            raise UsageError(f"region {region.label} gen {region.gen} is not allocated") from None
        if not 0 <= offset < region.cell_count:
            raise UsageError(f"offset {offset} outside {region.label} ({region.cell_count} cells)")
        return cells

    def _record(self, region, offset, op):
        self.access_count += 1
        if self.record_trace:
            self._trace.append(TraceEvent(self._seq, region, offset, op))
        self._seq += 1

    def read_cell(self, region, offset):
        cells = self._cells(region, offset)
        self._record(region, offset, Op.READ)
        return cells[offset]

    def write_cell(self, region, offset, cell):
        cells = self._cells(region, offset)
        self._record(region, offset, Op.WRITE)
        cells[offset] = cell

    def drain_trace(self):
        events, self._trace = self._trace, []
        return events

    def peek_cell(self, region, offset):
        """Read without recording; test hooks only."""
        return self._cells(region, offset)[offset]

    def poke_cell(self, region, offset, cell):
        """Overwrite without recording; used for fault injection."""
        self._cells(region, offset)[offset] = cell

    # -- snapshot format ---------------------------------------------------
    # header:  magic "CKOR", u16 version, u64 access_count, u64 seq, u32 regions
    # region:  u8 name length, name, u64 cells, u32 level, u8 side, u32 gen
    # cell:    u32 len + ciphertext, u8 len + nonce

    _MAGIC = b"CKOR"
    _VERSION = 1

    def save(self, path):
        buf = io.BytesIO()
        buf.write(self._MAGIC)
        buf.write(struct.pack(">HQQI", self._VERSION, self.access_count, self._seq, len(self._regions)))
        for region, cells in self._regions.items():
            name = region.kind.value.encode()
            buf.write(struct.pack(">B", len(name)) + name)
            buf.write(struct.pack(">QIBI", region.cell_count, region.level, region.side, region.gen))
            for cell in cells:
                buf.write(struct.pack(">I", len(cell.ciphertext)) + cell.ciphertext)
                buf.write(struct.pack(">B", len(cell.nonce)) + cell.nonce)
        with open(path, "wb") as fh:
            fh.write(buf.getvalue())

    @classmethod
    def load(cls, path, record_trace=True):
        with open(path, "rb") as fh:
            data = memoryview(fh.read())
        if bytes(data[:4]) != cls._MAGIC:
            raise UsageError(f"{path} is not a server snapshot")
        pos = 4
        version, access_count, seq, count = struct.unpack_from(">HQQI", data, pos)
        if version != cls._VERSION:
            raise UsageError(f"unsupported snapshot version {version}")
        pos += struct.calcsize(">HQQI")
        server = cls(record_trace=record_trace)
        server.access_count = access_count
        server._seq = seq
        for _ in range(count):
            (name_len,) = struct.unpack_from(">B", data, pos)
            pos += 1
            kind = RegionKind(bytes(data[pos:pos + name_len]).decode())
            pos += name_len
            cell_count, level, side, gen = struct.unpack_from(">QIBI", data, pos)
            pos += struct.calcsize(">QIBI")
            cells = []
            for _ in range(cell_count):
                (clen,) = struct.unpack_from(">I", data, pos)
                pos += 4
                ct = bytes(data[pos:pos + clen])
                pos += clen
                (nlen,) = struct.unpack_from(">B", data, pos)
                pos += 1
                cells.append(Cell(ct, bytes(data[pos:pos + nlen])))
                pos += nlen
            server._regions[Region(kind, cell_count, level, side, gen)] = cells
        return server


def dump_trace(events, fh):
    """Write events as JSON Lines."""
    for event in events:
        fh.write(event.to_json())
        fh.write("\n")


def load_trace(fh):
    """Parse JSON Lines back into ``(seq, label, gen, off, op)`` tuples."""
    out = []
    for line in fh:
        line = line.strip()
        if line:
            d = json.loads(line)
            out.append((d["seq"], d["region"], d["gen"], d["off"], d["op"]))
    return out
