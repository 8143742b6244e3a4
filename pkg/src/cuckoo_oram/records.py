"""Fixed-width plaintext encoding of items and stash entries.

Every item cell, live or empty, table or stash, encodes to ``RECORD_BYTES``
bytes so ciphertext length reveals nothing about content.
"""

import struct

from .cuckoo import Item, Pointer, StashEntry
from .errors import IntegrityError

# flags, tag, x, value, epoch, loc1, loc2, (level, i1, i2) x 2 children
_FORMAT = struct.Struct(">BbQqQQQbQQbQQ")
RECORD_BYTES = _FORMAT.size

_LIVE, _DIRTY, _HAS_LOC, _HAS_CHILDREN = 1, 2, 4, 8
_NO_PTR = (0, 0, 0)


def encode(item, dirty=False, tag=0):
    flags = 0
    if item.live:
        flags |= _LIVE
    if dirty:
        flags |= _DIRTY
    loc = item.loc_pair
    if loc is not None:
        flags |= _HAS_LOC
    else:
        loc = (0, 0)
    kids = item.children
    if kids is not None:
        flags |= _HAS_CHILDREN
        left, right = kids
    else:
        left = right = _NO_PTR
    return _FORMAT.pack(flags, tag, item.x, item.value, item.epoch, loc[0], loc[1],
                        left[0], left[1], left[2], right[0], right[1], right[2])


def decode(data):
    """Inverse of :func:`encode`: returns ``(item, dirty, tag)``."""
    try:
        (flags, tag, x, value, epoch, l1, l2,
         a0, a1, a2, b0, b1, b2) = _FORMAT.unpack(data)
    except struct.error as exc:
        raise IntegrityError("malformed record") from exc
    item = Item(
        x, value, epoch,
        (l1, l2) if flags & _HAS_LOC else None,
        bool(flags & _LIVE),
        (Pointer(a0, a1, a2), Pointer(b0, b1, b2)) if flags & _HAS_CHILDREN else None,
    )
    return item, bool(flags & _DIRTY), tag


def encode_entry(entry):
    return encode(entry.item, entry.dirty, entry.tag)


def decode_entry(data):
    item, dirty, tag = decode(data)
    return StashEntry(item, dirty, tag)
