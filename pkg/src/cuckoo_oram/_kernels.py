"""Compiled inner loops: batched SHA-256 locations and cuckoo placement.

Both kernels have pure-Python twins (``crypto.prf_location`` and
``cuckoo.insert``); the test suite checks them against each other.
"""

import numpy as np
from numba import njit, uint32

_K = np.array([
    0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1,
    0x923f82a4, 0xab1c5ed5, 0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3,
    0x72be5d74, 0x80deb1fe, 0x9bdc06a7, 0xc19bf174, 0xe49b69c1, 0xefbe4786,
    0x0fc19dc6, 0x240ca1cc, 0x2de92c6f, 0x4a7484aa, 0x5cb0a9dc, 0x76f988da,
    0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7, 0xc6e00bf3, 0xd5a79147,
    0x06ca6351, 0x14292967, 0x27b70a85, 0x2e1b2138, 0x4d2c6dfc, 0x53380d13,
    0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85, 0xa2bfe8a1, 0xa81a664b,
    0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070,
    0x19a4c116, 0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a,
    0x5b9cca4f, 0x682e6ff3, 0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208,
    0x90befffa, 0xa4506ceb, 0xbef9a3f7, 0xc67178f2,
], dtype=np.uint32)

_H0 = np.array([
    0x6a09e667, 0xbb67ae85, 0x3c6ef372, 0xa54ff53a,
    0x510e527f, 0x9b05688c, 0x1f83d9ab, 0x5be0cd19,
], dtype=np.uint32)

_LO32 = np.uint64(0xFFFFFFFF)


@njit(cache=True, inline="always")
def _rotr(v, n):
    return uint32((v >> uint32(n)) | (v << uint32(32 - n)))


@njit(cache=True, inline="always")
def _fold(r, word, m):
    # append one 32-bit digest word to a big-endian residue mod m (m < 2**48)
    r = ((r << np.uint64(16)) | np.uint64(word >> uint32(16))) % m
    return ((r << np.uint64(16)) | np.uint64(word & uint32(0xFFFF))) % m


@njit(cache=True)
def _digest_mod(x, seed, m, K, H0, w):
    # one-block SHA-256 of the 16-byte message x_be64 || seed_be64
    w[0] = uint32(x >> np.uint64(32))
    w[1] = uint32(x & _LO32)
    w[2] = uint32(seed >> np.uint64(32))
    w[3] = uint32(seed & _LO32)
    w[4] = uint32(0x80000000)
    for i in range(5, 15):
        w[i] = uint32(0)
    w[15] = uint32(128)
    for i in range(16, 64):
        a = w[i - 15]
        b = w[i - 2]
        s0 = _rotr(a, 7) ^ _rotr(a, 18) ^ uint32(a >> uint32(3))
        s1 = _rotr(b, 17) ^ _rotr(b, 19) ^ uint32(b >> uint32(10))
        w[i] = uint32(w[i - 16] + s0 + w[i - 7] + s1)
    a = H0[0]; b = H0[1]; c = H0[2]; d = H0[3]
    e = H0[4]; f = H0[5]; g = H0[6]; h = H0[7]
    for i in range(64):
        S1 = _rotr(e, 6) ^ _rotr(e, 11) ^ _rotr(e, 25)
        ch = uint32((e & f) ^ (~e & g))
        t1 = uint32(h + S1 + ch + K[i] + w[i])
        S0 = _rotr(a, 2) ^ _rotr(a, 13) ^ _rotr(a, 22)
        maj = uint32((a & b) ^ (a & c) ^ (b & c))
        t2 = uint32(S0 + maj)
        h = g; g = f; f = e
        e = uint32(d + t1)
        d = c; c = b; b = a
        a = uint32(t1 + t2)
    r = np.uint64(0)
    r = _fold(r, uint32(H0[0] + a), m)
    r = _fold(r, uint32(H0[1] + b), m)
    r = _fold(r, uint32(H0[2] + c), m)
    r = _fold(r, uint32(H0[3] + d), m)
    r = _fold(r, uint32(H0[4] + e), m)
    r = _fold(r, uint32(H0[5] + f), m)
    r = _fold(r, uint32(H0[6] + g), m)
    r = _fold(r, uint32(H0[7] + h), m)
    return r


@njit(cache=True)
def _locations(xs, seed, m, K, H0):
    out = np.empty(xs.shape[0], dtype=np.int64)
    w = np.empty(64, dtype=np.uint32)
    for i in range(xs.shape[0]):
        out[i] = np.int64(_digest_mod(np.uint64(xs[i]), seed, m, K, H0, w))
    return out


def batch_locations(xs, seed, m):
    """SHA256(x || seed) mod m for every x in ``xs`` (int64 array)."""
    xs = np.ascontiguousarray(xs, dtype=np.int64)
    return _locations(xs, np.uint64(seed), np.uint64(m), _K, _H0)


@njit(cache=True)
def _place(loc0, loc1, m, limit):
    slots0 = np.full(m, -1, dtype=np.int64)
    slots1 = np.full(m, -1, dtype=np.int64)
    spilled = np.empty(loc0.shape[0], dtype=np.int64)
    n_spilled = 0
    for i in range(loc0.shape[0]):
        cur = i
        side = 0
        placed = False
        for _ in range(limit + 1):
            if side == 0:
                pos = loc0[cur]
                occ = slots0[pos]
                slots0[pos] = cur
            else:
                pos = loc1[cur]
                occ = slots1[pos]
                slots1[pos] = cur
            if occ == -1:
                placed = True
                break
            cur = occ
            side ^= 1
        if not placed:
            spilled[n_spilled] = cur
            n_spilled += 1
    return slots0, slots1, spilled[:n_spilled]


def place(loc0, loc1, m, limit):
    """Sequential cuckoo insertion of items 0..k-1 with the given locations.

    Returns ``(slots0, slots1, spilled)``: per-cell item indices (-1 when
    empty) and the indices left homeless after ``limit`` evictions, in the
    order they were spilled.
    """
    loc0 = np.ascontiguousarray(loc0, dtype=np.int64)
    loc1 = np.ascontiguousarray(loc1, dtype=np.int64)
    return _place(loc0, loc1, int(m), int(limit))
