"""Regenerate golden_locations.csv from an independent SHA-256 implementation.

Uses the OpenSSL-backed ``cryptography`` hash, not hashlib and not the
package's compiled kernel, so the vectors check both of those.
"""

import csv
import pathlib

from cryptography.hazmat.primitives import hashes


def sha256(data):
    h = hashes.Hash(hashes.SHA256())
    h.update(data)
    return h.finalize()


def chain_value(master, index):
    head = master.to_bytes(8, "big")
    for _ in range(index):
        head = sha256(head)
    return int.from_bytes(head[:8], "big")


def location(seed, x, m):
    return int.from_bytes(sha256(x.to_bytes(8, "big") + seed.to_bytes(8, "big")), "big") % m


CASES = [
    (0, 1, 42, 1000),
    (0, 1, 0, 1),
    (0, 1, 0, 1000),
    (0, 2, 42, 1000),
    (0, 3, 7, 24),
    (0, 5, 123456, 1536),
    (0x0123456789ABCDEF, 1, 42, 1000),
    (0x0123456789ABCDEF, 10, 999, 65537),
    (0xFFFFFFFFFFFFFFFF, 4, 2**40, 3),
    (7, 100, 2**63 - 1, 2**47 - 1),
]

if __name__ == "__main__":
    out = pathlib.Path(__file__).with_name("golden_locations.csv")
    with out.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["master_seed", "chain_index", "seed", "x", "m", "offset"])
        for master, idx, x, m in CASES:
            seed = chain_value(master, idx)
            w.writerow([master, idx, seed, x, m, location(seed, x, m)])
