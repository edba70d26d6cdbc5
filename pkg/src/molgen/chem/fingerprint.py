"""Circular fingerprints and Tanimoto similarity.

Radius-2 neighbourhood hashing into a fixed-width bit set.  Atom
environments start from (element, charge, degree, bond-order sum,
implicit-H count) and are iteratively combined with neighbour hashes, so
the bits depend only on the molecule graph, never on atom input order.
The hash is BLAKE2b truncated to 64 bits: stable across runs and platforms.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

from molgen.chem.mol import Molecule
from molgen.chem.vocab import Vocabulary, default_vocabulary

FINGERPRINT_BITS = 2048
RADIUS = 2


def _h64(*values: int) -> int:
    packed = struct.pack(
        f"<{len(values)}Q", *(v & 0xFFFFFFFFFFFFFFFF for v in values)
    )
    digest = hashlib.blake2b(packed, digest_size=8)
    return int.from_bytes(digest.digest(), "little")


@dataclass(frozen=True)
class Fingerprint:
    bits: frozenset[int]
    n_bits: int = FINGERPRINT_BITS


def fingerprint(mol: Molecule, vocab: Vocabulary | None = None, n_bits: int = FINGERPRINT_BITS) -> Fingerprint:
    vocab = vocab or default_vocabulary()
    n = mol.size
    neighbors = [
        [(int(mol.bonds[i, j]), j) for j in range(n) if mol.bonds[i, j]] for i in range(n)
    ]
    env = [
        _h64(
            ord(a.atom_type.element[0]) * 256 + (ord(a.atom_type.element[1]) if len(a.atom_type.element) > 1 else 0),
            a.atom_type.formal_charge,
            len(neighbors[i]),
            mol.bond_order_sum(i),
            mol.implicit_hydrogens(i, vocab),
        )
        for i, a in enumerate(mol.atoms)
    ]
    bits: set[int] = {h % n_bits for h in env}
    for _ in range(RADIUS):
        nxt = []
        for i in range(n):
            parts = sorted(_h64(order, env[j]) for order, j in neighbors[i])
            nxt.append(_h64(env[i], *parts))
        env = nxt
        bits.update(h % n_bits for h in env)
    return Fingerprint(frozenset(bits), n_bits)


def tanimoto(a: Molecule, b: Molecule, vocab: Vocabulary | None = None) -> float:
    """Intersection over union of fingerprint bits; two empty sets count as 1.0."""
    fa = fingerprint(a, vocab).bits
    fb = fingerprint(b, vocab).bits
    union = len(fa | fb)
    if union == 0:
        return 1.0
    return len(fa & fb) / union
