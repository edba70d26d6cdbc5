"""Canonical atom ordering.

Morgan-style iterative invariant refinement: atoms start from a local
invariant (element, charge, degree, bond-order sum) and are repeatedly
re-ranked by their neighbours' ranks until the partition stabilizes.
Remaining ties are resolved by branching: each tied atom of the first
ambiguous class is tentatively promoted, refinement continues, and the
branch whose fully-ordered graph encodes to the lexicographically smallest
signature wins.  The result is a pure function of the isomorphism class,
so two atom orderings of the same molecule always canonicalize identically.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from molgen.chem.vocab import AtomType


def _dense_ranks(keys: list) -> list[int]:
    order = {k: r for r, k in enumerate(sorted(set(keys)))}
    return [order[k] for k in keys]


def _refine(ranks: list[int], neighbors: list[list[tuple[int, int]]]) -> list[int]:
    """Split rank classes by neighbour rank multisets until stable."""
    n = len(ranks)
    while True:
        keys = [
            (ranks[i], tuple(sorted((order, ranks[j]) for order, j in neighbors[i])))
            for i in range(n)
        ]
        new_ranks = _dense_ranks(keys)
        if len(set(new_ranks)) == len(set(ranks)):
            return new_ranks
        ranks = new_ranks


def _signature(ranks: list[int], types: Sequence[AtomType], neighbors) -> tuple:
    pos = [0] * len(ranks)
    for i, r in enumerate(ranks):
        pos[r] = i
    atom_sig = tuple((types[pos[r]].element, types[pos[r]].formal_charge) for r in range(len(ranks)))
    edge_sig = []
    for i in range(len(ranks)):
        for order, j in neighbors[i]:
            if ranks[i] < ranks[j]:
                edge_sig.append((ranks[i], ranks[j], order))
    return atom_sig, tuple(sorted(edge_sig))


def canonical_ranks(types: Sequence[AtomType], bonds: np.ndarray) -> list[int]:
    """Rank atoms canonically; rank r means position r in canonical order.

    `bonds` is an N x N symmetric matrix of bond orders (0 = no bond).
    """
    n = len(types)
    if n == 1:
        return [0]
    neighbors: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    for i in range(n):
        for j in range(n):
            if i != j and bonds[i, j]:
                neighbors[i].append((int(bonds[i, j]), j))

    base = [
        (
            types[i].element,
            types[i].formal_charge,
            len(neighbors[i]),
            sum(order for order, _ in neighbors[i]),
        )
        for i in range(n)
    ]
    ranks = _refine(_dense_ranks(base), neighbors)

    best: list[tuple | list] = [None, None]  # [signature, ranks]

    def search(ranks: list[int]) -> None:
        if len(set(ranks)) == n:
            sig = _signature(ranks, types, neighbors)
            if best[0] is None or sig < best[0]:
                best[0], best[1] = sig, ranks
            return
        counts: dict[int, int] = {}
        for r in ranks:
            counts[r] = counts.get(r, 0) + 1
        target = min(r for r, c in counts.items() if c > 1)
        for a in range(n):
            if ranks[a] != target:
                continue
            keys = [(ranks[i], 0 if i == a else 1) for i in range(n)]
            search(_refine(_dense_ranks(keys), neighbors))

    search(ranks)
    return best[1]


def positional_indices(types: Sequence[AtomType], ranks: list[int]) -> list[int]:
    """1-based rank of each atom among atoms of the same type, by canonical rank."""
    n = len(types)
    order = sorted(range(n), key=lambda i: ranks[i])
    seen: dict[AtomType, int] = {}
    positions = [0] * n
    for i in order:
        seen[types[i]] = seen.get(types[i], 0) + 1
        positions[i] = seen[types[i]]
    return positions
