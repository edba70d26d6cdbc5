"""Molecule data model: ordered atoms plus a symmetric typed bond matrix."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from molgen.chem.canon import canonical_ranks, positional_indices
from molgen.chem.vocab import AtomType, BondType, Vocabulary
from molgen.errors import DisconnectedMolecule, ValenceError


@dataclass(frozen=True)
class Atom:
    atom_type: AtomType
    position_index: int  # 1-based rank among same-type atoms in canonical order


@dataclass(frozen=True)
class BagOfAtoms:
    """Per-type atom counts, indexed by vocabulary order (the molecular formula)."""

    counts: tuple[int, ...]

    @property
    def total(self) -> int:
        return sum(self.counts)

    def atoms(self, vocab: Vocabulary) -> list[Atom]:
        """Atoms in decoder node order: by type index, then positional index."""
        out = []
        for t, count in enumerate(self.counts):
            for pos in range(1, count + 1):
                out.append(Atom(vocab.type_at(t), pos))
        return out


class Molecule:
    """Immutable molecule in canonical atom order.

    Construct via :meth:`from_graph`, which validates invariants and
    canonicalizes the atom order; the raw constructor trusts its inputs.
    """

    __slots__ = ("atoms", "bonds")

    def __init__(self, atoms: tuple[Atom, ...], bonds: np.ndarray):
        self.atoms = atoms
        self.bonds = bonds
        bonds.setflags(write=False)

    @classmethod
    def from_graph(
        cls,
        types: Sequence[AtomType],
        bonds: np.ndarray | Sequence[Sequence[int]],
        vocab: Vocabulary,
    ) -> "Molecule":
        n = len(types)
        mat = np.asarray(bonds, dtype=np.uint8)
        if mat.shape != (n, n):
            raise ValueError(f"bond matrix shape {mat.shape} does not match {n} atoms")
        if not np.array_equal(mat, mat.T):
            raise ValueError("bond matrix is not symmetric")
        if np.any(np.diagonal(mat) != 0):
            raise ValueError("bond matrix has non-empty diagonal")
        if mat.max(initial=0) >= len(BondType):
            raise ValueError("bond matrix contains an unknown bond type")

        for i, t in enumerate(types):
            vsum = int(mat[i].sum())
            if vsum > vocab.max_valence(t):
                raise ValenceError(
                    f"atom {i} ({t}) has bond-order sum {vsum} > max valence "
                    f"{vocab.max_valence(t)}"
                )
        if n >= 2:
            _check_connected(mat)

        ranks = canonical_ranks(types, mat)
        positions = positional_indices(types, ranks)
        perm = sorted(range(n), key=lambda i: ranks[i])
        atoms = tuple(Atom(types[i], positions[i]) for i in perm)
        ordered = np.ascontiguousarray(mat[np.ix_(perm, perm)])
        return cls(atoms, ordered)

    @property
    def size(self) -> int:
        return len(self.atoms)

    def atom_types(self) -> list[AtomType]:
        return [a.atom_type for a in self.atoms]

    def bond(self, i: int, j: int) -> BondType:
        return BondType(int(self.bonds[i, j]))

    def bond_order_sum(self, i: int) -> int:
        return int(self.bonds[i].sum())

    def implicit_hydrogens(self, i: int, vocab: Vocabulary) -> int:
        return vocab.max_valence(self.atoms[i].atom_type) - self.bond_order_sum(i)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Molecule):
            return NotImplemented
        return self.atoms == other.atoms and np.array_equal(self.bonds, other.bonds)

    def __hash__(self) -> int:
        return hash((self.atoms, self.bonds.tobytes()))

    def __repr__(self) -> str:
        return f"Molecule({len(self.atoms)} atoms)"


def _check_connected(mat: np.ndarray) -> None:
    n = mat.shape[0]
    seen = {0}
    frontier = [0]
    while frontier:
        i = frontier.pop()
        for j in np.flatnonzero(mat[i]):
            if int(j) not in seen:
                seen.add(int(j))
                frontier.append(int(j))
    if len(seen) != n:
        raise DisconnectedMolecule(f"bond graph has {n - len(seen)} unreachable atoms")


def canonical_order(mol: Molecule) -> list[int]:
    """Canonical position of each atom; the identity for canonical molecules.

    Molecules built through :meth:`Molecule.from_graph` are already stored
    in canonical order, so this re-derivation mainly serves as a check and
    as the entry point for externally constructed molecules.
    """
    return canonical_ranks(mol.atom_types(), mol.bonds)


def bag_of_atoms(mol: Molecule, vocab: Vocabulary) -> BagOfAtoms:
    """Count atoms of each vocabulary type (the molecular formula)."""
    counts = [0] * len(vocab)
    for atom in mol.atoms:
        counts[vocab.index(atom.atom_type)] += 1
    return BagOfAtoms(tuple(counts))


def validate(mol: Molecule, vocab: Vocabulary) -> None:
    """Re-check all molecule invariants; raises on the first violation."""
    Molecule.from_graph(mol.atom_types(), mol.bonds, vocab)
