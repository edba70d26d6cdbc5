"""Atom/bond type vocabulary and the valence table.

The vocabulary fixes the set of (element, formal charge) pairs a model can
represent, their indexing (used as class ids everywhere downstream), and the
maximum bond-order sum each pair supports.  Unused valence is filled by
implicit hydrogens.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

from molgen.errors import UnknownType

ELEMENTS = ("B", "C", "N", "O", "F", "P", "S", "Cl", "Br", "I")

# Symbols that may carry an aromatic (lowercase) form in SMILES input.
AROMATIC_ELEMENTS = ("B", "C", "N", "O", "P", "S")


class BondType(enum.IntEnum):
    """Bond categories; the integer value is the bond order."""

    NONE = 0
    SINGLE = 1
    DOUBLE = 2
    TRIPLE = 3

    @property
    def order(self) -> int:
        return int(self)


N_BOND_TYPES = len(BondType)


@dataclass(frozen=True, order=True)
class AtomType:
    element: str
    formal_charge: int = 0

    def __str__(self) -> str:
        if self.formal_charge == 0:
            return self.element
        sign = "+" if self.formal_charge > 0 else "-"
        mag = abs(self.formal_charge)
        return f"{self.element}{sign}{mag if mag > 1 else ''}"


# Default table: the ten ZINC heavy atoms plus their common charged forms.
# Order is load-bearing; it defines the class ids of a trained model.
_DEFAULT_TABLE: tuple[tuple[str, int, int], ...] = (
    ("B", 0, 3),
    ("C", 0, 4),
    ("C", -1, 3),
    ("N", 0, 3),
    ("N", 1, 4),
    ("N", -1, 2),
    ("O", 0, 2),
    ("O", 1, 3),
    ("O", -1, 1),
    ("F", 0, 1),
    ("P", 0, 5),
    ("P", 1, 4),
    ("S", 0, 6),
    ("S", 1, 3),
    ("S", -1, 1),
    ("Cl", 0, 1),
    ("Br", 0, 1),
    ("I", 0, 1),
)


class Vocabulary:
    """Ordered atom-type table; index order is frozen once a model is trained."""

    def __init__(self, entries: Iterable[tuple[AtomType, int]]):
        self._types: list[AtomType] = []
        self._valence: dict[AtomType, int] = {}
        for atom_type, valence in entries:
            if atom_type in self._valence:
                raise ValueError(f"duplicate vocabulary entry {atom_type}")
            if atom_type.element not in ELEMENTS:
                raise ValueError(f"element {atom_type.element!r} outside supported set")
            if valence < 1:
                raise ValueError(f"max valence for {atom_type} must be >= 1")
            self._types.append(atom_type)
            self._valence[atom_type] = valence
        if not self._types:
            raise ValueError("empty vocabulary")
        self._index = {t: i for i, t in enumerate(self._types)}

    def __len__(self) -> int:
        return len(self._types)

    def __iter__(self) -> Iterator[AtomType]:
        return iter(self._types)

    def __contains__(self, atom_type: AtomType) -> bool:
        return atom_type in self._index

    @property
    def types(self) -> tuple[AtomType, ...]:
        return tuple(self._types)

    def index(self, atom_type: AtomType) -> int:
        try:
            return self._index[atom_type]
        except KeyError:
            raise UnknownType(f"atom type {atom_type} not in vocabulary") from None

    def type_at(self, index: int) -> AtomType:
        return self._types[index]

    def max_valence(self, atom_type: AtomType) -> int:
        try:
            return self._valence[atom_type]
        except KeyError:
            raise UnknownType(f"atom type {atom_type} not in vocabulary") from None

    def to_file(self, path: str | Path) -> None:
        lines = [f"{t.element} {t.formal_charge} {self._valence[t]}" for t in self._types]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def from_file(cls, path: str | Path) -> "Vocabulary":
        """Read `element charge max_valence` triples, one per line."""
        entries = []
        for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 'element charge max_valence'")
            entries.append((AtomType(parts[0], int(parts[1])), int(parts[2])))
        return cls(entries)

    def as_entries(self) -> list[tuple[str, int, int]]:
        return [(t.element, t.formal_charge, self._valence[t]) for t in self._types]


def default_vocabulary() -> Vocabulary:
    return Vocabulary((AtomType(el, ch), v) for el, ch, v in _DEFAULT_TABLE)
