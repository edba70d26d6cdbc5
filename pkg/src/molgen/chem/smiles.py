"""SMILES subset parser and canonical writer.

Supported grammar: organic-subset atoms, bracket atoms with hydrogen count
and charge, branches, ring-closure digits (single and %nn), bond symbols
``- = # :`` and aromatic lowercase atoms (kekulized on parse).  Stereo
markers, isotopes, wildcards, and dot-separated fragments are rejected as
unsupported.  The writer emits kekulized canonical SMILES; parsing its
output reproduces the molecule and the writer is a fixed point on it.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from molgen.chem.mol import Molecule
from molgen.chem.vocab import AtomType, Vocabulary, default_vocabulary
from molgen.errors import (
    KekulizationError,
    SmilesSyntaxError,
    UnsupportedFeature,
    ValenceError,
)

# Internal bond code for an unresolved aromatic bond; real orders are 1..3.
_AROMATIC = 9

_TWO_CHAR = ("Cl", "Br")
_ORGANIC_UPPER = ("B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I")
_ORGANIC_LOWER = ("b", "c", "n", "o", "p", "s")
_BOND_CODES = {"-": 1, "=": 2, "#": 3, ":": _AROMATIC}


@dataclass
class _ParsedAtom:
    element: str
    charge: int
    aromatic: bool
    hcount: int | None  # None for organic-subset atoms (implicit)
    position: int       # character offset, for error messages


def parse_smiles(text: str, vocab: Vocabulary | None = None) -> Molecule:
    """Parse a single SMILES string into a canonical :class:`Molecule`."""
    vocab = vocab or default_vocabulary()
    atoms, bonds = _parse_graph(text)
    if not atoms:
        raise SmilesSyntaxError("empty SMILES", 0)

    types = []
    for a in atoms:
        t = AtomType(a.element, a.charge)
        if t not in vocab:
            raise UnsupportedFeature(f"atom type {t} not in vocabulary (at position {a.position})")
        types.append(t)

    _kekulize(atoms, bonds, types, vocab)

    n = len(atoms)
    mat = np.zeros((n, n), dtype=np.uint8)
    for (i, j), code in bonds.items():
        mat[i, j] = mat[j, i] = code

    for i, a in enumerate(atoms):
        total = int(mat[i].sum())
        maxv = vocab.max_valence(types[i])
        if total > maxv:
            raise ValenceError(
                f"atom at position {a.position} ({types[i]}) has bond-order sum "
                f"{total} > max valence {maxv}"
            )
        if a.hcount is not None or a.charge != 0:
            # Bracket atoms pin their hydrogen count; it must agree with the
            # implicit-fill model or the molecule is not representable here.
            expected = maxv - total
            if (a.hcount or 0) != expected:
                raise UnsupportedFeature(
                    f"explicit hydrogen count {a.hcount or 0} on {types[i]} at position "
                    f"{a.position} does not fill valence to {maxv} (expected {expected})"
                )

    return Molecule.from_graph(types, mat, vocab)


def _parse_atom_token(text: str, start: int) -> tuple[_ParsedAtom, int]:
    """Parse the atom starting at `start`; returns the atom and the next offset."""
    if text[start] == "[":
        end = text.find("]", start)
        if end < 0:
            raise SmilesSyntaxError("unterminated bracket atom", start)
        body = text[start + 1 : end]
        return _parse_bracket_body(body, start), end + 1

    for sym in _TWO_CHAR:
        if text.startswith(sym, start):
            return _ParsedAtom(sym, 0, False, None, start), start + len(sym)
    ch = text[start]
    if ch in _ORGANIC_UPPER:
        return _ParsedAtom(ch, 0, False, None, start), start + 1
    if ch in _ORGANIC_LOWER:
        return _ParsedAtom(ch.upper(), 0, True, None, start), start + 1
    raise SmilesSyntaxError(f"unexpected character {ch!r}", start)


def _parse_bracket_body(body: str, position: int) -> _ParsedAtom:
    i = 0
    if i < len(body) and body[i].isdigit():
        raise UnsupportedFeature(f"isotope specification not supported (at position {position})")

    element = None
    aromatic = False
    for sym in _TWO_CHAR:
        if body.startswith(sym, i):
            element = sym
            i += len(sym)
            break
    if element is None and i < len(body):
        ch = body[i]
        if ch in _ORGANIC_UPPER:
            element, i = ch, i + 1
        elif ch in _ORGANIC_LOWER:
            element, aromatic, i = ch.upper(), True, i + 1
        elif ch == "*":
            raise UnsupportedFeature(f"wildcard atom not supported (at position {position})")
        elif ch == "H":
            raise UnsupportedFeature(f"explicit hydrogen atom not supported (at position {position})")
    if element is None:
        raise SmilesSyntaxError("bracket atom without a supported element", position)

    if i < len(body) and body[i] == "@":
        raise UnsupportedFeature(f"stereochemistry marker not supported (at position {position})")

    hcount = 0
    if i < len(body) and body[i] == "H":
        i += 1
        hcount = 1
        digits = ""
        while i < len(body) and body[i].isdigit():
            digits += body[i]
            i += 1
        if digits:
            hcount = int(digits)

    charge = 0
    if i < len(body) and body[i] in "+-":
        sign = 1 if body[i] == "+" else -1
        symbol = body[i]
        i += 1
        digits = ""
        while i < len(body) and body[i].isdigit():
            digits += body[i]
            i += 1
        if digits:
            charge = sign * int(digits)
        else:
            charge = sign
            while i < len(body) and body[i] == symbol:
                charge += sign
                i += 1

    if i < len(body):
        if body[i] == ":":
            raise UnsupportedFeature(f"atom class not supported (at position {position})")
        raise SmilesSyntaxError(f"unexpected {body[i]!r} in bracket atom", position)

    return _ParsedAtom(element, charge, aromatic, hcount, position)


def _parse_graph(text: str) -> tuple[list[_ParsedAtom], dict[tuple[int, int], int]]:
    atoms: list[_ParsedAtom] = []
    bonds: dict[tuple[int, int], int] = {}
    anchor: int | None = None
    pending: int | None = None  # explicit bond code awaiting the next atom
    branch_stack: list[int] = []
    open_rings: dict[int, tuple[int, int | None, int]] = {}  # digit -> (atom, bond, pos)

    def add_bond(i: int, j: int, code: int | None, pos: int) -> None:
        key = (min(i, j), max(i, j))
        if i == j:
            raise SmilesSyntaxError("ring bond connects an atom to itself", pos)
        if key in bonds:
            raise SmilesSyntaxError("duplicate bond between the same atoms", pos)
        if code is None:
            code = _AROMATIC if atoms[i].aromatic and atoms[j].aromatic else 1
        bonds[key] = code

    i = 0
    while i < len(text):
        ch = text[i]
        if ch in _BOND_CODES:
            if pending is not None:
                raise SmilesSyntaxError("two consecutive bond symbols", i)
            pending = _BOND_CODES[ch]
            i += 1
        elif ch in "/\\":
            raise UnsupportedFeature(f"stereo bond marker not supported (at position {i})")
        elif ch == ".":
            raise UnsupportedFeature(f"disconnected fragments ('.') not supported (at position {i})")
        elif ch == "*":
            raise UnsupportedFeature(f"wildcard atom not supported (at position {i})")
        elif ch == "(":
            if anchor is None:
                raise SmilesSyntaxError("branch before any atom", i)
            if pending is not None:
                raise SmilesSyntaxError("bond symbol before branch open", i)
            branch_stack.append(anchor)
            i += 1
        elif ch == ")":
            if not branch_stack:
                raise SmilesSyntaxError("unmatched ')'", i)
            if pending is not None:
                raise SmilesSyntaxError("dangling bond symbol before ')'", i)
            anchor = branch_stack.pop()
            i += 1
        elif ch.isdigit() or ch == "%":
            if ch == "%":
                if i + 2 >= len(text) + 1 or not text[i + 1 : i + 3].isdigit():
                    raise SmilesSyntaxError("'%' must be followed by two digits", i)
                num = int(text[i + 1 : i + 3])
                width = 3
            else:
                num = int(ch)
                width = 1
            if anchor is None:
                raise SmilesSyntaxError("ring closure before any atom", i)
            if num in open_rings:
                other, other_bond, other_pos = open_rings.pop(num)
                if pending is not None and other_bond is not None and pending != other_bond:
                    raise SmilesSyntaxError(
                        f"conflicting bond orders for ring closure {num}", i
                    )
                code = pending if pending is not None else other_bond
                add_bond(other, anchor, code, i)
            else:
                open_rings[num] = (anchor, pending, i)
            pending = None
            i += width
        elif ch.isspace():
            raise SmilesSyntaxError("whitespace inside SMILES", i)
        else:
            atom, nxt = _parse_atom_token(text, i)
            atoms.append(atom)
            idx = len(atoms) - 1
            if anchor is not None:
                add_bond(anchor, idx, pending, i)
            elif pending is not None:
                raise SmilesSyntaxError("bond symbol before the first atom", i)
            pending = None
            anchor = idx
            i = nxt

    if pending is not None:
        raise SmilesSyntaxError("dangling bond symbol at end of input", len(text) - 1)
    if branch_stack:
        raise SmilesSyntaxError("unclosed '('", len(text) - 1)
    if open_rings:
        digit, (_, _, pos) = next(iter(open_rings.items()))
        raise SmilesSyntaxError(f"unclosed ring bond {digit}", pos)
    return atoms, bonds


# -- kekulization -------------------------------------------------------------

def _pi_need(atom: _ParsedAtom, atype: AtomType, deg_ar: int, fixed: int, maxv: int) -> int:
    """Number of double bonds (0 or 1) this aromatic atom must host."""
    el, q = atype.element, atype.formal_charge
    if el == "C":
        return 1 if q == 0 and maxv - deg_ar - fixed >= 1 else 0
    if el in ("N", "P"):
        if q == 0:
            return 1 if deg_ar + fixed == 2 else 0
        if q == 1:
            return 1 if deg_ar + fixed <= 3 else 0
        return 0
    if el in ("O", "S"):
        return 1 if q == 1 and deg_ar + fixed == 2 else 0
    if el == "B":
        return 0
    raise KekulizationError(f"element {el} cannot be aromatic (at position {atom.position})")


def _kekulize(
    atoms: list[_ParsedAtom],
    bonds: dict[tuple[int, int], int],
    types: list[AtomType],
    vocab: Vocabulary,
) -> None:
    """Rewrite aromatic bonds as alternating single/double, in place."""
    arom_edges = [pair for pair, code in bonds.items() if code == _AROMATIC]
    arom_atoms = {i for i, a in enumerate(atoms) if a.aromatic}
    if not arom_edges and not arom_atoms:
        return

    deg_ar = {i: 0 for i in range(len(atoms))}
    fixed = {i: atoms[i].hcount or 0 for i in range(len(atoms))}
    for (i, j), code in bonds.items():
        if code == _AROMATIC:
            deg_ar[i] += 1
            deg_ar[j] += 1
        else:
            fixed[i] += code
            fixed[j] += code

    for i in arom_atoms:
        if deg_ar[i] < 2:
            raise KekulizationError(
                f"aromatic atom at position {atoms[i].position} is not in an aromatic ring"
            )
    for i, j in arom_edges:
        if not (atoms[i].aromatic and atoms[j].aromatic):
            raise KekulizationError(
                "aromatic bond between non-aromatic atoms "
                f"(at position {atoms[i].position})"
            )

    needy = sorted(
        i
        for i in arom_atoms
        if _pi_need(atoms[i], types[i], deg_ar[i], fixed[i], vocab.max_valence(types[i]))
    )
    adj: dict[int, list[int]] = {i: [] for i in needy}
    needy_set = set(needy)
    for i, j in arom_edges:
        if i in needy_set and j in needy_set:
            adj[i].append(j)
            adj[j].append(i)

    matched = _perfect_matching(needy, adj)
    if matched is None:
        raise KekulizationError("no alternating single/double assignment exists")

    for pair in arom_edges:
        i, j = pair
        bonds[pair] = 2 if matched.get(i) == j else 1


def _perfect_matching(nodes: list[int], adj: dict[int, list[int]]) -> dict[int, int] | None:
    """Backtracking perfect matching; aromatic systems are small enough."""
    matched: dict[int, int] = {}

    def rec(remaining: list[int]) -> bool:
        if not remaining:
            return True
        u = remaining[0]
        rest = remaining[1:]
        for v in adj[u]:
            if v in matched or v == u:
                continue
            matched[u] = v
            matched[v] = u
            if rec([w for w in rest if w != v]):
                return True
            del matched[u]
            del matched[v]
        return False

    return matched if rec(nodes) else None


# -- writer -------------------------------------------------------------------

_BOND_SYMBOL = {1: "", 2: "=", 3: "#"}


def write_smiles(mol: Molecule, vocab: Vocabulary | None = None) -> str:
    """Canonical kekulized SMILES; a fixed point under parse/write."""
    return write_smiles_with_order(mol, vocab)[0]


def write_smiles_with_order(
    mol: Molecule, vocab: Vocabulary | None = None
) -> tuple[str, list[int]]:
    """Canonical SMILES plus the atom indices in string-appearance order."""
    vocab = vocab or default_vocabulary()
    n = mol.size
    bonds = mol.bonds

    # Depth-first spanning tree; the atom order is already canonical, so the
    # root choice (terminal atoms first, then lowest rank) and ascending
    # neighbour order are both pure functions of the isomorphism class.
    neighbors = [[int(j) for j in np.flatnonzero(bonds[i])] for i in range(n)]
    root = min(range(n), key=lambda i: (len(neighbors[i]), i))
    children: dict[int, list[int]] = {i: [] for i in range(n)}
    ring_pairs: set[tuple[int, int]] = set()
    visited = [False] * n

    def dfs(i: int, parent: int) -> None:
        visited[i] = True
        for j in neighbors[i]:
            if not visited[j]:
                children[i].append(j)
                dfs(j, i)
            elif j != parent:
                ring_pairs.add((min(i, j), max(i, j)))

    dfs(root, -1)

    ring_at: dict[int, list[tuple[int, int]]] = {}
    for a, b in sorted(ring_pairs):
        ring_at.setdefault(a, []).append((b, 0))
        ring_at.setdefault(b, []).append((a, 0))

    digits: dict[tuple[int, int], int] = {}
    free = list(range(99, 0, -1))

    def ring_token(i: int, j: int) -> str:
        key = (min(i, j), max(i, j))
        if key in digits:
            num = digits.pop(key)
            free.append(num)
            free.sort(reverse=True)
        else:
            num = free.pop()
            digits[key] = num
        sym = _BOND_SYMBOL[int(bonds[i, j])]
        return f"{sym}%{num}" if num > 9 else f"{sym}{num}"

    def atom_token(i: int) -> str:
        t = mol.atoms[i].atom_type
        if t.formal_charge == 0:
            return t.element
        h = mol.implicit_hydrogens(i, vocab)
        hs = "" if h == 0 else ("H" if h == 1 else f"H{h}")
        q = t.formal_charge
        qs = ("+" if q > 0 else "-") + (str(abs(q)) if abs(q) > 1 else "")
        return f"[{t.element}{hs}{qs}]"

    out: list[str] = []
    appearance: list[int] = []

    def emit(i: int, parent: int) -> None:
        if parent >= 0:
            out.append(_BOND_SYMBOL[int(bonds[parent, i])])
        out.append(atom_token(i))
        appearance.append(i)
        for j, _ in sorted(ring_at.get(i, []), key=lambda x: x[0]):
            out.append(ring_token(i, j))
        kids = children[i]
        for j in kids[:-1]:
            out.append("(")
            emit(j, i)
            out.append(")")
        if kids:
            emit(kids[-1], i)

    emit(root, -1)
    return "".join(out), appearance


def canonical_smiles(text: str, vocab: Vocabulary | None = None) -> str:
    """Parse then write: the canonical form of any accepted SMILES."""
    return write_smiles(parse_smiles(text, vocab), vocab)


# -- corpus files -------------------------------------------------------------

def load_corpus(
    path: str | Path,
    vocab: Vocabulary | None = None,
    on_skip: Callable[[int, str, str], None] | None = None,
) -> list[tuple[str, Molecule]]:
    """Read a one-SMILES-per-line file; '#' comments and blanks are ignored.

    Unparseable lines are skipped (reported through `on_skip`), mirroring
    corpus ingestion behaviour for out-of-subset molecules.
    """
    vocab = vocab or default_vocabulary()
    out: list[tuple[str, Molecule]] = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            out.append((line, parse_smiles(line, vocab)))
        except Exception as exc:  # noqa: BLE001 - skip-and-log is the contract
            if on_skip is not None:
                on_skip(lineno, line, str(exc))
    return out


def iter_corpus_lines(path: str | Path) -> Iterable[tuple[int, str]]:
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if line and not line.startswith("#"):
            yield lineno, line
