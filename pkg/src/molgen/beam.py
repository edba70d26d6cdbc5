"""Valency-constrained greedy edge selection with random restarts.

Each restart seeds one random feasible edge, then repeatedly resolves the
atom pair whose best feasible choice is the most probable, committing
either that bond (when a bond type wins and the pair is connected to the
grown subgraph with valency to spare at both ends) or no bond (when the
no-bond type wins or nothing else is feasible).  Bernoulli mode samples
the pair and the type instead of taking argmaxes.  Selection stops when
every pair is resolved, so every produced molecule is valid by
construction.  The best restart under the requested objective wins.

Log probabilities cover the whole pair assignment: bonded pairs contribute
their chosen type, every other pair contributes the no-bond type, which
makes results directly comparable with the exhaustive oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from molgen.chem.mol import BagOfAtoms, Molecule
from molgen.chem.vocab import BondType, N_BOND_TYPES, Vocabulary
from molgen.errors import InvalidScores, NoFeasibleEdge, TooLarge

_EXHAUSTIVE_MAX_ATOMS = 5


@dataclass
class BeamState:
    """Search state: committed edges plus per-atom valence budget."""

    remaining: np.ndarray                      # remaining valence per atom
    selected: dict[tuple[int, int], int] = field(default_factory=dict)
    touched: set[int] = field(default_factory=set)
    log_prob: float = 0.0                      # running sum over selected edges


@dataclass
class DecodeResult:
    molecule: Molecule
    log_prob: float          # full pair-assignment log probability
    restarts_used: int
    formula_deviation: bool  # atoms dropped because nothing could reach them


def valency_feasible(state: BeamState, i: int, j: int, bond: BondType | int) -> bool:
    """Can (i, j, bond) extend the state without breaking any constraint?"""
    order = int(bond)
    if i == j or order < 1:
        return False
    key = (min(i, j), max(i, j))
    if key in state.selected:
        return False
    if order > state.remaining[i] or order > state.remaining[j]:
        return False
    if state.selected and i not in state.touched and j not in state.touched:
        return False
    return True


def _softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _assignment_log_prob(
    log_probs: np.ndarray, selected: dict[tuple[int, int], int], n: int
) -> float:
    total = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            total += log_probs[i, j, selected.get((i, j), 0)]
    return float(total)


def _result_from_selection(
    selected: dict[tuple[int, int], int],
    types,
    log_probs: np.ndarray,
    vocab: Vocabulary,
    restarts_used: int,
) -> DecodeResult:
    n = len(types)
    kept = sorted({i for pair in selected for i in pair})
    remap = {old: new for new, old in enumerate(kept)}
    mat = np.zeros((len(kept), len(kept)), dtype=np.uint8)
    for (i, j), order in selected.items():
        mat[remap[i], remap[j]] = mat[remap[j], remap[i]] = order
    molecule = Molecule.from_graph([types[i] for i in kept], mat, vocab)
    return DecodeResult(
        molecule=molecule,
        log_prob=_assignment_log_prob(log_probs, selected, n),
        restarts_used=restarts_used,
        formula_deviation=len(kept) < n,
    )


def _run_restart(
    probs: np.ndarray,
    log_probs: np.ndarray,
    max_valence: np.ndarray,
    mode: str,
    rng: np.random.Generator,
) -> dict[tuple[int, int], int]:
    n = probs.shape[0]
    state = BeamState(remaining=max_valence.astype(np.int64).copy())
    unresolved = [(i, j) for i in range(n) for j in range(i + 1, n)]

    first = [
        (i, j) for i, j in unresolved
        if min(state.remaining[i], state.remaining[j]) >= 1
    ]
    i, j = first[int(rng.integers(len(first)))]
    seed_order = max(
        (o for o in (1, 2, 3) if o <= min(state.remaining[i], state.remaining[j])),
        key=lambda o: (probs[i, j, o], -o),
    )
    _commit(state, i, j, seed_order, log_probs)
    unresolved.remove((i, j))

    while unresolved:
        # Best feasible choice per pair; order 0 (no bond) is always feasible.
        options = []
        for i, j in unresolved:
            feasible = [0] + [o for o in (1, 2, 3) if valency_feasible(state, i, j, o)]
            best = max(feasible, key=lambda o: (probs[i, j, o], -o))
            options.append((i, j, best, feasible))
        if mode == "max_prob":
            pick = max(
                range(len(options)),
                key=lambda c: (probs[options[c][0], options[c][1], options[c][2]], -c),
            )
            i, j, order, _ = options[pick]
        else:  # bernoulli
            weights = np.array([probs[i, j, best] for i, j, best, _ in options])
            pick = int(rng.choice(len(options), p=weights / weights.sum()))
            i, j, _, feasible = options[pick]
            type_w = np.array([probs[i, j, o] for o in feasible])
            order = feasible[int(rng.choice(len(feasible), p=type_w / type_w.sum()))]
        if order > 0:
            _commit(state, i, j, order, log_probs)
        unresolved.remove((i, j))
    return state.selected


def _commit(state: BeamState, i: int, j: int, order: int, log_probs: np.ndarray) -> None:
    state.selected[(min(i, j), max(i, j))] = order
    state.remaining[i] -= order
    state.remaining[j] -= order
    state.touched.update((i, j))
    state.log_prob += float(log_probs[i, j, order])


def beam_decode(
    scores: np.ndarray,
    boa: BagOfAtoms,
    vocab: Vocabulary,
    n_restarts: int = 20,
    mode: str = "max_prob",
    objective: str | Callable[[Molecule], float] = "edge_prob",
    seed: int = 0,
) -> DecodeResult:
    """Decode edge scores into the best valid molecule over `n_restarts` tries.

    `scores` is (N, N, n_bond_types) over the bag's atoms in decoder node
    order.  Restart r draws from its own counter-based stream keyed by
    (seed, r), so results do not depend on scheduling and are reproducible.
    """
    if mode not in ("max_prob", "bernoulli"):
        raise ValueError(f"unknown mode {mode!r}")
    scores = np.asarray(scores, dtype=np.float64)
    if not np.isfinite(scores).all():
        raise InvalidScores("edge scores contain non-finite values")
    types = [a.atom_type for a in boa.atoms(vocab)]
    n = len(types)
    if n < 2:
        raise ValueError("bag of atoms must contain at least 2 atoms")
    if scores.shape != (n, n, N_BOND_TYPES):
        raise InvalidScores(f"scores shape {scores.shape} does not match {n} atoms")

    max_valence = np.array([vocab.max_valence(t) for t in types])
    if not any(
        min(max_valence[i], max_valence[j]) >= 1 for i in range(n) for j in range(i + 1, n)
    ):
        raise NoFeasibleEdge("no atom pair admits any bond type")

    probs = _softmax(scores)
    log_probs = np.log(probs)

    best: tuple | None = None
    best_result: DecodeResult | None = None
    for restart in range(max(1, int(n_restarts))):
        rng = np.random.Generator(np.random.Philox(key=[seed, restart]))
        selected = _run_restart(probs, log_probs, max_valence, mode, rng)
        result = _result_from_selection(selected, types, log_probs, vocab, restart + 1)
        if objective == "edge_prob":
            value = result.log_prob
        else:
            value = float(objective(result.molecule))
        # Higher objective wins; deviation-free breaks ties, then earlier restart.
        rank = (value, not result.formula_deviation, -restart)
        if best is None or rank > best:
            best = rank
            best_result = result
    assert best_result is not None
    best_result.restarts_used = max(1, int(n_restarts))
    return best_result


def exhaustive_decode(
    scores: np.ndarray, boa: BagOfAtoms, vocab: Vocabulary
) -> DecodeResult:
    """Enumerate every valid pair assignment and return the log-prob maximizer.

    Test oracle for :func:`beam_decode`; refuses bags of more than
    5 atoms to keep the 4^(N(N-1)/2) enumeration tractable.
    """
    types = [a.atom_type for a in boa.atoms(vocab)]
    n = len(types)
    if n > _EXHAUSTIVE_MAX_ATOMS:
        raise TooLarge(f"{n} atoms exceeds the exhaustive limit {_EXHAUSTIVE_MAX_ATOMS}")
    if n < 2:
        raise ValueError("bag of atoms must contain at least 2 atoms")
    scores = np.asarray(scores, dtype=np.float64)
    if not np.isfinite(scores).all():
        raise InvalidScores("edge scores contain non-finite values")

    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    p = len(pairs)
    log_probs = np.log(_softmax(scores))
    max_valence = np.array([vocab.max_valence(t) for t in types])

    codes = (np.arange(4**p)[:, None] // (4 ** np.arange(p))[None, :]) % 4
    incidence = np.zeros((p, n), dtype=np.int64)
    for idx, (i, j) in enumerate(pairs):
        incidence[idx, i] = incidence[idx, j] = 1
    atom_orders = codes @ incidence
    pair_lp = np.stack([log_probs[i, j] for i, j in pairs])          # (p, 4)
    totals = pair_lp[np.arange(p)[None, :], codes].sum(axis=1)
    feasible = (atom_orders <= max_valence[None, :]).all(axis=1) & (codes.sum(axis=1) > 0)

    best_total = -np.inf
    best_selected: dict[tuple[int, int], int] | None = None
    for row in np.flatnonzero(feasible)[np.argsort(-totals[feasible], kind="stable")]:
        assignment = codes[row]
        if not _single_component(assignment, pairs, n):
            continue
        best_total = totals[row]
        best_selected = {
            pairs[idx]: int(assignment[idx]) for idx in range(p) if assignment[idx]
        }
        break
    if best_selected is None:
        raise NoFeasibleEdge("no valid connected assignment exists")
    result = _result_from_selection(best_selected, types, log_probs, vocab, 1)
    assert abs(result.log_prob - best_total) < 1e-9
    return result


def _single_component(assignment: np.ndarray, pairs, n: int) -> bool:
    parent = list(range(n))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    involved = set()
    for idx, (i, j) in enumerate(pairs):
        if assignment[idx]:
            involved.update((i, j))
            parent[find(i)] = find(j)
    return len({find(i) for i in involved}) == 1
