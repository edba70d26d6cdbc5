"""Generation and evaluation: sampling, metrics, latent-space optimization.

Reconstruction encodes with zero noise (posterior mean) and decodes with
max-probability beam search; exactness is canonical-SMILES equality.
Latent optimization follows the property head's gradient uphill, decoding
and scoring the molecule at every step; the constrained variant rejects
candidates whose fingerprint similarity to the origin falls below delta.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

import molgen.tensor as T
from molgen.beam import DecodeResult, beam_decode
from molgen.chem.fingerprint import tanimoto
from molgen.chem.mol import BagOfAtoms, Molecule, validate
from molgen.chem.smiles import write_smiles
from molgen.chem.vocab import default_vocabulary
from molgen.errors import DegenerateFormula
from molgen.model import MoleculeVAE, formula_fallback, formula_from_scores
from molgen.properties import PropertyFn
from molgen.tensor import Tensor


@dataclass
class MetricsReport:
    n_generated: int
    validity_rate: float
    novelty_rate: float
    uniqueness_rate: float
    reconstruction_rate: float | None = None

    def rows(self) -> list[tuple[str, float]]:
        out = [
            ("validity", self.validity_rate),
            ("novelty", self.novelty_rate),
            ("uniqueness", self.uniqueness_rate),
        ]
        if self.reconstruction_rate is not None:
            out.insert(0, ("reconstruction", self.reconstruction_rate))
        return out


@dataclass
class TraceStep:
    step: int
    z: np.ndarray
    smiles: str
    prop: float
    similarity: float | None
    accepted: bool


@dataclass
class OptimizationTrace:
    origin_smiles: str | None
    origin_property: float | None
    steps: list[TraceStep]
    best: TraceStep | None

    @property
    def improvement(self) -> float | None:
        if self.best is None or self.origin_property is None:
            return None
        return self.best.prop - self.origin_property

    @property
    def success(self) -> bool:
        return self.best is not None


def constrain_formula(scores: np.ndarray, counts: tuple[int, ...], max_total: int) -> tuple[int, ...]:
    """Shrink an oversize formula by repeatedly dropping the cheapest count.

    Each step decrements the type whose score margin between its current
    and next-lower count is smallest, until the bag fits the model cap.
    """
    counts = list(counts)
    while sum(counts) > max_total:
        candidates = [t for t, c in enumerate(counts) if c > 0]
        t = min(candidates, key=lambda t: (scores[t, counts[t]] - scores[t, counts[t] - 1], t))
        counts[t] -= 1
    return tuple(counts)


def decode_latent(
    model: MoleculeVAE,
    z: np.ndarray,
    n_restarts: int = 20,
    mode: str = "max_prob",
    objective: str | Callable[[Molecule], float] = "edge_prob",
    seed: int = 0,
) -> Molecule:
    """Full two-step decode of one latent vector into a valid molecule."""
    zt = Tensor(np.asarray(z, dtype=np.float64).reshape(1, -1))
    boa_scores = model.decode_atom_scores(zt).scores.data[0]
    try:
        counts = formula_from_scores(boa_scores)
    except DegenerateFormula:
        counts = formula_fallback(boa_scores)
    counts = constrain_formula(boa_scores, counts, model.hp.max_atoms)
    bag = BagOfAtoms(counts)
    if bag.total == 1:
        atom_type = bag.atoms(model.vocab)[0].atom_type
        return Molecule.from_graph([atom_type], np.zeros((1, 1), dtype=np.uint8), model.vocab)
    edge_scores = model.decode_bonds(zt, [bag]).scores.data[0]
    result: DecodeResult = beam_decode(
        edge_scores, bag, model.vocab, n_restarts=n_restarts, mode=mode,
        objective=objective, seed=seed,
    )
    return result.molecule


def reconstruct(
    model: MoleculeVAE,
    mol: Molecule,
    n_restarts: int = 20,
    seed: int = 0,
) -> tuple[Molecule, bool]:
    """Encode with zero noise, decode, and compare canonical SMILES."""
    _, latent = model.encode(mol, eps=None)
    decoded = decode_latent(model, latent.z.data[0], n_restarts=n_restarts, seed=seed)
    exact = write_smiles(decoded, model.vocab) == write_smiles(mol, model.vocab)
    return decoded, exact


def reconstruction_rate(
    model: MoleculeVAE,
    mols: Sequence[Molecule],
    n_restarts: int = 20,
    seed: int = 0,
    threads: int = 1,
) -> tuple[float, list[bool]]:
    """Fraction of molecules reconstructed exactly; order-stable, thread-safe."""
    def one(idx_mol):
        idx, mol = idx_mol
        return reconstruct(model, mol, n_restarts=n_restarts, seed=seed + idx)[1]

    items = list(enumerate(mols))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            flags = list(pool.map(one, items))
    else:
        flags = [one(it) for it in items]
    return (sum(flags) / len(flags) if flags else 0.0), flags


def sample_prior(
    model: MoleculeVAE,
    count: int,
    seed: int = 0,
    n_restarts: int = 20,
    mode: str = "max_prob",
    threads: int = 1,
) -> list[Molecule]:
    """Decode `count` latents drawn from the standard-normal prior."""
    if count <= 0:
        return []
    rng = np.random.default_rng([seed, 0x5A17])
    zs = rng.standard_normal((count, model.hp.latent))

    def one(i: int) -> Molecule:
        return decode_latent(
            model, zs[i], n_restarts=n_restarts, mode=mode,
            seed=(seed * 1000003 + i) % 2**63,
        )

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, range(count)))
    return [one(i) for i in range(count)]


def metrics(
    generated: Sequence[Molecule],
    training_smiles: Iterable[str],
    model: MoleculeVAE | None = None,
) -> MetricsReport:
    """Validity, novelty (vs the training set), and uniqueness rates."""
    vocab = model.vocab if model is not None else None
    train_set = set(training_smiles)
    if not generated:
        return MetricsReport(0, 0.0, 0.0, 0.0)
    valid = 0
    canon: list[str] = []
    for mol in generated:
        try:
            validate(mol, vocab or default_vocabulary())
            valid += 1
        except Exception:  # noqa: BLE001 - counted, not raised
            continue
        canon.append(write_smiles(mol, vocab))
    novel = sum(1 for s in canon if s not in train_set)
    n = len(generated)
    return MetricsReport(
        n_generated=n,
        validity_rate=valid / n,
        novelty_rate=novel / len(canon) if canon else 0.0,
        uniqueness_rate=len(set(canon)) / len(canon) if canon else 0.0,
    )


def _latent_gradient(model: MoleculeVAE, z: np.ndarray) -> np.ndarray:
    zt = Tensor(z.reshape(1, -1), requires_grad=True)
    with T.Tape() as tape:
        y = T.sum_reduce(model.predict_property(zt))
    T.backward(tape, y)
    assert zt.grad is not None
    return zt.grad.reshape(-1)


def optimize_latent(
    model: MoleculeVAE,
    z0: np.ndarray,
    steps: int,
    step_size: float,
    property_fn: PropertyFn,
    delta: float | None = None,
    origin: Molecule | None = None,
    n_restarts: int = 20,
    seed: int = 0,
) -> OptimizationTrace:
    """Gradient ascent on the property head, decoding at every step.

    Ascent follows the learned head; reported property values come from
    `property_fn` (the pluggable ground truth).  With `delta`/`origin`
    set, only candidates at fingerprint similarity >= delta that differ
    from the origin may become `best`.
    """
    z = np.asarray(z0, dtype=np.float64).reshape(-1).copy()
    origin_smiles = write_smiles(origin, model.vocab) if origin is not None else None
    origin_prop = float(property_fn(origin)) if origin is not None else None

    trace_steps: list[TraceStep] = []
    best: TraceStep | None = None
    for step in range(steps + 1):
        if step > 0:
            z = z + step_size * _latent_gradient(model, z)
        decoded = decode_latent(
            model, z, n_restarts=n_restarts, seed=(seed * 7919 + step) % 2**63
        )
        smiles = write_smiles(decoded, model.vocab)
        prop = float(property_fn(decoded))
        similarity = tanimoto(decoded, origin, model.vocab) if origin is not None else None
        accepted = not math.isnan(prop)
        if origin is not None:
            accepted = accepted and smiles != origin_smiles
            if delta is not None:
                accepted = accepted and similarity is not None and similarity >= delta
        entry = TraceStep(step, z.copy(), smiles, prop, similarity, accepted)
        trace_steps.append(entry)
        if accepted and (best is None or entry.prop > best.prop):
            best = entry
    return OptimizationTrace(origin_smiles, origin_prop, trace_steps, best)


def optimize_constrained(
    model: MoleculeVAE,
    mol: Molecule,
    delta: float,
    steps: int,
    step_size: float,
    property_fn: PropertyFn,
    n_restarts: int = 20,
    seed: int = 0,
) -> OptimizationTrace:
    """Similarity-constrained property optimization started from a molecule."""
    _, latent = model.encode(mol, eps=None)
    return optimize_latent(
        model,
        latent.mu.data[0],
        steps=steps,
        step_size=step_size,
        property_fn=property_fn,
        delta=delta,
        origin=mol,
        n_restarts=n_restarts,
        seed=seed,
    )


@dataclass
class SweepRow:
    delta: float
    n: int
    success_rate: float
    improvement_mean: float
    improvement_std: float
    similarity_mean: float
    similarity_std: float


def constrained_sweep(
    model: MoleculeVAE,
    mols: Sequence[Molecule],
    deltas: Sequence[float],
    steps: int,
    step_size: float,
    property_fn: PropertyFn,
    n_restarts: int = 20,
    seed: int = 0,
    threads: int = 1,
) -> list[SweepRow]:
    """Improvement/similarity/success per similarity threshold."""
    rows = []
    for delta in deltas:
        def one(idx_mol):
            idx, mol = idx_mol
            return optimize_constrained(
                model, mol, delta, steps, step_size, property_fn,
                n_restarts=n_restarts, seed=seed + idx,
            )

        items = list(enumerate(mols))
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                traces = list(pool.map(one, items))
        else:
            traces = [one(it) for it in items]
        improvements = [t.improvement for t in traces if t.success]
        similarities = [t.best.similarity for t in traces if t.success]
        rows.append(
            SweepRow(
                delta=delta,
                n=len(mols),
                success_rate=sum(t.success for t in traces) / len(traces),
                improvement_mean=float(np.mean(improvements)) if improvements else math.nan,
                improvement_std=float(np.std(improvements)) if improvements else math.nan,
                similarity_mean=float(np.mean(similarities)) if similarities else math.nan,
                similarity_std=float(np.std(similarities)) if similarities else math.nan,
            )
        )
    return rows
