"""Molecule data model, SMILES parsing/writing, canonical ordering, fingerprints."""

from molgen.chem.canon import canonical_ranks, positional_indices
from molgen.chem.fingerprint import Fingerprint, fingerprint, tanimoto
from molgen.chem.mol import (
    Atom,
    BagOfAtoms,
    Molecule,
    bag_of_atoms,
    canonical_order,
    validate,
)
from molgen.chem.smiles import (
    canonical_smiles,
    iter_corpus_lines,
    load_corpus,
    parse_smiles,
    write_smiles,
)
from molgen.chem.vocab import (
    AtomType,
    BondType,
    N_BOND_TYPES,
    Vocabulary,
    default_vocabulary,
)

__all__ = [
    "Atom",
    "AtomType",
    "BagOfAtoms",
    "BondType",
    "Fingerprint",
    "Molecule",
    "N_BOND_TYPES",
    "Vocabulary",
    "bag_of_atoms",
    "canonical_order",
    "canonical_ranks",
    "canonical_smiles",
    "default_vocabulary",
    "fingerprint",
    "iter_corpus_lines",
    "load_corpus",
    "parse_smiles",
    "positional_indices",
    "tanimoto",
    "validate",
    "write_smiles",
]
