"""Exception types raised across the package."""

from __future__ import annotations


class MolgenError(Exception):
    """Base class for all package errors."""


# -- chemistry ---------------------------------------------------------------

class SmilesSyntaxError(MolgenError):
    """Malformed SMILES text; carries the offending character position."""

    def __init__(self, message: str, position: int | None = None):
        self.position = position
        if position is not None:
            message = f"{message} (at position {position})"
        super().__init__(message)


class UnsupportedFeature(MolgenError):
    """Syntactically valid SMILES using a feature outside the supported subset."""


class ValenceError(MolgenError):
    """Bond orders at an atom exceed its maximum valence."""


class KekulizationError(MolgenError):
    """No alternating single/double assignment exists for an aromatic system."""


class UnknownType(MolgenError):
    """Atom type (element, charge) not present in the vocabulary."""


class DisconnectedMolecule(MolgenError):
    """Bond graph of a multi-atom molecule is not connected."""


# -- tensor engine -----------------------------------------------------------

class ShapeMismatch(MolgenError):
    """Operands have incompatible shapes."""


class NonFiniteValue(MolgenError):
    """An operation produced NaN or Inf."""


class EmptyTape(MolgenError):
    """backward() called on a tape with no recorded operations."""


class MissingGradient(MolgenError):
    """Optimizer step requested before gradients were populated."""


# -- model -------------------------------------------------------------------

class UnknownAtomType(UnknownType):
    """Molecule contains an atom type the trained model does not know."""


class OversizeMolecule(MolgenError):
    """Molecule has more atoms than the model's training maximum."""


class PositionOverflow(MolgenError):
    """Positional index exceeds the configured cap."""


class DegenerateFormula(MolgenError):
    """Decoded bag of atoms is empty (all counts zero)."""


class FormulaTooLarge(MolgenError):
    """Bag of atoms exceeds the model's maximum molecule size."""


class AlignmentError(MolgenError):
    """Teacher-forcing targets do not match the decoder's node multiset."""


# -- beam search -------------------------------------------------------------

class NoFeasibleEdge(MolgenError):
    """No atom pair admits any bond type."""


class InvalidScores(MolgenError):
    """Edge scores contain non-finite values."""


class TooLarge(MolgenError):
    """Instance too big for exhaustive enumeration."""


# -- training ----------------------------------------------------------------

class EmptyCorpus(MolgenError):
    """Corpus file contained no usable molecules."""


class NonFiniteLoss(MolgenError):
    """Training loss became NaN/Inf; carries the offending batch id."""

    def __init__(self, message: str, batch_id: str | None = None):
        self.batch_id = batch_id
        super().__init__(message)
