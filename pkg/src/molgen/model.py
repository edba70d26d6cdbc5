"""The molecule VAE: graph-convolutional encoder, two-step decoder, heads.

Encoder: atom/bond embeddings on the dense molecular graph, L residual
gated graph-conv layers, then two gated-sum readouts producing mu and
log sigma.  Decoder: an MLP maps the latent to per-type atom-count scores
(the molecular formula), then a second graph-conv stack over the fully
connected graph of those atoms classifies every pair into a bond type.
Positional features (rank among same-type atoms in canonical order) break
the symmetry between identical atoms in the decoder.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import Sequence

import numpy as np

import molgen.tensor as T
from molgen.chem.mol import Atom, BagOfAtoms, Molecule, bag_of_atoms
from molgen.chem.vocab import AtomType, N_BOND_TYPES, Vocabulary, default_vocabulary
from molgen.errors import (
    AlignmentError,
    DegenerateFormula,
    FormulaTooLarge,
    OversizeMolecule,
    PositionOverflow,
    UnknownAtomType,
    UnknownType,
)
from molgen.params import ParamStore, load_checkpoint, save_checkpoint
from molgen.tensor import Tensor


@dataclass
class HyperParams:
    """Model dimensions and loss weights; frozen once training starts."""

    hidden: int = 128          # feature width d
    latent: int = 56           # latent dimension k
    enc_layers: int = 4
    dec_layers: int = 4
    n_types: int = 18          # atom-type vocabulary size m
    max_atoms: int = 38        # largest training molecule size r
    pos_cap: int = 38          # positional-index cap M (>= max_atoms)
    w_edge: float = 1.0
    w_boa: float = 1.0
    w_kl: float = 1e-2
    w_prop: float = 1.0
    eps_attention: float = 1e-6
    positional: bool = True
    bn_eps: float = 1e-5

    def __post_init__(self):
        if self.pos_cap < self.max_atoms:
            raise ValueError("pos_cap must be >= max_atoms")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "HyperParams":
        return cls(**d)


@dataclass
class GraphTensors:
    h: Tensor  # (B, N, d) node features
    e: Tensor  # (B, N, N, d) edge features


@dataclass
class LatentGaussian:
    mu: Tensor         # (B, k)
    sigma: Tensor      # (B, k), strictly positive
    log_sigma: Tensor  # (B, k)
    z: Tensor          # (B, k) = mu + sigma * eps
    eps: np.ndarray    # the noise actually used


@dataclass
class BoaScores:
    scores: Tensor  # (B, m, r + 1); column j scores "count = j"


@dataclass
class EdgeScores:
    scores: Tensor               # (B, N, N, n_bond_types), symmetrized
    node_atoms: list[list[Atom]]  # decoder node order per batch element


@dataclass
class LossBreakdown:
    edge_ce: float
    boa_ce: float
    kl: float
    prop_l2: float
    total: float

    def as_dict(self) -> dict:
        return asdict(self)


def kl_divergence(mu: Tensor, log_sigma: Tensor) -> Tensor:
    """KL(N(mu, sigma) || N(0, I)) summed over coordinates, batch-averaged.

    Computed as -0.5 * sum(1 + log sigma^2 - mu^2 - sigma^2); non-negative
    for every (mu, sigma) with sigma > 0.
    """
    bsz = mu.shape[0]
    two_log_sigma = T.mul(log_sigma, Tensor(2.0))
    terms = T.sub(
        T.add(T.mul(mu, mu), T.exp(two_log_sigma)),
        T.add(two_log_sigma, Tensor(1.0)),
    )
    return T.mul(T.sum_reduce(terms), Tensor(0.5 / bsz))


def formula_from_scores(scores: np.ndarray) -> tuple[int, ...]:
    """Per-type argmax of an (m, r+1) score matrix; ties pick smaller counts."""
    counts = tuple(int(c) for c in np.argmax(scores, axis=1))
    if sum(counts) == 0:
        raise DegenerateFormula("all atom counts decoded to zero")
    return counts


def formula_fallback(scores: np.ndarray) -> tuple[int, ...]:
    """Top-1 total-score formula when the argmax formula is empty."""
    m = scores.shape[0]
    masked = scores[:, 1:]
    t, j = np.unravel_index(int(np.argmax(masked)), masked.shape)
    counts = [0] * m
    counts[int(t)] = int(j) + 1
    return tuple(counts)


class MoleculeVAE:
    """Parameterized model; pure given frozen parameters."""

    def __init__(self, hp: HyperParams, vocab: Vocabulary, store: ParamStore):
        if hp.n_types != len(vocab):
            raise ValueError("hyperparameter n_types does not match vocabulary size")
        self.hp = hp
        self.vocab = vocab
        self.store = store

    # -- construction / persistence ------------------------------------------

    @classmethod
    def initialize(cls, hp: HyperParams, vocab: Vocabulary | None = None, seed: int = 0) -> "MoleculeVAE":
        vocab = vocab or default_vocabulary()
        if hp.n_types != len(vocab):
            hp.n_types = len(vocab)
        rng = np.random.default_rng(seed)
        store = ParamStore()
        d, k = hp.hidden, hp.latent
        m, cap = hp.n_types, hp.pos_cap

        def mat(name: str, fan_in: int, fan_out: int, scale: float | None = None):
            s = scale if scale is not None else np.sqrt(2.0 / (fan_in + fan_out))
            store.parameter(name, rng.normal(0.0, s, size=(fan_in, fan_out)))

        def vec(name: str, n: int, value: float = 0.0):
            store.parameter(name, np.full(n, value))

        def gcn_params(prefix: str, n_layers: int):
            for layer in range(n_layers):
                p = f"{prefix}.gcn{layer}"
                for w in ("w_node_self", "w_node_nbr", "w_edge", "w_edge_src", "w_edge_dst"):
                    mat(f"{p}.{w}", d, d)
                for bn in ("bn_node", "bn_edge"):
                    vec(f"{p}.{bn}.scale", d, 1.0)
                    vec(f"{p}.{bn}.shift", d, 0.0)

        mat("enc.atom_embed", m + cap, d, scale=1.0 / np.sqrt(d))
        mat("enc.bond_embed", N_BOND_TYPES, d, scale=1.0 / np.sqrt(d))
        gcn_params("enc", hp.enc_layers)
        for head in ("mu", "log_sigma"):
            # Small init keeps initial log sigma near zero (sigma near one).
            scale = 0.01 if head == "log_sigma" else None
            for w in ("edge", "src", "dst", "value"):
                mat(f"enc.read_{head}.{w}", d, k, scale=scale)

        mat("boa.w1", k, d)
        vec("boa.b1", d)
        mat("boa.w2", d, m * (hp.max_atoms + 1))
        vec("boa.b2", m * (hp.max_atoms + 1))

        mat("dec.atom_embed", m + cap, d, scale=1.0 / np.sqrt(d))
        mat("dec.z_edge", k, d)
        gcn_params("dec", hp.dec_layers)
        mat("edge_mlp.w1", d, d)
        vec("edge_mlp.b1", d)
        mat("edge_mlp.w2", d, N_BOND_TYPES)
        vec("edge_mlp.b2", N_BOND_TYPES)

        mat("prop.w1", k, d)
        vec("prop.b1", d)
        mat("prop.w2", d, 1)
        vec("prop.b2", 1)
        return cls(hp, vocab, store)

    def save(self, path, extra_header: dict | None = None) -> None:
        header = {
            "format": "molgen-model",
            "hyperparams": self.hp.to_dict(),
            "vocabulary": self.vocab.as_entries(),
        }
        if extra_header:
            header.update(extra_header)
        save_checkpoint(path, self.store, header)

    @classmethod
    def load(cls, path) -> tuple["MoleculeVAE", dict]:
        store, header = load_checkpoint(path)
        if header.get("format") != "molgen-model":
            raise ValueError(f"{path}: not a model checkpoint")
        hp = HyperParams.from_dict(header["hyperparams"])
        vocab = Vocabulary((AtomType(el, ch), v) for el, ch, v in header["vocabulary"])
        return cls(hp, vocab, store), header

    # -- small helpers ----------------------------------------------------------

    def _lin(self, x: Tensor, name: str) -> Tensor:
        w = self.store.get(name)
        lead = x.shape[:-1]
        flat = T.reshape(x, (-1, x.shape[-1]))
        out = T.matmul(flat, w)
        return T.reshape(out, (*lead, w.shape[1]))

    def _bn(self, x: Tensor, name: str) -> Tensor:
        """Per-graph normalization over the graph's node or edge instances."""
        bsz, channels = x.shape[0], x.shape[-1]
        flat = T.reshape(x, (bsz, -1, channels))
        out = T.instance_norm(
            flat,
            self.store.get(f"{name}.scale"),
            self.store.get(f"{name}.shift"),
            eps=self.hp.bn_eps,
        )
        return T.reshape(out, x.shape)

    @staticmethod
    def _eye(n: int) -> Tensor:
        return Tensor(np.eye(n).reshape(1, n, n, 1))

    def _embed_nodes(self, table: str, type_ids: np.ndarray, pos_ids: np.ndarray) -> Tensor:
        # type_ids, pos_ids: (B, N); positions are 1-based.
        b, n = type_ids.shape
        emb = T.embed(self.store.get(table), type_ids.reshape(-1))
        if self.hp.positional:
            pos_rows = self.hp.n_types + (pos_ids.reshape(-1) - 1)
            emb = T.add(emb, T.embed(self.store.get(table), pos_rows))
        return T.reshape(emb, (b, n, self.hp.hidden))

    def embed_atom(self, atom_type: AtomType, position: int, decoder: bool = False) -> Tensor:
        """Embedding of one (type, positional index) pair."""
        if position < 1 or position > self.hp.pos_cap:
            raise PositionOverflow(f"position {position} outside 1..{self.hp.pos_cap}")
        table = "dec.atom_embed" if decoder else "enc.atom_embed"
        t = self.vocab.index(atom_type)
        out = self._embed_nodes(table, np.array([[t]]), np.array([[position]]))
        return T.reshape(out, (self.hp.hidden,))

    # -- graph convolution -------------------------------------------------------

    def gcn_layer(self, h: Tensor, e: Tensor, prefix: str) -> tuple[Tensor, Tensor]:
        """One residual gated graph-conv update of node and edge features.

        Node update: h_i + ReLU(BN(W1 h_i + sum_{j!=i} eta_ij * W2 h_j)) with
        dense attention eta_ij = sig(e_ij) / (sum_{j'!=i} sig(e_ij') + eps).
        Edge update: e_ij + ReLU(BN(V1 e_ij + V2 h_i + V3 h_j)).
        The j-sums include j = i and subtract the diagonal term, which keeps
        atoms with identical features exactly interchangeable.
        """
        bsz, n, dim = h.shape
        s = T.sigmoid(e)
        eye = self._eye(n)
        diag_s = T.sum_reduce(T.mul(s, eye), axis=2)               # (B,N,d) = s_ii
        denom = T.add(
            T.sub(T.sum_reduce(s, axis=2), diag_s),
            Tensor(self.hp.eps_attention),
        )
        nbr = self._lin(h, f"{prefix}.w_node_nbr")
        weighted = T.mul(s, T.reshape(nbr, (bsz, 1, n, dim)))
        num = T.sub(T.sum_reduce(weighted, axis=2), T.mul(diag_s, nbr))
        pre_h = T.add(self._lin(h, f"{prefix}.w_node_self"), T.div(num, denom))
        h_out = T.add(h, T.relu(self._bn(pre_h, f"{prefix}.bn_node")))

        src = self._lin(h, f"{prefix}.w_edge_src")
        dst = self._lin(h, f"{prefix}.w_edge_dst")
        pre_e = T.add(
            T.add(self._lin(e, f"{prefix}.w_edge"), T.reshape(src, (bsz, n, 1, dim))),
            T.reshape(dst, (bsz, 1, n, dim)),
        )
        e_out = T.add(e, T.relu(self._bn(pre_e, f"{prefix}.bn_edge")))
        return h_out, e_out

    def _readout(self, h: Tensor, e: Tensor, head: str) -> Tensor:
        """Gated sum over all (i, j) edge features down to (B, k)."""
        bsz, n, _ = h.shape
        gate_in = T.add(
            T.add(
                self._lin(e, f"enc.read_{head}.edge"),
                T.reshape(self._lin(h, f"enc.read_{head}.src"), (bsz, n, 1, self.hp.latent)),
            ),
            T.reshape(self._lin(h, f"enc.read_{head}.dst"), (bsz, 1, n, self.hp.latent)),
        )
        gated = T.mul(T.sigmoid(gate_in), self._lin(e, f"enc.read_{head}.value"))
        return T.sum_reduce(gated, axis=(1, 2))

    # -- encoder ------------------------------------------------------------------

    def encode_batch(
        self, mols: Sequence[Molecule], eps: np.ndarray | None = None
    ) -> tuple[GraphTensors, LatentGaussian]:
        """Encode same-size molecules; eps=None means deterministic z = mu."""
        if not mols:
            raise ValueError("empty batch")
        sizes = {m.size for m in mols}
        if len(sizes) != 1:
            raise ValueError(f"batch mixes molecule sizes {sorted(sizes)}")
        n = sizes.pop()
        if n < 2:
            raise ValueError("encoder requires molecules with at least 2 atoms")
        if n > self.hp.max_atoms:
            raise OversizeMolecule(f"{n} atoms > model maximum {self.hp.max_atoms}")

        bsz = len(mols)
        try:
            type_ids = np.array([[self.vocab.index(a.atom_type) for a in m.atoms] for m in mols])
        except UnknownType as exc:
            raise UnknownAtomType(str(exc)) from None
        pos_ids = np.array([[a.position_index for a in m.atoms] for m in mols])
        if pos_ids.max() > self.hp.pos_cap:
            raise PositionOverflow(f"positional index {pos_ids.max()} > cap {self.hp.pos_cap}")
        bond_ids = np.stack([m.bonds.astype(np.int64) for m in mols])

        h = self._embed_nodes("enc.atom_embed", type_ids, pos_ids)
        e = T.reshape(
            T.embed(self.store.get("enc.bond_embed"), bond_ids.reshape(-1)),
            (bsz, n, n, self.hp.hidden),
        )
        for layer in range(self.hp.enc_layers):
            h, e = self.gcn_layer(h, e, f"enc.gcn{layer}")

        mu = self._readout(h, e, "mu")
        log_sigma = self._readout(h, e, "log_sigma")
        sigma = T.exp(log_sigma)
        if eps is None:
            eps_arr = np.zeros((bsz, self.hp.latent))
        else:
            eps_arr = np.asarray(eps, dtype=np.float64).reshape(bsz, self.hp.latent)
        z = T.add(mu, T.mul(sigma, Tensor(eps_arr)))
        return GraphTensors(h, e), LatentGaussian(mu, sigma, log_sigma, z, eps_arr)

    def encode(
        self, mol: Molecule, eps: np.ndarray | None = None
    ) -> tuple[GraphTensors, LatentGaussian]:
        return self.encode_batch([mol], eps=eps)

    # -- decoder: atoms -------------------------------------------------------------

    def decode_atom_scores(self, z: Tensor) -> BoaScores:
        """(B, k) latents to (B, m, r+1) count scores via a one-hidden-layer MLP."""
        hidden = T.relu(T.add(self._lin(z, "boa.w1"), self.store.get("boa.b1")))
        flat = T.add(self._lin(hidden, "boa.w2"), self.store.get("boa.b2"))
        return BoaScores(T.reshape(flat, (z.shape[0], self.hp.n_types, self.hp.max_atoms + 1)))

    def decode_atoms(self, z: Tensor) -> tuple[BoaScores, list[BagOfAtoms]]:
        """Scores plus the argmax bag of atoms per batch element."""
        scores = self.decode_atom_scores(z)
        bags = [BagOfAtoms(formula_from_scores(row)) for row in scores.scores.data]
        return scores, bags

    # -- decoder: bonds -------------------------------------------------------------

    def _decoder_nodes(self, bags: Sequence[BagOfAtoms]) -> tuple[np.ndarray, np.ndarray, list[list[Atom]]]:
        totals = {b.total for b in bags}
        if len(totals) != 1:
            raise ValueError(f"batch mixes formula sizes {sorted(totals)}")
        n = totals.pop()
        if n > self.hp.max_atoms:
            raise FormulaTooLarge(f"formula of {n} atoms > model maximum {self.hp.max_atoms}")
        if n < 2:
            raise ValueError("bond decoding requires at least 2 atoms")
        node_atoms = [b.atoms(self.vocab) for b in bags]
        type_ids = np.array(
            [[self.vocab.index(a.atom_type) for a in atoms] for atoms in node_atoms]
        )
        pos_ids = np.array([[a.position_index for a in atoms] for atoms in node_atoms])
        if pos_ids.max() > self.hp.pos_cap:
            raise PositionOverflow(f"positional index {pos_ids.max()} > cap {self.hp.pos_cap}")
        return type_ids, pos_ids, node_atoms

    def decode_bonds(self, z: Tensor, bags: Sequence[BagOfAtoms]) -> EdgeScores:
        """Score every atom pair of the fully connected formula graph.

        Nodes are the bag's atoms ordered by (type, positional index); all
        edges start from the same projected latent, so only the positional
        features distinguish same-type atoms.
        """
        type_ids, pos_ids, node_atoms = self._decoder_nodes(bags)
        bsz, n = type_ids.shape
        dim = self.hp.hidden

        h = self._embed_nodes("dec.atom_embed", type_ids, pos_ids)
        uz = self._lin(z, "dec.z_edge")                          # (B, d)
        ones = Tensor(np.ones((1, n, n, 1)))
        e = T.mul(T.reshape(uz, (bsz, 1, 1, dim)), ones)
        for layer in range(self.hp.dec_layers):
            h, e = self.gcn_layer(h, e, f"dec.gcn{layer}")

        hidden = T.relu(T.add(self._lin(e, "edge_mlp.w1"), self.store.get("edge_mlp.b1")))
        raw = T.add(self._lin(hidden, "edge_mlp.w2"), self.store.get("edge_mlp.b2"))
        sym = T.mul(T.add(raw, T.transpose(raw, (0, 2, 1, 3))), Tensor(0.5))
        return EdgeScores(sym, node_atoms)

    # -- property head ---------------------------------------------------------------

    def predict_property(self, z: Tensor) -> Tensor:
        """(B, k) latents to (B,) regression outputs."""
        hidden = T.relu(T.add(self._lin(z, "prop.w1"), self.store.get("prop.b1")))
        out = T.add(self._lin(hidden, "prop.w2"), self.store.get("prop.b2"))
        return T.reshape(out, (z.shape[0],))

    # -- teacher forcing and loss ------------------------------------------------------

    def decoder_order(self, mol: Molecule) -> list[int]:
        """Indices of mol.atoms in decoder node order (type id, then position).

        Raises AlignmentError when the (type, position) labels do not form a
        bijection with the bag of atoms, which would break teacher forcing.
        """
        order = sorted(
            range(mol.size),
            key=lambda i: (self.vocab.index(mol.atoms[i].atom_type), mol.atoms[i].position_index),
        )
        expected = bag_of_atoms(mol, self.vocab).atoms(self.vocab)
        got = [mol.atoms[i] for i in order]
        if got != expected:
            raise AlignmentError(
                "molecule atom labels do not match the bag-of-atoms node order"
            )
        return order

    def edge_targets(self, mols: Sequence[Molecule]) -> np.ndarray:
        """(B, N, N) bond-type labels aligned to the decoder's node order."""
        out = []
        for mol in mols:
            perm = self.decoder_order(mol)
            out.append(mol.bonds[np.ix_(perm, perm)].astype(np.int64))
        return np.stack(out)

    def loss_batch(
        self,
        mols: Sequence[Molecule],
        eps: np.ndarray | None = None,
        prop_targets: np.ndarray | None = None,
    ) -> tuple[Tensor, LossBreakdown, LatentGaussian]:
        """Full teacher-forced loss over a same-size batch.

        Edge and count cross-entropies are averaged per instance; the KL
        term is summed over latent coordinates and averaged over the batch.
        """
        hp = self.hp
        bsz = len(mols)
        _, latent = self.encode_batch(mols, eps=eps)

        boa = self.decode_atom_scores(latent.z)
        count_targets = np.array(
            [bag_of_atoms(m, self.vocab).counts for m in mols], dtype=np.int64
        )
        boa_logits = T.reshape(boa.scores, (bsz * hp.n_types, hp.max_atoms + 1))
        boa_ce = T.mul(
            T.sum_reduce(T.softmax_cross_entropy(boa_logits, count_targets.reshape(-1))),
            Tensor(1.0 / (bsz * hp.n_types)),
        )

        bags = [BagOfAtoms(tuple(int(c) for c in row)) for row in count_targets]
        edges = self.decode_bonds(latent.z, bags)
        labels = self.edge_targets(mols)
        n = mols[0].size
        iu, ju = np.triu_indices(n, k=1)
        flat_scores = T.reshape(edges.scores, (bsz * n * n, N_BOND_TYPES))
        rows = (np.arange(bsz)[:, None] * n * n + (iu * n + ju)[None, :]).reshape(-1)
        pair_logits = T.embed(flat_scores, rows)
        pair_targets = labels[:, iu, ju].reshape(-1)
        edge_ce = T.mul(
            T.sum_reduce(T.softmax_cross_entropy(pair_logits, pair_targets)),
            Tensor(1.0 / rows.size),
        )

        kl = kl_divergence(latent.mu, latent.log_sigma)

        total = T.add(
            T.add(T.mul(edge_ce, Tensor(hp.w_edge)), T.mul(boa_ce, Tensor(hp.w_boa))),
            T.mul(kl, Tensor(hp.w_kl)),
        )
        prop_l2 = 0.0
        if prop_targets is not None:
            pred = self.predict_property(latent.z)
            diff = T.sub(pred, Tensor(np.asarray(prop_targets, dtype=np.float64)))
            prop = T.mul(T.sum_reduce(T.mul(diff, diff)), Tensor(1.0 / bsz))
            total = T.add(total, T.mul(prop, Tensor(hp.w_prop)))
            prop_l2 = prop.item()

        breakdown = LossBreakdown(
            edge_ce=edge_ce.item(),
            boa_ce=boa_ce.item(),
            kl=kl.item(),
            prop_l2=prop_l2,
            total=total.item(),
        )
        return total, breakdown, latent
