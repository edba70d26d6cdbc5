"""Encoder/decoder behaviour: equivariance, symmetry breaking, losses."""

import numpy as np
import pytest

import molgen.tensor as T
from molgen.chem import AtomType, BagOfAtoms, Molecule, bag_of_atoms, load_corpus, parse_smiles, write_smiles
from molgen.errors import (
    AlignmentError,
    DegenerateFormula,
    OversizeMolecule,
    PositionOverflow,
    UnknownAtomType,
)
from molgen.model import (
    HyperParams,
    MoleculeVAE,
    formula_fallback,
    formula_from_scores,
    kl_divergence,
)
from molgen.tensor import Tape, Tensor, backward

from conftest import CORPUS_100, gradcheck
from test_chem import permuted


def bag_for(vocab, **counts):
    vec = [0] * len(vocab)
    for el, n in counts.items():
        vec[vocab.index(AtomType(el))] = n
    return BagOfAtoms(tuple(vec))


class TestGcnLayer:
    def test_zero_weights_residual_identity(self, tiny_model):
        model = tiny_model
        for name in model.store.names():
            if name.startswith("enc.gcn0.w_"):
                model.store.get(name).data[:] = 0.0
        rng = np.random.default_rng(0)
        h = Tensor(rng.normal(size=(1, 4, model.hp.hidden)))
        e = Tensor(rng.normal(size=(1, 4, 4, model.hp.hidden)))
        h2, e2 = model.gcn_layer(h, e, "enc.gcn0")
        assert np.array_equal(h2.data, h.data)
        assert np.array_equal(e2.data, e.data)

    def test_permutation_equivariance(self, tiny_model):
        model = tiny_model
        rng = np.random.default_rng(1)
        n = 5
        h = Tensor(rng.normal(size=(1, n, model.hp.hidden)))
        e = Tensor(rng.normal(size=(1, n, n, model.hp.hidden)))
        h2, e2 = model.gcn_layer(h, e, "enc.gcn1")
        perm = rng.permutation(n)
        hp_in = Tensor(h.data[:, perm])
        ep_in = Tensor(e.data[:, perm][:, :, perm])
        h2p, e2p = model.gcn_layer(hp_in, ep_in, "enc.gcn1")
        assert np.abs(h2p.data - h2.data[:, perm]).max() <= 1e-12
        assert np.abs(e2p.data - e2.data[:, perm][:, :, perm]).max() <= 1e-12

    def test_gradients_match_finite_differences(self, tiny_model):
        model = tiny_model
        rng = np.random.default_rng(2)
        h0 = rng.normal(size=(1, 3, model.hp.hidden))
        e0 = rng.normal(size=(1, 3, 3, model.hp.hidden))
        leaves = [model.store.get(f"enc.gcn0.{w}")
                  for w in ("w_node_self", "w_node_nbr", "w_edge", "w_edge_src", "w_edge_dst")]

        def build():
            h2, e2 = model.gcn_layer(Tensor(h0), Tensor(e0), "enc.gcn0")
            return T.add(T.sum_reduce(T.mul(h2, h2)), T.sum_reduce(T.mul(e2, e2)))

        assert gradcheck(build, leaves, rng) <= 1e-4


class TestEncode:
    def test_eps_zero_gives_mu(self, tiny_model, vocab):
        mol = parse_smiles("CCO", vocab)
        _, latent = tiny_model.encode(mol)
        assert np.array_equal(latent.z.data, latent.mu.data)

    def test_explicit_eps_reparameterization(self, tiny_model, vocab):
        mol = parse_smiles("CCO", vocab)
        eps = np.full((1, tiny_model.hp.latent), 0.7)
        _, latent = tiny_model.encode(mol, eps=eps)
        expected = latent.mu.data + latent.sigma.data * eps
        assert np.array_equal(latent.z.data, expected)
        assert (latent.sigma.data > 0).all()

    def test_permutation_invariant_latent(self, tiny_model, vocab):
        rng = np.random.default_rng(3)
        mol = parse_smiles("CC(=O)NC", vocab)
        _, base = tiny_model.encode(mol)
        for _ in range(25):
            shuffled = permuted(mol, rng.permutation(mol.size), vocab)
            _, lat = tiny_model.encode(shuffled)
            assert np.abs(lat.mu.data - base.mu.data).max() <= 1e-9
            assert np.abs(lat.sigma.data - base.sigma.data).max() <= 1e-9

    def test_sampled_mean_approaches_mu(self, tiny_model, vocab):
        mol = parse_smiles("CCO", vocab)
        _, latent = tiny_model.encode(mol)
        mu, sigma = latent.mu.data[0], latent.sigma.data[0]
        rng = np.random.default_rng(123)
        zs = mu + sigma * rng.standard_normal((10_000, mu.size))
        deviation = np.abs(zs.mean(axis=0) - mu)
        bound = 4.0 * sigma / np.sqrt(10_000)
        assert (deviation <= bound).mean() >= 0.9

    def test_oversize_molecule(self, tiny_model, vocab):
        mol = parse_smiles("CCCCCCCCCC", vocab)  # 10 atoms > max_atoms=8
        with pytest.raises(OversizeMolecule):
            tiny_model.encode(mol)

    def test_unknown_atom_type(self, vocab):
        from molgen.chem import Vocabulary
        small = Vocabulary([(AtomType("C"), 4)])
        hp = HyperParams(hidden=4, latent=3, enc_layers=1, dec_layers=1,
                         n_types=1, max_atoms=4, pos_cap=4)
        model = MoleculeVAE.initialize(hp, small, seed=0)
        with pytest.raises(UnknownAtomType):
            model.encode(parse_smiles("CCO", vocab))


class TestDecodeAtoms:
    def test_argmax_formula(self):
        scores = np.zeros((3, 4))
        scores[0, 1] = 5.0   # one of type 0
        scores[1, 0] = 5.0   # none of type 1
        scores[2, 2] = 5.0   # two of type 2
        assert formula_from_scores(scores) == (1, 0, 2)

    def test_tie_breaks_toward_smaller_count(self):
        scores = np.zeros((1, 4))
        scores[0, 2] = 7.0
        scores[0, 3] = 7.0
        assert formula_from_scores(scores) == (2,)

    def test_degenerate_formula_and_fallback(self):
        scores = np.zeros((2, 3))
        scores[:, 0] = 1.0
        scores[1, 2] = 0.5
        with pytest.raises(DegenerateFormula):
            formula_from_scores(scores)
        assert formula_fallback(scores) == (0, 2)

    def test_decode_atoms_wires_scores(self, tiny_model):
        hp = tiny_model.hp
        tiny_model.store.get("boa.w2").data[:] = 0.0
        bias = np.zeros((hp.n_types, hp.max_atoms + 1))
        bias[0, 2] = 3.0  # two atoms of type 0, zero of everything else
        tiny_model.store.get("boa.b2").data[:] = bias.reshape(-1)
        z = Tensor(np.zeros((1, hp.latent)))
        scores, bags = tiny_model.decode_atoms(z)
        assert scores.scores.shape == (1, hp.n_types, hp.max_atoms + 1)
        assert bags[0].counts == formula_from_scores(scores.scores.data[0])
        assert bags[0].counts[0] == 2 and bags[0].total == 2


class TestEmbedAtom:
    def test_positions_embed_differently(self, tiny_model):
        a = tiny_model.embed_atom(AtomType("O"), 1)
        b = tiny_model.embed_atom(AtomType("O"), 2)
        assert not np.array_equal(a.data, b.data)

    def test_zero_table_embeds_to_zero(self, tiny_model):
        tiny_model.store.get("enc.atom_embed").data[:] = 0.0
        out = tiny_model.embed_atom(AtomType("C"), 3)
        assert np.array_equal(out.data, np.zeros(tiny_model.hp.hidden))

    def test_gradient_touches_only_active_rows(self, tiny_model, vocab):
        table = tiny_model.store.get("dec.atom_embed")
        table.grad = None
        with Tape() as tape:
            emb = tiny_model.embed_atom(AtomType("O"), 3, decoder=True)
            loss = T.sum_reduce(T.mul(emb, emb))
        backward(tape, loss)
        nonzero_rows = sorted(set(np.flatnonzero(np.abs(table.grad).sum(axis=1)).tolist()))
        assert nonzero_rows == [vocab.index(AtomType("O")), tiny_model.hp.n_types + 2]

    def test_position_overflow(self, tiny_model):
        with pytest.raises(PositionOverflow):
            tiny_model.embed_atom(AtomType("C"), tiny_model.hp.pos_cap + 1)


class TestDecodeBonds:
    def test_same_type_rows_equal_without_positions(self, vocab):
        hp = HyperParams(hidden=6, latent=5, enc_layers=1, dec_layers=2,
                         n_types=len(vocab), max_atoms=6, pos_cap=6, positional=False)
        model = MoleculeVAE.initialize(hp, vocab, seed=7)
        z = Tensor(np.random.default_rng(0).normal(size=(1, 5)))
        edges = model.decode_bonds(z, [bag_for(vocab, C=2, O=1)])
        scores = edges.scores.data[0]
        # nodes 0, 1 are the two carbons, node 2 the oxygen
        assert np.array_equal(scores[0, 2], scores[1, 2])
        assert np.array_equal(scores[0, 0], scores[1, 1])

    def test_positions_break_symmetry(self, vocab):
        hp = HyperParams(hidden=6, latent=5, enc_layers=1, dec_layers=2,
                         n_types=len(vocab), max_atoms=6, pos_cap=6, positional=True)
        model = MoleculeVAE.initialize(hp, vocab, seed=7)
        z = Tensor(np.random.default_rng(0).normal(size=(1, 5)))
        scores = model.decode_bonds(z, [bag_for(vocab, C=2, O=1)]).scores.data[0]
        assert np.abs(scores[0, 2] - scores[1, 2]).max() > 1e-6

    def test_scores_symmetrized(self, tiny_model, vocab):
        z = Tensor(np.random.default_rng(4).normal(size=(1, tiny_model.hp.latent)))
        scores = tiny_model.decode_bonds(z, [bag_for(vocab, C=2, N=1, O=1)]).scores.data
        assert np.array_equal(scores, np.transpose(scores, (0, 2, 1, 3)))


class TestPropertyHead:
    def test_zero_weights_output_is_bias(self, tiny_model):
        tiny_model.store.get("prop.w1").data[:] = 0.0
        tiny_model.store.get("prop.w2").data[:] = 0.0
        tiny_model.store.get("prop.b2").data[:] = 1.25
        z = Tensor(np.random.default_rng(0).normal(size=(3, tiny_model.hp.latent)))
        out = tiny_model.predict_property(z)
        assert np.allclose(out.data, 1.25)

    def test_gradient_wrt_latent(self, tiny_model):
        rng = np.random.default_rng(5)
        z = Tensor(rng.normal(size=(1, tiny_model.hp.latent)), requires_grad=True)

        def build():
            return T.sum_reduce(tiny_model.predict_property(z))

        assert gradcheck(build, [z], rng) <= 1e-4


class TestLoss:
    def test_kl_zero_for_standard_normal(self):
        kl = kl_divergence(Tensor(np.zeros((1, 4))), Tensor(np.zeros((1, 4))))
        assert kl.item() == 0.0

    def test_kl_half_for_unit_mean(self):
        kl = kl_divergence(Tensor(np.ones((1, 1))), Tensor(np.zeros((1, 1))))
        assert kl.item() == pytest.approx(0.5)

    def test_kl_non_negative_random(self):
        rng = np.random.default_rng(6)
        for _ in range(200):
            mu = Tensor(rng.normal(size=(1, 8)) * 3)
            log_sigma = Tensor(rng.normal(size=(1, 8)))
            assert kl_divergence(mu, log_sigma).item() >= 0.0

    def test_breakdown_weights_sum(self, tiny_model, vocab):
        mols = [parse_smiles("CCO", vocab), parse_smiles("CCN", vocab)]
        total, br, _ = tiny_model.loss_batch(mols, eps=np.zeros((2, tiny_model.hp.latent)))
        hp = tiny_model.hp
        expected = hp.w_edge * br.edge_ce + hp.w_boa * br.boa_ce + hp.w_kl * br.kl
        assert total.item() == pytest.approx(expected, rel=1e-12)
        assert br.total == pytest.approx(expected, rel=1e-12)

    def test_property_term(self, tiny_model, vocab):
        mols = [parse_smiles("CCO", vocab)]
        _, br, _ = tiny_model.loss_batch(
            mols, eps=np.zeros((1, tiny_model.hp.latent)), prop_targets=np.array([2.0])
        )
        assert br.prop_l2 > 0.0
        assert br.total == pytest.approx(
            tiny_model.hp.w_edge * br.edge_ce + tiny_model.hp.w_boa * br.boa_ce
            + tiny_model.hp.w_kl * br.kl + tiny_model.hp.w_prop * br.prop_l2,
            rel=1e-12,
        )

    def test_alignment_error_on_bad_labels(self, tiny_model, vocab):
        mol = parse_smiles("CCO", vocab)
        broken = Molecule(
            tuple(type(mol.atoms[0])(a.atom_type, 1) for a in mol.atoms),  # all pos 1
            mol.bonds.copy(),
        )
        with pytest.raises(AlignmentError):
            tiny_model.decoder_order(broken)

    def test_teacher_targets_match_canonical_bonds(self, tiny_model, vocab):
        pairs = load_corpus(CORPUS_100, vocab)
        for _, mol in pairs[:30]:
            if mol.size > tiny_model.hp.max_atoms:
                continue
            perm = tiny_model.decoder_order(mol)
            bag = bag_of_atoms(mol, vocab)
            assert [mol.atoms[i] for i in perm] == bag.atoms(vocab)
            labels = tiny_model.edge_targets([mol])[0]
            rebuilt = Molecule.from_graph(
                [mol.atoms[i].atom_type for i in perm], labels, vocab
            )
            assert write_smiles(rebuilt, vocab) == write_smiles(mol, vocab)


class TestEndToEndGradients:
    def test_loss_matches_finite_differences(self, tiny_model, vocab):
        rng = np.random.default_rng(11)
        mols = [parse_smiles("O=C=O", vocab), parse_smiles("CC#N", vocab)]
        eps = rng.normal(size=(2, tiny_model.hp.latent))
        names = [
            "enc.gcn0.w_node_nbr", "enc.gcn1.w_edge", "enc.read_mu.value",
            "enc.read_log_sigma.edge", "enc.atom_embed", "enc.bond_embed",
            "dec.z_edge", "dec.gcn1.bn_node.scale", "boa.w2", "edge_mlp.w1",
        ]

        def build():
            total, _, _ = tiny_model.loss_batch(mols, eps=eps)
            return total

        leaves = [tiny_model.store.get(n) for n in names]
        assert gradcheck(build, leaves, rng, n_coords=2) <= 1e-4


class TestCheckpointSelfDescribing:
    def test_save_load_round_trip(self, tiny_model, tmp_path, vocab):
        path = tmp_path / "model.bin"
        tiny_model.save(path, {"note": "hi"})
        loaded, header = MoleculeVAE.load(path)
        assert header["note"] == "hi"
        assert loaded.hp == tiny_model.hp
        assert loaded.vocab.types == vocab.types
        mol = parse_smiles("CCO", vocab)
        _, a = tiny_model.encode(mol)
        _, b = loaded.encode(mol)
        assert np.array_equal(a.mu.data, b.mu.data)
