from pathlib import Path

import numpy as np
import pytest

import molgen.tensor as T
from molgen.chem import default_vocabulary
from molgen.model import HyperParams, MoleculeVAE

DATA_DIR = Path(__file__).resolve().parent.parent / "data"
CORPUS_100 = DATA_DIR / "zinc100.smi"


@pytest.fixture(scope="session")
def vocab():
    return default_vocabulary()


@pytest.fixture()
def tiny_model(vocab):
    hp = HyperParams(
        hidden=6, latent=5, enc_layers=2, dec_layers=2,
        n_types=len(vocab), max_atoms=8, pos_cap=8,
    )
    return MoleculeVAE.initialize(hp, vocab, seed=123)


def rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-6)


def gradcheck(build_loss, leaves, rng, n_coords=3, h=1e-5):
    """Worst relative error between analytic grads and central differences."""
    for t in leaves:
        t.grad = None
    with T.Tape() as tape:
        loss = build_loss()
    T.backward(tape, loss)

    worst = 0.0
    for t in leaves:
        grad = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = np.abs(grad).reshape(-1)
        picks = {int(np.argmax(flat))}
        if t.size > 1:
            picks.update(int(i) for i in rng.choice(t.size, size=min(n_coords, t.size), replace=False))
        for fi in sorted(picks):
            idx = np.unravel_index(fi, t.data.shape)
            orig = t.data[idx]
            t.data[idx] = orig + h
            f_plus = build_loss().item()
            t.data[idx] = orig - h
            f_minus = build_loss().item()
            t.data[idx] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            worst = max(worst, rel_err(numeric, float(grad[idx])))
    return worst
