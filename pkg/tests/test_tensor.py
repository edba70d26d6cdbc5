"""Tensor ops, autodiff against finite differences, Adam, checkpoints."""

import math

import numpy as np
import pytest

import molgen.tensor as T
from molgen.errors import (
    EmptyTape,
    MissingGradient,
    NonFiniteValue,
    ShapeMismatch,
)
from molgen.params import ParamStore, adam_step, load_checkpoint, save_checkpoint
from molgen.tensor import Tape, Tensor, backward

from conftest import gradcheck


class TestForward:
    def test_sigmoid_at_zero(self):
        assert T.sigmoid(Tensor([0.0])).data[0] == 0.5

    def test_batch_norm_all_zero_batch(self):
        x = Tensor(np.zeros((4, 3)))
        out = T.batch_norm(
            x, Tensor(np.ones(3)), Tensor(np.zeros(3)),
            np.zeros(3), np.ones(3), eps=1e-5, training=True,
        )
        assert np.allclose(out.data, 0.0)

    def test_batch_norm_standardizes(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.normal(3.0, 2.0, size=(64, 5)))
        out = T.batch_norm(
            x, Tensor(np.ones(5)), Tensor(np.zeros(5)),
            np.zeros(5), np.ones(5), eps=1e-9, training=True,
        )
        assert np.abs(out.data.mean(axis=0)).max() <= 1e-9
        assert np.abs(out.data.var(axis=0) - 1.0).max() <= 1e-6

    def test_batch_norm_eval_uses_running_stats(self):
        run_mean, run_var = np.array([2.0]), np.array([4.0])
        x = Tensor(np.array([[4.0]]))
        out = T.batch_norm(
            x, Tensor(np.ones(1)), Tensor(np.zeros(1)),
            run_mean, run_var, eps=0.0, training=False,
        )
        assert out.data[0, 0] == pytest.approx(1.0)

    def test_softmax_cross_entropy_uniform(self):
        loss = T.softmax_cross_entropy(Tensor([0.0, 0.0, 0.0, 0.0]), 2)
        assert loss.item() == pytest.approx(math.log(4.0))

    def test_softmax_cross_entropy_batched(self):
        logits = Tensor(np.array([[10.0, 0.0], [0.0, 10.0]]))
        loss = T.softmax_cross_entropy(logits, np.array([0, 1]))
        assert loss.data.max() < 1e-3

    def test_embed_lookup(self):
        table = Tensor(np.arange(12.0).reshape(4, 3))
        out = T.embed(table, np.array([3, 0]))
        assert np.array_equal(out.data, [[9.0, 10.0, 11.0], [0.0, 1.0, 2.0]])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
        with pytest.raises(ShapeMismatch):
            T.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4,))))

    def test_non_finite_detection(self):
        with pytest.raises(NonFiniteValue):
            T.div(Tensor([1.0]), Tensor([0.0]))
        with pytest.raises(NonFiniteValue):
            T.exp(Tensor([1000.0]))


class TestBackward:
    def test_sum_gradient_is_ones(self):
        p = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        with Tape() as tape:
            loss = T.sum_reduce(p)
        backward(tape, loss)
        assert np.array_equal(p.grad, np.ones((2, 3)))

    def test_elementwise_square_gradient(self):
        p = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
        with Tape() as tape:
            loss = T.sum_reduce(T.mul(p, p))
        backward(tape, loss)
        assert np.allclose(p.grad, 2.0 * p.data)

    def test_unreachable_parameter_gets_zero_gradient(self):
        store = ParamStore()
        used = store.parameter("used", np.ones(3))
        unused = store.parameter("unused", np.ones(2))
        with Tape() as tape:
            loss = T.sum_reduce(used)
        backward(tape, loss, store)
        assert np.array_equal(used.grad, np.ones(3))
        assert np.array_equal(unused.grad, np.zeros(2))

    def test_empty_tape(self):
        with pytest.raises(EmptyTape):
            backward(Tape(), Tensor(1.0))

    def test_gradients_accumulate_for_shared_input(self):
        p = Tensor(np.array([2.0]), requires_grad=True)
        with Tape() as tape:
            loss = T.sum_reduce(T.add(T.mul(p, p), p))
        backward(tape, loss)
        assert np.allclose(p.grad, 2.0 * p.data + 1.0)

    def test_determinism(self):
        def run():
            rng = np.random.default_rng(5)
            p = Tensor(rng.normal(size=(4, 4)), requires_grad=True)
            x = Tensor(rng.normal(size=(4, 4)))
            with Tape() as tape:
                loss = T.sum_reduce(T.relu(T.matmul(p, x)))
            backward(tape, loss)
            return loss.item(), p.grad.copy()

        l1, g1 = run()
        l2, g2 = run()
        assert l1 == l2
        assert np.array_equal(g1, g2)


class TestGradcheck:
    """Central-difference oracle over every differentiable op."""

    def test_all_ops_random_trials(self):
        rng = np.random.default_rng(17)
        worst = 0.0
        for trial in range(10):
            n, m, k = (int(rng.integers(2, 8)) for _ in range(3))
            a = Tensor(rng.normal(size=(n, m)), requires_grad=True)
            b = Tensor(rng.normal(size=(n, m)) + 3.0, requires_grad=True)
            w = Tensor(rng.normal(size=(m, k)), requires_grad=True)
            gamma = Tensor(rng.normal(1.0, 0.1, size=(k,)), requires_grad=True)
            beta = Tensor(rng.normal(size=(k,)), requires_grad=True)
            table = Tensor(rng.normal(size=(5, m)), requires_grad=True)
            idx = rng.integers(0, 5, size=n)
            targets = rng.integers(0, k, size=n)

            def build():
                x = T.matmul(T.div(T.mul(T.add(a, 0.5), b), b), w)
                x = T.add(x, T.sum_reduce(T.exp(T.mul(T.embed(table, idx), 0.1)), axis=1, keepdims=True))
                x = T.batch_norm(
                    x, gamma, beta, np.zeros(k), np.ones(k), eps=1e-5, training=True,
                )
                x = T.add(T.relu(x), T.mul(T.sigmoid(x), 0.5))
                per_row = T.softmax_cross_entropy(x, targets)
                folded = T.transpose(T.reshape(per_row, (n, 1)), (1, 0))
                return T.mul(T.sum_reduce(folded), 1.0 / n)

            worst = max(worst, gradcheck(build, [a, b, w, gamma, beta, table], rng))
        assert worst <= 1e-4, f"worst relative error {worst}"

    def test_instance_norm(self):
        rng = np.random.default_rng(21)
        x = Tensor(rng.normal(2.0, 3.0, size=(2, 6, 4)), requires_grad=True)
        gamma = Tensor(rng.normal(1.0, 0.1, size=(4,)), requires_grad=True)
        beta = Tensor(rng.normal(size=(4,)), requires_grad=True)

        def build():
            out = T.instance_norm(x, gamma, beta, eps=1e-5)
            return T.sum_reduce(T.mul(out, T.sigmoid(out)))

        assert gradcheck(build, [x, gamma, beta], rng) <= 1e-4
        # per-group standardization before scale/shift
        out = T.instance_norm(x, Tensor(np.ones(4)), Tensor(np.zeros(4)), eps=1e-12)
        assert np.abs(out.data.mean(axis=1)).max() <= 1e-9
        assert np.abs(out.data.var(axis=1) - 1.0).max() <= 1e-6

    def test_sub_and_sum_axes(self):
        rng = np.random.default_rng(3)
        a = Tensor(rng.normal(size=(3, 4, 2)), requires_grad=True)
        b = Tensor(rng.normal(size=(1, 4, 1)), requires_grad=True)

        def build():
            return T.sum_reduce(T.mul(T.sub(a, b), T.sub(a, b)))

        assert gradcheck(build, [a, b], rng) <= 1e-4


class TestAdam:
    def test_zero_gradient_keeps_parameters(self):
        store = ParamStore()
        p = store.parameter("p", np.array([1.0, -2.0]))
        p.grad = np.zeros(2)
        adam_step(store, lr=0.1)
        assert np.array_equal(p.data, [1.0, -2.0])

    def test_first_step_closed_form(self):
        # m_hat = g, v_hat = g*g after bias correction, so the first step
        # moves by lr * g / (|g| + eps) = -0.1 for g = 1, lr = 0.1.
        store = ParamStore()
        p = store.parameter("p", np.array([0.0]))
        p.grad = np.array([1.0])
        adam_step(store, lr=0.1)
        assert p.data[0] == pytest.approx(-0.1, abs=1e-8)

    def test_constant_gradient_descends(self):
        store = ParamStore()
        p = store.parameter("p", np.array([0.0]))
        for _ in range(50):
            p.grad = np.array([2.5])
            adam_step(store, lr=0.01)
        assert p.data[0] < -0.3

    def test_missing_gradient(self):
        store = ParamStore()
        store.parameter("p", np.array([0.0]))
        with pytest.raises(MissingGradient):
            adam_step(store, lr=0.1)

    def test_determinism(self):
        def run():
            store = ParamStore()
            p = store.parameter("p", np.linspace(0, 1, 5))
            for step in range(20):
                p.grad = np.sin(np.arange(5.0) + step)
                adam_step(store, lr=0.05)
            return p.data.copy()

        assert np.array_equal(run(), run())


class TestCheckpoint:
    def test_bit_exact_round_trip(self, tmp_path):
        rng = np.random.default_rng(8)
        store = ParamStore()
        store.parameter("w", rng.normal(size=(7, 3)))
        store.parameter("b", rng.normal(size=(3,)))
        store.buffer("run_mean", rng.normal(size=(3,)))
        p = store.get("w")
        p.grad = rng.normal(size=(7, 3))
        store.get("b").grad = rng.normal(size=(3,))
        adam_step(store, lr=0.01)

        path = tmp_path / "ckpt.bin"
        save_checkpoint(path, store, {"note": "test"})
        loaded, header = load_checkpoint(path)
        assert header["note"] == "test"
        assert loaded.step == store.step
        for name in store.names():
            assert np.array_equal(loaded.get(name).data, store.get(name).data)
            assert np.array_equal(loaded._adam_m[name], store._adam_m[name])
            assert np.array_equal(loaded._adam_v[name], store._adam_v[name])
        assert np.array_equal(loaded.get_buffer("run_mean"), store.get_buffer("run_mean"))

    def test_atomic_write_leaves_no_temp(self, tmp_path):
        store = ParamStore()
        store.parameter("p", np.ones(2))
        path = tmp_path / "c.bin"
        save_checkpoint(path, store, {})
        leftovers = [f for f in tmp_path.iterdir() if f != path]
        assert leftovers == []

    def test_reject_garbage(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"not a checkpoint")
        with pytest.raises(ValueError):
            load_checkpoint(path)
