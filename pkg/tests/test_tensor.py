"""Autodiff core: forward values, backward gradients, finite-difference oracle."""

import numpy as np
import pytest

from kdlab import SeededRng, Tensor, backward, gradients, parameter
from kdlab.gradcheck import check_gradients
from kdlab.tensor import (
    clip,
    constant,
    dropout,
    embedding,
    exp,
    first_token,
    gelu,
    index_rows,
    layer_norm,
    log,
    matmul,
    relu,
    softmax,
    take_per_row,
)


class TestForwardValues:
    def test_matmul_identity(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        eye = Tensor([[1.0, 0.0], [0.0, 1.0]])
        np.testing.assert_array_equal(matmul(a, eye).data, a.data)

    def test_sum_axis0(self):
        t = Tensor([[1.0, 2.0], [3.0, 4.0]]).sum(axis=0)
        np.testing.assert_array_equal(t.data, [4.0, 6.0])

    def test_layer_norm_zero_variance(self):
        # Oracle: (x - mean) / sqrt(var + 1e-5) with var = 0 gives exactly 0.
        x = Tensor([1.0, 1.0, 1.0])
        g = Tensor([1.0, 1.0, 1.0])
        b = Tensor([0.0, 0.0, 0.0])
        out = layer_norm(x.reshape(1, 3), g, b).data
        oracle = (np.ones(3) - 1.0) / np.sqrt(0.0 + 1e-5)
        np.testing.assert_array_equal(out.ravel(), oracle)
        np.testing.assert_array_equal(out, np.zeros((1, 3)))

    def test_shape_mismatch_names_op_and_shapes(self):
        with pytest.raises(ValueError, match=r"matmul.*\(2, 3\).*\(2, 3\)"):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
        with pytest.raises(ValueError, match=r"add.*\(2, 3\).*\(4,\)"):
            Tensor(np.ones((2, 3))) + Tensor(np.ones(4))

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.normal(size=(5, 7)) * 50)
        s = softmax(x).data
        np.testing.assert_allclose(s.sum(axis=1), np.ones(5), atol=1e-12)
        assert np.isfinite(s).all()

    def test_all_ops_finite_on_finite_inputs(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(3, 4))
        checks = [
            softmax(Tensor(x * 100)).data,
            gelu(Tensor(x * 10)).data,
            relu(Tensor(x)).data,
            layer_norm(Tensor(x), Tensor(np.ones(4)), Tensor(np.zeros(4))).data,
            exp(Tensor(np.clip(x, -50, 50))).data,
            log(clip(Tensor(x), 1e-12, 1.0)).data,
        ]
        for arr in checks:
            assert np.isfinite(arr).all()


class TestBackward:
    def test_linear_gradient(self):
        w = parameter([0.5, -1.0, 2.0])
        x = constant([1.0, 2.0, 3.0])
        loss = (w * x).sum()
        backward(loss)
        np.testing.assert_array_equal(w.grad, [1.0, 2.0, 3.0])

    def test_quadratic_gradient(self):
        w = parameter([5.0])
        loss = ((w - 2.0) * (w - 2.0)).sum()
        backward(loss)
        np.testing.assert_allclose(w.grad, [6.0], atol=1e-12)

    def test_non_scalar_loss_rejected(self):
        w = parameter([1.0, 2.0])
        with pytest.raises(ValueError, match="scalar"):
            backward(w * 2.0)

    def test_unreachable_parameter_gets_zero(self):
        used = parameter([1.0, 2.0])
        unused = parameter([[3.0, 4.0]])
        grads = gradients((used * used).sum(), {"used": used, "unused": unused})
        np.testing.assert_array_equal(grads["unused"], np.zeros((1, 2)))
        np.testing.assert_allclose(grads["used"], [2.0, 4.0])

    def test_reused_node_accumulates(self):
        w = parameter([3.0])
        loss = (w * w + w * 2.0).sum()  # d/dw = 2w + 2 = 8
        backward(loss)
        np.testing.assert_allclose(w.grad, [8.0], atol=1e-12)

    def test_composed_graph_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        w_fixed = rng.normal(size=(4, 3))

        def fn(p):
            h = gelu(matmul(p, Tensor(w_fixed)))
            s = softmax(h)
            return (s * s).sum() + relu(p).mean()

        report = check_gradients(fn, rng.normal(size=(2, 4)), tolerance=1e-3)
        assert report.passed, f"max relative error {report.max_error}"


class TestGradCheckHarness:
    def test_sum_of_squares(self):
        report = check_gradients(lambda p: (p * p).sum(), [1.0, 2.0], tolerance=1e-6)
        assert report.passed
        np.testing.assert_allclose(report.analytic, [2.0, 4.0], atol=1e-12)
        np.testing.assert_allclose(report.numeric, [2.0, 4.0], atol=1e-6)

    def test_cross_entropy_of_tempered_softmax(self):
        rng = np.random.default_rng(11)
        logits = rng.normal(size=(4, 5)) * 3
        targets = rng.integers(0, 5, size=4)

        def fn(p):
            probs = softmax(p * (1.0 / 4.0))
            picked = take_per_row(probs, targets)
            return -log(clip(picked, 1e-12, 1.0 - 1e-12)).mean()

        assert check_gradients(fn, logits, tolerance=1e-3).passed

    def test_dead_branch_zero_gradient(self):
        def fn(p):
            live = (p * 0.0).sum()  # every coordinate multiplied by zero
            return live + 1.5

        report = check_gradients(fn, [1.0, -2.0, 3.0], tolerance=1e-6)
        assert report.passed
        np.testing.assert_array_equal(report.analytic, np.zeros(3))
        np.testing.assert_array_equal(report.numeric, np.zeros(3))


OP_CASES = {
    "add": lambda p, c: (p + Tensor(c)).sum(),
    "add_broadcast": lambda p, c: (p + Tensor(c[0])).mean(),
    "sub": lambda p, c: (Tensor(c) - p).sum(),
    "mul": lambda p, c: (p * Tensor(c)).sum(),
    "div": lambda p, c: (p / Tensor(np.abs(c) + 1.0)).sum(),
    "div_by_param": lambda p, c: (Tensor(c) / (p * p + 1.0)).sum(),
    "neg": lambda p, c: (-p).sum(),
    "matmul": lambda p, c: matmul(p, Tensor(c.T)).sum(),
    "exp": lambda p, c: exp(p).sum(),
    "log": lambda p, c: log(p * p + 0.5).sum(),
    "relu": lambda p, c: relu(p).sum(),
    "gelu": lambda p, c: gelu(p).sum(),
    "softmax": lambda p, c: (softmax(p) * Tensor(c)).sum(),
    "sum_axis": lambda p, c: (p.sum(axis=1) * Tensor(c[:, 0])).sum(),
    "mean_axis": lambda p, c: (p.mean(axis=0) * Tensor(c[0])).sum(),
    "reshape": lambda p, c: (p.reshape(-1) * Tensor(c.ravel())).sum(),
    "transpose": lambda p, c: (p.transpose((1, 0)) * Tensor(c.T)).sum(),
    "layer_norm": lambda p, c: (layer_norm(p, Tensor(np.full(c.shape[1], 1.3)),
                                           Tensor(np.full(c.shape[1], -0.2))) * Tensor(c)).sum(),
    "clip": lambda p, c: clip(p, -0.5, 0.5).sum(),
    "take_per_row": lambda p, c: take_per_row(p, np.arange(p.shape[0]) % p.shape[1]).sum(),
    "index_rows": lambda p, c: (index_rows(p, np.array([1, 0, 1, 2])) * 0.7).sum(),
}


@pytest.mark.parametrize("name", sorted(OP_CASES))
def test_op_gradients_match_finite_differences(name):
    # 20 random small instances per op, relative error < 1e-3 at h = 1e-5.
    fn = OP_CASES[name]
    rng = np.random.default_rng(hash(name) % (2**32))
    for _ in range(20):
        point = rng.normal(size=(3, 4))
        if name == "clip":
            # keep points away from the clip corners where FD is undefined
            point = np.where(np.abs(np.abs(point) - 0.5) < 1e-3, point + 0.01, point)
        coeffs = rng.normal(size=(3, 4))
        report = check_gradients(lambda p: fn(p, coeffs), point, tolerance=1e-3)
        assert report.passed, f"{name}: max relative error {report.max_error}"


class TestStructuredOps:
    def test_embedding_gradient_scatter(self):
        table = parameter(np.arange(12.0).reshape(4, 3))
        ids = np.array([[0, 0], [3, 1]])
        out = embedding(table, ids)
        assert out.shape == (2, 2, 3)
        backward((out * 2.0).sum())
        expected = np.zeros((4, 3))
        expected[0] = 4.0  # id 0 appears twice
        expected[1] = 2.0
        expected[3] = 2.0
        np.testing.assert_array_equal(table.grad, expected)

    def test_embedding_rejects_out_of_range(self):
        table = parameter(np.zeros((4, 3)))
        with pytest.raises(ValueError, match="out of range"):
            embedding(table, np.array([[0, 4]]))

    def test_first_token(self):
        x = parameter(np.arange(24.0).reshape(2, 3, 4))
        pooled = first_token(x)
        np.testing.assert_array_equal(pooled.data, x.data[:, 0, :])
        backward(pooled.sum())
        assert x.grad[:, 0, :].sum() == 8.0
        assert x.grad[:, 1:, :].sum() == 0.0

    def test_dropout_train_scaling(self):
        rng = SeededRng(3)
        x = Tensor(np.ones((200, 50)))
        out = dropout(x, 0.3, rng).data
        kept = out > 0
        # kept entries are rescaled by 1/(1-rate)
        np.testing.assert_allclose(out[kept], 1.0 / 0.7)
        assert 0.6 < kept.mean() < 0.8

    def test_constant_subgraph_builds_no_tape(self):
        a = Tensor(np.ones((2, 2)))
        b = Tensor(np.ones((2, 2)))
        out = matmul(a, b) + 1.0
        assert not out.requires_grad
        assert out._parents == ()


class TestDeterminism:
    def test_same_seed_same_draws(self):
        a = SeededRng(42)
        b = SeededRng(42)
        np.testing.assert_array_equal(a.random(16), b.random(16))
        np.testing.assert_array_equal(a.permutation(33), b.permutation(33))
        np.testing.assert_array_equal(
            a.integers(0, 100, size=10), b.integers(0, 100, size=10))

    def test_derived_streams_are_independent_and_stable(self):
        root = SeededRng(9)
        s1 = root.derive("shuffle", 0).random(8)
        s2 = root.derive("dropout", 0).random(8)
        assert not np.array_equal(s1, s2)
        np.testing.assert_array_equal(s1, SeededRng(9).derive("shuffle", 0).random(8))

    def test_derivation_rejects_unhashable_parts(self):
        with pytest.raises(TypeError):
            SeededRng(0).derive(1.5)
