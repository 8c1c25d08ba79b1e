import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gazegan import numerics as nx
from gazegan.numerics import (
    Adam,
    AdamState,
    ContractError,
    GradTape,
    InvalidIndexError,
    InvalidShapeError,
    Tensor,
)
from helpers import gradcheck

SEEDS = range(20)


def T(x, grad=False):
    return Tensor(np.asarray(x, dtype=float), requires_grad=grad)


class TestConv1d:
    def test_hand_computed(self):
        out = nx.conv1d(T([[1, 2, 3]]), T([[[1, 1]]]), T([0]))
        np.testing.assert_array_equal(out.data, [[3, 5]])

    def test_identity_kernel(self):
        out = nx.conv1d(T([[5]]), T([[[1]]]), T([0]))
        np.testing.assert_array_equal(out.data, [[5]])

    def test_stride_two(self):
        out = nx.conv1d(T([[1, 2, 3, 4]]), T([[[1, 1]]]), T([0]), stride=2)
        np.testing.assert_array_equal(out.data, [[3, 7]])

    def test_output_length(self):
        out = nx.conv1d(T(np.ones((2, 3, 300))), T(np.ones((5, 3, 4))), T(np.zeros(5)), 2, 1)
        assert out.shape == (2, 5, 150)

    def test_channel_mismatch(self):
        with pytest.raises(InvalidShapeError):
            nx.conv1d(T(np.ones((2, 5))), T(np.ones((1, 3, 2))), T([0]))

    def test_kernel_longer_than_padded_input(self):
        with pytest.raises(InvalidShapeError):
            nx.conv1d(T(np.ones((1, 2))), T(np.ones((1, 1, 4))), T([0]))


class TestConv1dTranspose:
    def test_single_input(self):
        out = nx.conv1d_transpose(T([[1]]), T([[[1, 1]]]), T([0]))
        np.testing.assert_array_equal(out.data, [[1, 1]])

    def test_stride_two_scatter(self):
        out = nx.conv1d_transpose(T([[1, 1]]), T([[[1]]]), T([0]), stride=2)
        np.testing.assert_array_equal(out.data, [[1, 0, 1]])

    def test_upsamples_75_to_150(self):
        out = nx.conv1d_transpose(
            T(np.ones((2, 8, 75))), T(np.ones((8, 4, 4))), T(np.zeros(4)), 2, 1
        )
        assert out.shape == (2, 4, 150)

    def test_non_positive_output(self):
        with pytest.raises(InvalidShapeError):
            nx.conv1d_transpose(T([[1]]), T([[[1]]]), T([0]), stride=1, padding=1)

    @pytest.mark.parametrize("seed", SEEDS)
    def test_adjoint_identity(self, seed):
        rng = np.random.default_rng(seed)
        c_in, c_out = rng.integers(1, 5, size=2)
        K = int(rng.integers(1, 9))
        stride = int(rng.integers(1, 4))
        padding = int(rng.integers(0, K))
        n_out = int(rng.integers(1, 6))
        # choose T so the strided windows tile the padded input exactly
        length = (n_out - 1) * stride + K - 2 * padding
        if length < 1:
            length += stride * (1 + (1 - length) // stride)
            n_out = (length + 2 * padding - K) // stride + 1
        assert (length + 2 * padding - K) % stride == 0
        W = rng.normal(size=(c_out, c_in, K))
        a = rng.normal(size=(c_in, length))
        b = rng.normal(size=(c_out, n_out))
        zero_out, zero_in = T(np.zeros(c_out)), T(np.zeros(c_in))
        lhs = np.sum(nx.conv1d(T(a), T(W), zero_out, stride, padding).data * b)
        rhs = np.sum(a * nx.conv1d_transpose(T(b), T(W), zero_in, stride, padding).data)
        assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


class TestDense:
    def test_identity(self):
        np.testing.assert_array_equal(nx.dense(T([1, 2]), T(np.eye(2)), T([0, 0])).data, [1, 2])

    def test_hand_computed(self):
        np.testing.assert_array_equal(nx.dense(T([1, 1]), T([[2, 3]]), T([1])).data, [6])

    def test_zero_input(self):
        W = np.random.default_rng(0).normal(size=(1, 2))
        np.testing.assert_array_equal(nx.dense(T([0, 0]), T(W), T([5])).data, [5])

    def test_mismatch(self):
        with pytest.raises(InvalidShapeError):
            nx.dense(T([1, 2, 3]), T(np.eye(2)), T([0, 0]))


class TestEmbedding:
    def test_row_selection(self):
        table = T([[1, 2], [3, 4]])
        np.testing.assert_array_equal(nx.embedding_lookup(table, 1).data, [3, 4])
        np.testing.assert_array_equal(nx.embedding_lookup(table, 0).data, [1, 2])

    def test_gradient_only_into_row(self):
        table = T([[1, 2], [3, 4], [5, 6]], grad=True)
        with GradTape() as tape:
            loss = nx.tsum(nx.embedding_lookup(table, 1))
        tape.backward(loss)
        np.testing.assert_array_equal(table.grad, [[0, 0], [1, 1], [0, 0]])

    @pytest.mark.parametrize("bad", [-1, 2, 10])
    def test_out_of_range(self, bad):
        with pytest.raises(InvalidIndexError):
            nx.embedding_lookup(T([[1, 2], [3, 4]]), bad)


class TestActivations:
    def test_anchors(self):
        assert nx.sigmoid(T(0.0)).item() == 0.5
        assert nx.tanh(T(0.0)).item() == 0.0
        assert nx.leaky_relu(T(-1.0), 0.2).item() == pytest.approx(-0.2, abs=1e-15)

    @given(st.lists(st.floats(-30, 30), min_size=1, max_size=20))
    def test_codomains(self, xs):
        x = T(xs)
        s = nx.sigmoid(x).data
        t = nx.tanh(x).data
        assert np.all((s >= 0) & (s <= 1)) and np.all(np.abs(t) <= 1)

    def test_sigmoid_strict_for_moderate_inputs(self):
        s = nx.sigmoid(T(np.linspace(-30, 30, 101))).data
        assert np.all((s > 0) & (s < 1))


class TestBCE:
    def test_anchors(self):
        ln2 = math.log(2)
        assert nx.bce_loss(T([0.5]), T([1.0])).item() == pytest.approx(ln2, abs=1e-6)
        assert nx.bce_loss(T([0.5, 0.5]), T([1.0, 0.0])).item() == pytest.approx(ln2, abs=1e-6)
        assert nx.bce_loss(T([0.5]), T([0.5])).item() == pytest.approx(ln2, abs=1e-6)

    def test_clamping_keeps_loss_finite(self):
        loss = nx.bce_loss(T([0.0, 1.0]), T([1.0, 0.0])).item()
        assert math.isfinite(loss)
        assert loss == pytest.approx(-math.log(1e-7), rel=1e-9)

    def test_shape_mismatch(self):
        with pytest.raises(InvalidShapeError):
            nx.bce_loss(T([0.5]), T([1.0, 0.0]))


class TestBackward:
    def test_sum_gives_ones(self):
        x = T(np.arange(6.0).reshape(2, 3), grad=True)
        with GradTape() as tape:
            loss = nx.tsum(x)
        tape.backward(loss)
        np.testing.assert_array_equal(x.grad, np.ones((2, 3)))

    def test_chain_rule_bce_sigmoid(self):
        w = T([0.0], grad=True)
        with GradTape() as tape:
            loss = nx.bce_loss(nx.sigmoid(w * 1.0), T([1.0]))
        tape.backward(loss)
        assert w.grad[0] == pytest.approx(-0.5, abs=1e-12)

    def test_non_scalar_loss(self):
        x = T([1.0, 2.0], grad=True)
        with GradTape() as tape:
            y = x * 2.0
        with pytest.raises(ContractError):
            tape.backward(y)

    def test_tape_records_in_order(self):
        x = T([1.0, 2.0], grad=True)
        with GradTape() as tape:
            y = nx.tanh(x)
            z = nx.tsum(y * y)
        assert [n.output for n in tape.nodes][-1] is z
        assert tape.nodes[0].inputs[0] is x

    def test_no_recording_outside_tape(self):
        x = T([1.0], grad=True)
        y = nx.tanh(x)
        assert y.requires_grad

    def test_forward_bit_identical(self):
        rng = np.random.default_rng(3)
        x, W, b = rng.normal(size=(2, 3, 20)), rng.normal(size=(4, 3, 4)), rng.normal(size=4)
        a = nx.conv1d(T(x), T(W), T(b), 2, 1).data
        c = nx.conv1d(T(x), T(W), T(b), 2, 1).data
        assert a.tobytes() == c.tobytes()


def _weighted(out, rng_weights):
    return nx.tsum(out * Tensor(rng_weights))


GRAD_CASES = {
    "conv1d": lambda rng: (
        [rng.normal(size=(2, 3, 9)), rng.normal(size=(4, 3, 3)), rng.normal(size=4)],
        lambda w: lambda x, k, b: _weighted(nx.conv1d(x, k, b, 2, 1), w),
        (2, 4, 5),
    ),
    "conv1d_transpose": lambda rng: (
        [rng.normal(size=(2, 3, 5)), rng.normal(size=(3, 2, 4)), rng.normal(size=2)],
        lambda w: lambda x, k, b: _weighted(nx.conv1d_transpose(x, k, b, 2, 1), w),
        (2, 2, 10),
    ),
    "dense": lambda rng: (
        [rng.normal(size=(3, 5)), rng.normal(size=(4, 5)), rng.normal(size=4)],
        lambda w: lambda x, W, b: _weighted(nx.dense(x, W, b), w),
        (3, 4),
    ),
    "embedding": lambda rng: (
        [rng.normal(size=(5, 3))],
        lambda w: lambda t: _weighted(nx.embedding_lookup(t, np.array([1, 4, 1])), w),
        (3, 3),
    ),
    "leaky_relu": lambda rng: (
        [rng.normal(size=(3, 4)) + 0.05 * np.sign(rng.normal(size=(3, 4)))],
        lambda w: lambda x: _weighted(nx.leaky_relu(x, 0.2), w),
        (3, 4),
    ),
    "tanh": lambda rng: (
        [rng.normal(size=(3, 4))],
        lambda w: lambda x: _weighted(nx.tanh(x), w),
        (3, 4),
    ),
    "sigmoid": lambda rng: (
        [rng.normal(size=(3, 4))],
        lambda w: lambda x: _weighted(nx.sigmoid(x), w),
        (3, 4),
    ),
    "bce_loss": lambda rng: (
        [rng.normal(size=(6,))],
        lambda w: lambda x: nx.bce_loss(nx.sigmoid(x), Tensor((w > 0).astype(float))),
        (6,),
    ),
    "cross_entropy": lambda rng: (
        [rng.normal(size=(4, 3))],
        lambda w: lambda x: nx.cross_entropy(x, np.array([0, 2, 1, 2])),
        (4, 3),
    ),
    "concat_reshape": lambda rng: (
        [rng.normal(size=(2, 3)), rng.normal(size=(2, 2))],
        lambda w: lambda a, b: _weighted(nx.reshape(nx.concat([a, b], axis=1), (10,)), w),
        (10,),
    ),
    "arith_mean": lambda rng: (
        [rng.normal(size=(3,)), rng.normal(size=(1,))],
        lambda w: lambda a, b: nx.mean((a - b) * (a + 2.0) * Tensor(w)),
        (3,),
    ),
}


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("op", sorted(GRAD_CASES))
def test_gradients_match_finite_differences(op, seed):
    rng = np.random.default_rng(seed)
    arrays, make, wshape = GRAD_CASES[op](rng)
    build = make(rng.normal(size=wshape))
    assert gradcheck(build, arrays, h=1e-5) < 1e-4


class TestAdam:
    def test_two_steps_oracle(self):
        p = Tensor([1.0], requires_grad=True)
        state = AdamState.for_param(p, lr=1e-4)
        p.grad = np.array([1.0])
        nx.adam_step(p, state)
        # m_hat = v_hat = 1 after bias correction
        assert p.data[0] == pytest.approx(1.0 - 1e-4 / (1.0 + 1e-8), abs=1e-15)
        assert abs(p.data[0] - 0.9999) < 1e-9
        nx.adam_step(p, state)
        assert abs(p.data[0] - 0.9998) < 1e-9
        assert state.t == 2

    def test_zero_gradient_leaves_param(self):
        p = Tensor([0.3, -2.0], requires_grad=True)
        opt = Adam({"p": p})
        for _ in range(5):
            p.grad = np.zeros(2)
            opt.step()
        np.testing.assert_array_equal(p.data, [0.3, -2.0])

    def test_missing_grad(self):
        p = Tensor([1.0], requires_grad=True)
        with pytest.raises(ContractError):
            nx.adam_step(p, AdamState.for_param(p))

    def test_state_lengths(self):
        p = Tensor(np.ones((3, 2)), requires_grad=True)
        s = AdamState.for_param(p)
        assert s.m.shape == s.v.shape == p.shape


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_forward_outputs_finite(seed):
    rng = np.random.default_rng(seed)
    x = T(rng.normal(size=(2, 3, 12)) * 10)
    h = nx.leaky_relu(nx.conv1d(x, T(rng.normal(size=(4, 3, 4))), T(np.zeros(4)), 2, 1))
    y = nx.tanh(nx.conv1d_transpose(h, T(rng.normal(size=(4, 3, 4))), T(np.zeros(3)), 2, 1))
    assert np.all(np.isfinite(y.data))
