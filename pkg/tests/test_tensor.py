"""Autodiff core: op semantics, gradient checks, tape behaviour."""

import mpmath
import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gatedfusion import tensor as tc
from gatedfusion.tensor import ShapeError, Tensor

from conftest import check_gradients, finite_difference, relative_error


class TestMatmul:
    def test_identity(self):
        a = Tensor(np.eye(2))
        b = Tensor([[1.0, 2.0], [3.0, 4.0]])
        npt.assert_array_equal(tc.matmul(a, b).data, [[1.0, 2.0], [3.0, 4.0]])

    def test_row_times_column(self):
        out = tc.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        npt.assert_array_equal(out.data, [[11.0]])

    def test_gradient_matches_finite_differences(self, rng):
        A = rng.normal(size=(3, 3))
        B = rng.normal(size=(3, 3))
        err = check_gradients(
            lambda t: tc.tensor_sum(tc.matmul(t["A"], t["B"])),
            {"A": A, "B": B},
            tol=1e-6,
        )
        assert err < 1e-6

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
            tc.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 2))))

    def test_matrix_vector(self, rng):
        W = rng.normal(size=(4, 3))
        x = rng.normal(size=3)
        npt.assert_allclose(tc.matmul(Tensor(W), Tensor(x)).data, W @ x)
        check_gradients(
            lambda t: tc.tensor_sum(tc.matmul(t["W"], t["x"])),
            {"W": W, "x": x},
            tol=1e-6,
        )


class TestUnary:
    def test_tanh_zero(self):
        npt.assert_array_equal(tc.map_unary(Tensor([0.0, 0.0]), "tanh").data, [0.0, 0.0])

    def test_sigmoid_zero(self):
        npt.assert_array_equal(tc.map_unary(Tensor([0.0]), "sigmoid").data, [0.5])

    def test_tanh_half_against_mpmath(self):
        # independent high-precision evaluation of tanh(0.5)
        want = float(mpmath.tanh(mpmath.mpf("0.5")))
        got = float(tc.map_unary(Tensor([0.5]), "tanh").data[0])
        assert abs(got - want) < 1e-12
        assert round(got, 6) == 0.462117

    def test_unknown_function_rejected(self):
        with pytest.raises(ValueError, match="unknown"):
            tc.map_unary(Tensor([1.0]), "exp")

    @pytest.mark.parametrize("f", ["tanh", "sigmoid", "relu"])
    def test_gradients(self, f, rng):
        # relu probes kept away from the kink
        x = rng.normal(size=7)
        x[np.abs(x) < 1e-3] = 0.5
        check_gradients(lambda t: tc.tensor_sum(tc.map_unary(t["x"], f)), {"x": x})

    def test_sigmoid_extreme_inputs_stay_finite(self):
        out = tc.sigmoid(Tensor([-1e4, -710.0, 710.0, 1e4]))
        assert np.all(np.isfinite(out.data))


class TestCombineBinary:
    def test_add(self):
        out = tc.combine_binary(Tensor([1.0, 2.0]), Tensor([3.0, 4.0]), "add")
        npt.assert_array_equal(out.data, [4.0, 6.0])

    def test_mul_annihilator(self):
        out = tc.combine_binary(Tensor([1.0, 2.0]), Tensor([0.0, 0.0]), "mul")
        npt.assert_array_equal(out.data, [0.0, 0.0])

    def test_mul_gradient_is_other_operand(self):
        a = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        b = Tensor([5.0, -4.0, 0.5])
        tc.tensor_sum(tc.mul(a, b)).backward()
        npt.assert_array_equal(a.grad, b.data)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            tc.mul(Tensor([1.0, 2.0]), Tensor([1.0, 2.0, 3.0]))

    def test_row_broadcast_add_gradient(self, rng):
        X = rng.normal(size=(4, 3))
        b = rng.normal(size=3)
        check_gradients(
            lambda t: tc.tensor_sum(tc.add(t["X"], t["b"])), {"X": X, "b": b}, tol=1e-6
        )


class TestTranspose:
    def test_forward(self):
        x = Tensor([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
        npt.assert_array_equal(tc.transpose2d(x).data, [[1, 4], [2, 5], [3, 6]])

    def test_gradient(self, rng):
        w = Tensor(rng.normal(size=(4, 3)))
        check_gradients(
            lambda t: tc.tensor_sum(tc.mul(tc.transpose2d(t["x"]), w)),
            {"x": rng.normal(size=(3, 4))},
        )

    def test_vector_rejected(self):
        with pytest.raises(ShapeError):
            tc.transpose2d(Tensor([1.0, 2.0]))


class TestStackRows:
    def test_forward(self):
        out = tc.stack_rows([Tensor([1.0, 2.0]), Tensor([3.0, 4.0])])
        npt.assert_array_equal(out.data, [[1, 2], [3, 4]])

    def test_gradient(self, rng):
        w = Tensor(rng.normal(size=(3, 4)))
        check_gradients(
            lambda t: tc.tensor_sum(
                tc.mul(tc.stack_rows([t["a"], t["b"], t["c"]]), w)
            ),
            {"a": rng.normal(size=4), "b": rng.normal(size=4), "c": rng.normal(size=4)},
        )

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            tc.stack_rows([Tensor([1.0]), Tensor([1.0, 2.0])])


class TestChannelBias:
    def test_forward_2d(self):
        x = Tensor(np.zeros((2, 3)))
        b = Tensor([1.0, -2.0])
        npt.assert_array_equal(
            tc.add_channel_bias(x, b).data, [[1, 1, 1], [-2, -2, -2]]
        )

    def test_gradient_2d(self, rng):
        check_gradients(
            lambda t: tc.tensor_sum(
                tc.tanh(tc.add_channel_bias(t["x"], t["b"]))
            ),
            {"x": rng.normal(size=(3, 5)), "b": rng.normal(size=3)},
        )

    def test_gradient_batched(self, rng):
        check_gradients(
            lambda t: tc.tensor_sum(
                tc.tanh(tc.add_channel_bias(t["x"], t["b"]))
            ),
            {"x": rng.normal(size=(2, 3, 4)), "b": rng.normal(size=3)},
        )

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            tc.add_channel_bias(Tensor(np.zeros((2, 3))), Tensor([1.0, 2.0, 3.0]))


class TestConcat:
    def test_basic(self):
        out = tc.concat([Tensor([1.0]), Tensor([2.0])], axis=0)
        npt.assert_array_equal(out.data, [1.0, 2.0])

    def test_shapes(self):
        out = tc.concat([Tensor(np.zeros(5)), Tensor(np.zeros(3))], axis=0)
        assert out.shape == (8,)

    def test_round_trip_slicing(self, rng):
        parts = [rng.normal(size=(2, k)) for k in (3, 1, 4)]
        cat = tc.concat([Tensor(p) for p in parts], axis=1)
        offs = np.cumsum([0, 3, 1, 4])
        for p, a, b in zip(parts, offs[:-1], offs[1:]):
            npt.assert_array_equal(cat.data[:, a:b], p)

    def test_extent_disagreement(self):
        with pytest.raises(ShapeError, match="extent"):
            tc.concat([Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 3)))], axis=1)

    def test_gradient_slices_back(self, rng):
        xs = {"a": rng.normal(size=4), "b": rng.normal(size=2)}
        check_gradients(
            lambda t: tc.tensor_sum(tc.mul(c := tc.concat([t["a"], t["b"]]), c)), xs
        )

    @given(
        sizes=st.lists(st.integers(1, 6), min_size=1, max_size=4),
        rows=st.integers(1, 4),
        axis=st.integers(0, 1),
    )
    @settings(max_examples=60, deadline=None)
    def test_output_shape_formula(self, sizes, rows, axis):
        if axis == 0:
            parts = [Tensor(np.zeros((s, rows))) for s in sizes]
            assert tc.concat(parts, axis=0).shape == (sum(sizes), rows)
        else:
            parts = [Tensor(np.zeros((rows, s))) for s in sizes]
            assert tc.concat(parts, axis=1).shape == (rows, sum(sizes))


def conv_oracle(x, kernels, dilation, padding):
    """Direct nested-loop dilated convolution, the independent reference."""
    C_out, C_in, K = kernels.shape
    T = x.shape[1]
    span = (K - 1) * dilation
    if padding == "same":
        left = span // 2
        xp = np.pad(x, ((0, 0), (left, span - left)))
        T_out = T
    else:
        xp = x
        T_out = T - span
    y = np.zeros((C_out, T_out))
    for o in range(C_out):
        for t in range(T_out):
            acc = 0.0
            for c in range(C_in):
                for k in range(K):
                    acc += kernels[o, c, k] * xp[c, t + k * dilation]
            y[o, t] = acc
    return y


class TestConv1dDilated:
    def test_hand_case_dilation_2(self):
        x = Tensor([[1.0, 2.0, 3.0, 4.0, 5.0]])
        k = Tensor([[[1.0, 1.0]]])
        out = tc.conv1d_dilated(x, k, dilation=2, padding="valid")
        npt.assert_array_equal(out.data, [[4.0, 6.0, 8.0]])

    def test_identity_kernel(self, rng):
        x = rng.normal(size=(3, 10))
        k = np.zeros((3, 3, 1))
        for c in range(3):
            k[c, c, 0] = 1.0
        for dil in (1, 2, 5):
            out = tc.conv1d_dilated(Tensor(x), Tensor(k), dilation=dil, padding="valid")
            npt.assert_array_equal(out.data, x)

    @pytest.mark.parametrize("padding", ["same", "valid"])
    @pytest.mark.parametrize("dilation", [1, 2, 3])
    def test_against_nested_loop_oracle(self, padding, dilation, rng):
        x = rng.normal(size=(3, 14))
        k = rng.normal(size=(4, 3, 3))
        out = tc.conv1d_dilated(Tensor(x), Tensor(k), dilation, padding)
        npt.assert_allclose(out.data, conv_oracle(x, k, dilation, padding), atol=1e-12)

    def test_receptive_field_error(self):
        with pytest.raises(ShapeError, match="receptive field"):
            tc.conv1d_dilated(
                Tensor(np.zeros((1, 5))), Tensor(np.zeros((1, 1, 3))), 3, "valid"
            )

    def test_gradients_through_stacked_convs(self, rng):
        # the inner conv's input is itself a conv output (non-C-contiguous
        # at one point); gradients must still reach the first kernel
        x = rng.normal(size=(2, 9))

        def loss(t):
            h = tc.relu(tc.conv1d_dilated(Tensor(x), t["k1"], 1, "same"))
            y = tc.conv1d_dilated(h, t["k2"], 2, "same")
            return tc.tensor_sum(tc.tanh(y))

        check_gradients(
            loss,
            {"k1": rng.normal(size=(3, 2, 2)), "k2": rng.normal(size=(2, 3, 2))},
        )

    def test_input_gradient_when_input_is_conv_output(self, rng):
        k1 = Tensor(rng.normal(size=(3, 2, 2)), requires_grad=True)
        k2 = Tensor(rng.normal(size=(2, 3, 2)), requires_grad=True)
        h = tc.conv1d_dilated(Tensor(rng.normal(size=(2, 7))), k1, 1, "same")
        y = tc.conv1d_dilated(tc.relu(h), k2, 2, "same")
        tc.tensor_sum(y).backward()
        assert np.abs(k1.grad).sum() > 0

    @pytest.mark.parametrize("padding", ["same", "valid"])
    def test_gradients(self, padding, rng):
        x = rng.normal(size=(2, 9))
        k = rng.normal(size=(3, 2, 3))
        check_gradients(
            lambda t: tc.tensor_sum(
                tc.mul(y := tc.conv1d_dilated(t["x"], t["k"], 2, padding), y)
            ),
            {"x": x, "k": k},
        )

    def test_batched_matches_loop_over_batch(self, rng):
        xb = rng.normal(size=(4, 2, 11))
        k = rng.normal(size=(3, 2, 3))
        out = tc.conv1d_dilated(Tensor(xb), Tensor(k), 2, "same")
        for i in range(4):
            single = tc.conv1d_dilated(Tensor(xb[i]), Tensor(k), 2, "same")
            npt.assert_allclose(out.data[i], single.data, atol=1e-14)

    def test_batched_gradients(self, rng):
        xb = rng.normal(size=(2, 2, 7))
        k = rng.normal(size=(2, 2, 2))
        check_gradients(
            lambda t: tc.tensor_sum(
                tc.mul(y := tc.conv1d_dilated(t["x"], t["k"], 2, "same"), y)
            ),
            {"x": xb, "k": k},
        )


class TestPool1d:
    def test_max(self):
        out = tc.pool1d(Tensor([[1.0, 3.0, 2.0, 5.0]]), "max", 2, 2)
        npt.assert_array_equal(out.data, [[3.0, 5.0]])

    def test_mean(self):
        out = tc.pool1d(Tensor([[2.0, 4.0]]), "mean", 2, 2)
        npt.assert_array_equal(out.data, [[3.0]])

    def test_max_gradient_routes_to_argmax(self):
        x = Tensor([[1.0, 3.0, 2.0, 5.0]], requires_grad=True)
        tc.tensor_sum(tc.pool1d(x, "max", 2, 2)).backward()
        npt.assert_array_equal(x.grad, [[0.0, 1.0, 0.0, 1.0]])

    def test_max_tie_routes_to_first_index(self):
        x = Tensor([[2.0, 2.0, 2.0, 2.0]], requires_grad=True)
        tc.tensor_sum(tc.pool1d(x, "max", 2, 2)).backward()
        npt.assert_array_equal(x.grad, [[1.0, 0.0, 1.0, 0.0]])

    def test_window_too_large(self):
        with pytest.raises(ShapeError, match="window"):
            tc.pool1d(Tensor([[1.0, 2.0]]), "max", 3, 1)

    @pytest.mark.parametrize("kind", ["max", "mean"])
    def test_gradients_with_overlapping_windows(self, kind, rng):
        x = rng.normal(size=(2, 8))
        check_gradients(
            lambda t: tc.tensor_sum(tc.mul(y := tc.pool1d(t["x"], kind, 3, 2), y)),
            {"x": x},
        )


class TestDense:
    def test_identity_weights(self, rng):
        x = rng.normal(size=4)
        out = tc.dense(Tensor(x), Tensor(np.eye(4)), Tensor(np.zeros(4)))
        npt.assert_array_equal(out.data, x)

    def test_zero_weights_give_bias(self):
        out = tc.dense(Tensor([1.0, 2.0]), Tensor(np.zeros((1, 2))), Tensor([7.0]))
        npt.assert_array_equal(out.data, [7.0])

    def test_gradients(self, rng):
        arrs = {"x": rng.normal(size=3), "W": rng.normal(size=(4, 3)), "b": rng.normal(size=4)}
        err = check_gradients(
            lambda t: tc.tensor_sum(tc.dense(t["x"], t["W"], t["b"])), arrs, tol=1e-6
        )
        assert err < 1e-6

    def test_batched_rows(self, rng):
        X = rng.normal(size=(5, 3))
        W = rng.normal(size=(4, 3))
        b = rng.normal(size=4)
        out = tc.dense(Tensor(X), Tensor(W), Tensor(b))
        npt.assert_allclose(out.data, X @ W.T + b)
        check_gradients(
            lambda t: tc.tensor_sum(tc.mul(y := tc.dense(t["X"], t["W"], t["b"]), y)),
            {"X": X, "W": W, "b": b},
        )

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            tc.dense(Tensor(np.zeros(3)), Tensor(np.zeros((4, 2))), Tensor(np.zeros(4)))


def lstm_params(rng, d, u):
    return {
        "Wx": rng.normal(size=(4 * u, d)) * 0.4,
        "Wh": rng.normal(size=(4 * u, u)) * 0.4,
        "b": rng.normal(size=4 * u) * 0.4,
    }


class TestLstm:
    def test_all_zero_parameters_zero_state(self):
        z = np.zeros
        h, c = tc.lstm_step(
            Tensor(z(2)), Tensor(z(3)), Tensor(z(3)),
            Tensor(z((12, 2))), Tensor(z((12, 3))), Tensor(z(12)),
        )
        npt.assert_array_equal(h.data, z(3))
        npt.assert_array_equal(c.data, z(3))

    def test_zero_weights_nonzero_cell(self):
        # gates sit at 0.5, candidate at 0: c' = 0.5 c, h' = 0.5 tanh(0.5 c)
        c_prev = np.array([1.0, -2.0, 0.3])
        z = np.zeros
        h, c = tc.lstm_step(
            Tensor(z(2)), Tensor(z(3)), Tensor(c_prev),
            Tensor(z((12, 2))), Tensor(z((12, 3))), Tensor(z(12)),
        )
        npt.assert_allclose(c.data, 0.5 * c_prev, atol=1e-15)
        npt.assert_allclose(h.data, 0.5 * np.tanh(0.5 * c_prev), atol=1e-15)

    def test_step_gradients(self, rng):
        d, u = 3, 2
        arrs = lstm_params(rng, d, u)
        arrs.update(
            x=rng.normal(size=d), h0=rng.normal(size=u), c0=rng.normal(size=u)
        )

        def loss(t):
            h, c = tc.lstm_step(t["x"], t["h0"], t["c0"], t["Wx"], t["Wh"], t["b"])
            return tc.tensor_sum(tc.add(tc.mul(h, h), c))

        check_gradients(loss, arrs, tol=1e-5)

    def test_parameter_shape_mismatch(self, rng):
        z = np.zeros
        with pytest.raises(ShapeError, match="inconsistent"):
            tc.lstm_step(
                Tensor(z(2)), Tensor(z(3)), Tensor(z(3)),
                Tensor(z((12, 3))), Tensor(z((12, 3))), Tensor(z(12)),
            )

    def test_sequence_matches_folded_steps(self, rng):
        d, u, T = 3, 2, 5
        p = lstm_params(rng, d, u)
        xs = rng.normal(size=(T, d))
        seq = tc.lstm_sequence(
            Tensor(xs), Tensor(p["Wx"]), Tensor(p["Wh"]), Tensor(p["b"]),
            return_sequence=True,
        )
        h, c = Tensor(np.zeros(u)), Tensor(np.zeros(u))
        for t in range(T):
            h, c = tc.lstm_step(
                Tensor(xs[t]), h, c, Tensor(p["Wx"]), Tensor(p["Wh"]), Tensor(p["b"])
            )
            npt.assert_allclose(seq.data[t], h.data, atol=1e-14)

    def test_full_sequence_gradient(self, rng):
        # length-4 sequence, u=3, against central differences
        d, u, T = 2, 3, 4
        arrs = lstm_params(rng, d, u)
        arrs["xs"] = rng.normal(size=(T, d))

        def loss(t):
            h = tc.lstm_sequence(t["xs"], t["Wx"], t["Wh"], t["b"])
            return tc.tensor_sum(tc.mul(h, h))

        check_gradients(loss, arrs, tol=1e-5)

    def test_sequence_mode_gradient(self, rng):
        d, u, T = 2, 2, 4
        arrs = lstm_params(rng, d, u)
        arrs["xs"] = rng.normal(size=(T, d))

        def loss(t):
            hs = tc.lstm_sequence(t["xs"], t["Wx"], t["Wh"], t["b"], return_sequence=True)
            return tc.tensor_sum(tc.mul(hs, hs))

        check_gradients(loss, arrs, tol=1e-5)


class TestWeightedSoftmaxCrossEntropy:
    def test_uniform_logits(self):
        loss = tc.weighted_softmax_cross_entropy(
            Tensor([1.0, 1.0, 1.0]), 0, np.ones(3)
        )
        npt.assert_allclose(loss.data, np.log(3.0), atol=1e-12)

    def test_saturated_correct(self):
        loss = tc.weighted_softmax_cross_entropy(
            Tensor([30.0, -30.0, -30.0]), 0, np.ones(3)
        )
        assert float(loss.data) < 1e-12

    def test_weight_linearity(self, rng):
        logits = rng.normal(size=4)
        w = np.ones(4)
        w2 = w.copy()
        w2[2] = 2.0
        l1 = Tensor(logits, requires_grad=True)
        loss1 = tc.weighted_softmax_cross_entropy(l1, 2, w)
        loss1.backward()
        l2 = Tensor(logits, requires_grad=True)
        loss2 = tc.weighted_softmax_cross_entropy(l2, 2, w2)
        loss2.backward()
        npt.assert_allclose(float(loss2.data), 2.0 * float(loss1.data), rtol=1e-12)
        npt.assert_allclose(l2.grad, 2.0 * l1.grad, rtol=1e-12)

    def test_label_out_of_range(self):
        with pytest.raises(IndexError):
            tc.weighted_softmax_cross_entropy(Tensor([0.0, 1.0]), 2, np.ones(2))

    def test_gradient(self, rng):
        logits = rng.normal(size=5)
        w = rng.uniform(0.5, 2.0, size=5)
        check_gradients(
            lambda t: tc.weighted_softmax_cross_entropy(t["l"], 3, w), {"l": logits}
        )

    def test_batched_gradient_and_mean(self, rng):
        L = rng.normal(size=(4, 3))
        ys = np.array([0, 2, 1, 1])
        w = rng.uniform(0.5, 2.0, size=3)
        per = [
            float(tc.weighted_softmax_cross_entropy(Tensor(L[i]), ys[i], w).data)
            for i in range(4)
        ]
        batched = tc.weighted_softmax_cross_entropy(Tensor(L), ys, w)
        npt.assert_allclose(float(batched.data), np.mean(per), rtol=1e-12)
        check_gradients(
            lambda t: tc.weighted_softmax_cross_entropy(t["L"], ys, w), {"L": L}
        )


class TestBackward:
    def test_sum_gradient_is_ones(self):
        x = Tensor([3.0, -1.0, 2.0], requires_grad=True)
        tc.tensor_sum(x).backward()
        npt.assert_array_equal(x.grad, [1.0, 1.0, 1.0])

    def test_square_gradient(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        tc.tensor_sum(tc.mul(x, x)).backward()
        npt.assert_array_equal(x.grad, [2.0, 4.0])

    def test_non_scalar_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ShapeError, match="scalar"):
            tc.backward(tc.mul(x, x))

    def test_second_backward_rejected(self):
        x = Tensor([1.0], requires_grad=True)
        loss = tc.tensor_sum(tc.mul(x, x))
        loss.backward()
        with pytest.raises(RuntimeError, match="single-use"):
            loss.backward()

    def test_fanout_accumulation(self, rng):
        v = rng.normal(size=4)
        x = Tensor(v, requires_grad=True)
        y = Tensor(v.copy(), requires_grad=True)
        # x feeds two consumers; the reference computes each branch separately
        tc.tensor_sum(tc.add(tc.mul(x, x), tc.tanh(x))).backward()
        ref1 = Tensor(v.copy(), requires_grad=True)
        tc.tensor_sum(tc.mul(ref1, ref1)).backward()
        ref2 = Tensor(v.copy(), requires_grad=True)
        tc.tensor_sum(tc.tanh(ref2)).backward()
        npt.assert_allclose(x.grad, ref1.grad + ref2.grad, atol=1e-15)
        assert y.grad is None  # untouched tensor stays untouched

    def test_grads_accumulate_until_zeroed(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        tc.tensor_sum(x).backward()
        tc.tensor_sum(tc.mul(x, 2.0)).backward()
        npt.assert_array_equal(x.grad, [3.0, 3.0])
        tc.zero_grads([x])
        assert x.grad is None

    def test_determinism_bit_identical(self, rng):
        x0 = rng.normal(size=(3, 3))

        def run():
            x = Tensor(x0, requires_grad=True)
            y = tc.tanh(tc.matmul(x, x))
            tc.tensor_sum(tc.mul(y, y)).backward()
            return y.data.copy(), x.grad.copy()

        y1, g1 = run()
        y2, g2 = run()
        assert np.array_equal(y1, y2) and np.array_equal(g1, g2)


class TestReductions:
    def test_mean_axis(self, rng):
        x = rng.normal(size=(3, 5))
        out = tc.mean_axis(Tensor(x), axis=1)
        npt.assert_allclose(out.data, x.mean(axis=1))
        check_gradients(
            lambda t: tc.tensor_sum(tc.mul(y := tc.mean_axis(t["x"], 1), y)), {"x": x}
        )

    def test_max_axis_first_tie(self):
        x = Tensor([[1.0, 5.0, 5.0]], requires_grad=True)
        tc.tensor_sum(tc.max_axis(x, axis=1)).backward()
        npt.assert_array_equal(x.grad, [[0.0, 1.0, 0.0]])

    def test_slice_axis_gradient(self, rng):
        x = rng.normal(size=(4, 6))
        check_gradients(
            lambda t: tc.tensor_sum(tc.mul(y := tc.slice_axis(t["x"], 1, 2, 5), y)),
            {"x": x},
        )


@given(
    m=st.integers(1, 5), k=st.integers(1, 5), n=st.integers(1, 5),
    T=st.integers(1, 20), K=st.integers(1, 3), dil=st.integers(1, 3),
)
@settings(max_examples=80, deadline=None)
def test_shape_algebra(m, k, n, T, K, dil):
    """Output shapes follow the documented formulas for all valid inputs."""
    assert tc.matmul(Tensor(np.zeros((m, k))), Tensor(np.zeros((k, n)))).shape == (m, n)
    span = (K - 1) * dil
    x = Tensor(np.zeros((k, T)))
    kern = Tensor(np.zeros((m, k, K)))
    assert tc.conv1d_dilated(x, kern, dil, "same").shape == (m, T)
    if T >= span + 1:
        assert tc.conv1d_dilated(x, kern, dil, "valid").shape == (m, T - span)
    if T >= K:
        assert tc.pool1d(x, "max", K, dil).shape == (k, (T - K) // dil + 1)
