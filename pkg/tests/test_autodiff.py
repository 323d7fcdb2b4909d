import math

import numpy as np
import pytest

from contaminet import autodiff as ad
from contaminet.errors import GraphError, ShapeError, ValidationError

from oracles import conv2d_reference, dense_reference, maxpool_reference


def tensor(arr, grad=False):
    return ad.Tensor(np.asarray(arr, dtype=np.float64), requires_grad=grad)


class TestConv2d:
    def test_identity_kernel(self):
        y = ad.conv2d(tensor(np.ones((1, 3, 3))), tensor(np.ones((1, 1, 1, 1))), tensor([0.0]))
        assert np.array_equal(y.data, np.ones((1, 3, 3)))

    def test_full_window_sum(self):
        x = tensor([[[1.0, 2.0], [3.0, 4.0]]])
        y = ad.conv2d(x, tensor(np.ones((1, 1, 2, 2))), tensor([0.0]))
        assert y.data.shape == (1, 1, 1)
        assert y.data[0, 0, 0] == 10.0

    def test_random_against_loop_oracle(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(3, 8, 8))
        w = rng.normal(size=(4, 3, 3, 3))
        b = rng.normal(size=4)
        y = ad.conv2d(tensor(x), tensor(w), tensor(b))
        assert np.max(np.abs(y.data - conv2d_reference(x, w, b))) <= 1e-12

    def test_output_shape_formula(self):
        y = ad.conv2d(tensor(np.zeros((2, 10, 9))), tensor(np.zeros((1, 2, 3, 3))), tensor([0.0]), stride=2, padding=1)
        # floor((H + 2p - k)/s) + 1
        assert y.data.shape == (1, (10 + 2 - 3) // 2 + 1, (9 + 2 - 3) // 2 + 1)

    def test_channel_mismatch_raises(self):
        with pytest.raises(ShapeError):
            ad.conv2d(tensor(np.zeros((2, 4, 4))), tensor(np.zeros((1, 3, 2, 2))), tensor([0.0]))

    def test_kernel_larger_than_padded_input_raises(self):
        with pytest.raises(ShapeError):
            ad.conv2d(tensor(np.zeros((1, 3, 3))), tensor(np.zeros((1, 1, 5, 5))), tensor([0.0]))


class TestMaxPool:
    def test_constant_input(self):
        y = ad.max_pool2d(tensor(np.full((2, 4, 4), 3.5)), 2)
        assert np.array_equal(y.data, np.full((2, 2, 2), 3.5))

    def test_two_by_two(self):
        y = ad.max_pool2d(tensor([[[1.0, 2.0], [3.0, 4.0]]]), 2)
        assert y.data[0, 0, 0] == 4.0

    def test_random_against_loop_oracle(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(2, 6, 6))
        y = ad.max_pool2d(tensor(x), 2, 2)
        assert np.array_equal(y.data, maxpool_reference(x, 2, 2))

    def test_window_exceeds_input_raises(self):
        with pytest.raises(ShapeError):
            ad.max_pool2d(tensor(np.zeros((1, 3, 3))), 4)

    def test_tie_gradient_goes_to_first_cell(self):
        x = tensor(np.full((1, 2, 2), 1.0), grad=True)
        ad.max_pool2d(x, 2).sum().backward()
        assert np.array_equal(x.grad, [[[1.0, 0.0], [0.0, 0.0]]])


class TestDense:
    def test_identity_weight(self):
        x = tensor([1.0, -2.0, 3.0])
        y = ad.dense(x, tensor(np.eye(3)), tensor(np.zeros(3)))
        assert np.array_equal(y.data, x.data)

    def test_zero_weight_gives_bias(self):
        y = ad.dense(tensor([1.0, 2.0]), tensor(np.zeros((4, 2))), tensor([5.0, 6.0, 7.0, 8.0]))
        assert np.array_equal(y.data, [5.0, 6.0, 7.0, 8.0])

    def test_random_against_loop_oracle(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=7)
        w = rng.normal(size=(4, 7))
        b = rng.normal(size=4)
        y = ad.dense(tensor(x), tensor(w), tensor(b))
        assert np.max(np.abs(y.data - dense_reference(x, w, b))) <= 1e-12

    def test_length_mismatch_raises(self):
        with pytest.raises(ShapeError):
            ad.dense(tensor(np.zeros(3)), tensor(np.zeros((2, 4))), tensor(np.zeros(2)))


class TestSigmoid:
    def test_zero_is_half(self):
        assert ad.sigmoid(tensor([0.0])).data[0] == 0.5

    def test_symmetry(self):
        z = np.linspace(-30, 30, 101)
        s = ad.sigmoid(tensor(z)).data
        s_neg = ad.sigmoid(tensor(-z)).data
        assert np.max(np.abs(s + s_neg - 1.0)) <= 1e-12
        assert np.all(np.diff(s) > 0)

    def test_ln3_is_three_quarters(self):
        assert ad.sigmoid(tensor([math.log(3.0)])).data[0] == pytest.approx(0.75, abs=1e-15)

    def test_stable_at_extremes(self):
        # saturated values round to the interval endpoints in float64 but
        # must never overflow to inf/nan
        s = ad.sigmoid(tensor([700.0, -700.0])).data
        assert np.all(np.isfinite(s))
        assert 0.0 < s[1] <= s[0] <= 1.0

    def test_strictly_inside_unit_interval_for_moderate_logits(self):
        s = ad.sigmoid(tensor(np.linspace(-30, 30, 41))).data
        assert np.all((s > 0.0) & (s < 1.0))


class TestBceSumLoss:
    def test_zero_logits_any_target(self):
        for target in ([0, 0, 0, 0, 0], [1, 1, 1, 1, 1], [1, 0, 1, 0, 1]):
            loss = ad.bce_sum_loss(tensor(np.zeros(5)), np.array(target, dtype=float))
            assert float(loss.data) == pytest.approx(5 * math.log(2.0), abs=1e-12)

    def test_hand_evaluated_point(self):
        loss = ad.bce_sum_loss(tensor([math.log(3.0)]), np.array([1.0]))
        assert float(loss.data) == pytest.approx(-math.log(0.75), abs=1e-12)

    def test_saturated_correct_is_tiny_and_finite(self):
        loss = ad.bce_sum_loss(tensor([40.0, -40.0]), np.array([1.0, 0.0]))
        assert math.isfinite(float(loss.data))
        assert float(loss.data) < 1e-15

    def test_nonbinary_target_rejected(self):
        with pytest.raises(ValidationError):
            ad.bce_sum_loss(tensor([0.0]), np.array([0.5]))

    def test_additivity_over_label_blocks(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            z1, z2 = rng.normal(size=6), rng.normal(size=9)
            y1 = (rng.random(6) < 0.5).astype(float)
            y2 = (rng.random(9) < 0.5).astype(float)
            whole = float(ad.bce_sum_loss(tensor(np.r_[z1, z2]), np.r_[y1, y2]).data)
            parts = float(ad.bce_sum_loss(tensor(z1), y1).data) + float(ad.bce_sum_loss(tensor(z2), y2).data)
            assert whole == pytest.approx(parts, abs=1e-12)

    def test_batch_reduction_is_mean_of_row_sums(self):
        rng = np.random.default_rng(4)
        z = rng.normal(size=(3, 4))
        y = (rng.random((3, 4)) < 0.5).astype(float)
        batch = float(ad.bce_sum_loss(tensor(z), y).data)
        rows = [float(ad.bce_sum_loss(tensor(z[i]), y[i]).data) for i in range(3)]
        assert batch == pytest.approx(np.mean(rows), abs=1e-12)

    def test_loss_nonnegative(self):
        rng = np.random.default_rng(5)
        z = rng.normal(size=50) * 10
        y = (rng.random(50) < 0.5).astype(float)
        assert float(ad.bce_sum_loss(tensor(z), y).data) >= 0.0


class TestBackward:
    def test_loss_equals_parameter(self):
        w = tensor(np.array(2.5), grad=True)
        w.sum().backward()
        assert w.grad == 1.0

    def test_sigmoid_grad_at_zero(self):
        w = tensor(np.array([0.0]), grad=True)
        ad.sigmoid(w).sum().backward()
        assert w.grad[0] == pytest.approx(0.25, abs=1e-15)

    def test_nonscalar_backward_rejected(self):
        with pytest.raises(GraphError):
            tensor([1.0, 2.0], grad=True).backward()

    def test_fan_in_accumulates(self):
        w = tensor(np.array([3.0]), grad=True)
        (w + w).sum().backward()
        assert w.grad[0] == 2.0

    def test_repeated_backward_accumulates_per_policy(self):
        w = tensor(np.array([1.0]), grad=True)
        loss = w.sum()
        loss.backward()
        loss.backward()
        assert w.grad[0] == 2.0
        w.zero_grad()
        assert w.grad is None

    def test_backward_determinism_bitwise(self):
        def run():
            rng = np.random.default_rng(17)
            x = tensor(rng.normal(size=(2, 3, 8, 9)))
            w = tensor(rng.normal(size=(4, 3, 3, 3)), grad=True)
            b = tensor(rng.normal(size=4), grad=True)
            y = ad.max_pool2d(ad.relu(ad.conv2d(x, w, b, padding=1)), 2)
            loss = ad.bce_sum_loss(
                y.reshape(2, -1), (rng.random((2, y.data.size // 2)) < 0.5).astype(float)
            )
            loss.backward()
            return w.grad.copy(), b.grad.copy()

        g1, g2 = run(), run()
        assert np.array_equal(g1[0], g2[0]) and np.array_equal(g1[1], g2[1])


class TestFiniteDiffGradcheck:
    def test_linear_function_is_nearly_exact(self):
        w = tensor(np.array([1.0, -2.0, 0.5]), grad=True)

        def loss_fn():
            return (w * tensor([3.0, 1.0, -1.0])).sum()

        err = ad.finite_diff_gradcheck(loss_fn, [w], h=1e-5)
        assert err <= 1e-10

    def test_dense_sigmoid_bce_net(self):
        rng = np.random.default_rng(6)
        w = tensor(rng.normal(size=(3, 5)) * 0.5, grad=True)
        b = tensor(rng.normal(size=3) * 0.1, grad=True)
        x = rng.normal(size=5)
        y = np.array([1.0, 0.0, 1.0])

        def loss_fn():
            return ad.bce_sum_loss(ad.dense(tensor(x), w, b), y)

        err = ad.finite_diff_gradcheck(loss_fn, [w, b], h=1e-5, samples_per_param=8, rng=np.random.default_rng(0))
        assert err <= 1e-6

    def test_conv_pool_dense_net(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(2, 6, 7))
        cw = tensor(rng.normal(size=(3, 2, 3, 3)) * 0.4, grad=True)
        cb = tensor(rng.normal(size=3) * 0.1, grad=True)
        flat = 3 * 3 * 3
        dw = tensor(rng.normal(size=(2, flat)) * 0.3, grad=True)
        db = tensor(rng.normal(size=2) * 0.1, grad=True)
        y = np.array([1.0, 0.0])

        def loss_fn():
            t = ad.max_pool2d(ad.relu(ad.conv2d(tensor(x), cw, cb, padding=1)), 2)
            t = ad.dense(t.reshape(flat), dw, db)
            return ad.bce_sum_loss(t, y)

        err = ad.finite_diff_gradcheck(
            loss_fn, [cw, cb, dw, db], h=1e-5, samples_per_param=6, rng=np.random.default_rng(1)
        )
        assert err <= 1e-4


class TestForwardFiniteness:
    def test_extreme_but_finite_inputs_stay_finite(self):
        x = tensor(np.array([[700.0, -700.0], [1e300, -1e300]]))
        assert np.isfinite(ad.sigmoid(x).data).all()
        assert np.isfinite(ad.relu(x).data).all()

    def test_oracle_match_on_many_random_shapes(self):
        rng = np.random.default_rng(8)
        for _ in range(100):
            kind = rng.integers(0, 3)
            if kind == 0:
                c, f, k = int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(1, 3))
                h = int(rng.integers(k, k + 5))
                w = int(rng.integers(k, k + 5))
                x = rng.normal(size=(c, h, w))
                wt = rng.normal(size=(f, c, k, k))
                b = rng.normal(size=f)
                got = ad.conv2d(tensor(x), tensor(wt), tensor(b)).data
                assert np.max(np.abs(got - conv2d_reference(x, wt, b))) <= 1e-12
            elif kind == 1:
                c = int(rng.integers(1, 4))
                win = int(rng.integers(1, 4))
                h = int(rng.integers(win, win + 5))
                w = int(rng.integers(win, win + 5))
                s = int(rng.integers(1, 3))
                x = rng.normal(size=(c, h, w))
                got = ad.max_pool2d(tensor(x), win, s).data
                assert np.array_equal(got, maxpool_reference(x, win, s))
            else:
                m, n = int(rng.integers(1, 6)), int(rng.integers(1, 6))
                x = rng.normal(size=n)
                wt = rng.normal(size=(m, n))
                b = rng.normal(size=m)
                got = ad.dense(tensor(x), tensor(wt), tensor(b)).data
                assert np.max(np.abs(got - dense_reference(x, wt, b))) <= 1e-12
