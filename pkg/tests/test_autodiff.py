import numpy as np
import pytest

from gazefield import autodiff as ad
from gazefield import gradcheck
from gazefield.errors import NumericError, ShapeError, TapeError


def conv2d_loop_oracle(x, w, bias=None, stride=1, padding=0):
    """Direct nested-loop convolution, independent of the library path."""
    n, c, h, wd = x.shape
    f, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((n, f, ho, wo))
    for ni in range(n):
        for fi in range(f):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for ci in range(c):
                        for ki in range(kh):
                            for kj in range(kw):
                                acc += xp[ni, ci, i * stride + ki, j * stride + kj] * w[fi, ci, ki, kj]
                    out[ni, fi, i, j] = acc
                    if bias is not None:
                        out[ni, fi, i, j] += bias[fi]
    return out


class TestForward:
    def test_conv2d_identity_kernel(self):
        x = ad.constant(np.ones((1, 1, 3, 3)))
        w = ad.constant(np.ones((1, 1, 1, 1)))
        out = ad.conv2d(x, w, stride=1, padding=0)
        np.testing.assert_array_equal(out.values, np.ones((1, 1, 3, 3)))

    def test_sigmoid_at_zero(self):
        out = ad.sigmoid(ad.constant(0.0))
        assert out.item() == pytest.approx(0.5, abs=1e-15)

    def test_conv2d_matches_loop_oracle(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((1, 2, 5, 5))
        w = rng.standard_normal((3, 2, 3, 3))
        got = ad.conv2d(ad.constant(x), ad.constant(w), stride=1, padding=1)
        expected = conv2d_loop_oracle(x, w, stride=1, padding=1)
        np.testing.assert_allclose(got.values, expected, atol=1e-9)

    @pytest.mark.parametrize("stride,padding", [(1, 0), (2, 1), (3, 2)])
    def test_conv2d_strides_and_padding(self, stride, padding):
        rng = np.random.default_rng(stride * 10 + padding)
        x = rng.standard_normal((2, 3, 7, 6))
        w = rng.standard_normal((4, 3, 3, 3))
        b = rng.standard_normal(4)
        got = ad.conv2d(ad.constant(x), ad.constant(w), ad.constant(b),
                        stride=stride, padding=padding)
        expected = conv2d_loop_oracle(x, w, b, stride=stride, padding=padding)
        np.testing.assert_allclose(got.values, expected, atol=1e-9)

    def test_upsample_nearest(self):
        x = ad.constant([[[[1.0, 2.0], [3.0, 4.0]]]])
        out = ad.upsample_nearest(x, 2)
        np.testing.assert_array_equal(
            out.values[0, 0],
            [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]])

    def test_l2_normalize_unit_length(self):
        rng = np.random.default_rng(3)
        x = ad.constant(rng.standard_normal((5, 2)) * 4)
        out = ad.l2_normalize(x)
        norms = np.linalg.norm(out.values, axis=-1)
        np.testing.assert_allclose(norms, 1.0, atol=1e-7)

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError, match="unknown operation"):
            ad.op_forward("fourier", [ad.constant(1.0)])

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            ad.add(ad.constant(np.ones((2, 3))), ad.constant(np.ones((4,))))
        with pytest.raises(ShapeError):
            ad.matmul(ad.constant(np.ones((2, 3))), ad.constant(np.ones((2, 3))))
        with pytest.raises(ShapeError):
            ad.conv2d(ad.constant(np.ones((1, 2, 4, 4))), ad.constant(np.ones((1, 3, 3, 3))))

    def test_non_finite_output_rejected(self):
        with pytest.raises(NumericError):
            ad.log(ad.constant([0.0, 1.0]))


class TestBackward:
    def test_sum_gradient_is_ones(self):
        x = ad.parameter([1.0, 2.0, 3.0])
        loss = ad.tensor_sum(x)
        ad.backward(loss)
        np.testing.assert_array_equal(x.grad, [1.0, 1.0, 1.0])

    def test_sigmoid_scaled_analytic(self):
        # loss = c * sigmoid(w)  =>  dloss/dw = c * s * (1 - s)
        w = ad.parameter(0.3)
        c = 1.7
        loss = ad.affine(ad.sigmoid(w), scale=c)
        ad.backward(loss)
        s = 1.0 / (1.0 + np.exp(-0.3))
        assert w.grad == pytest.approx(c * s * (1 - s), rel=1e-12)

    def test_two_layer_network_finite_differences(self):
        rng = np.random.default_rng(11)
        w1 = ad.parameter(rng.standard_normal((4, 6)) * 0.5)
        b1 = ad.parameter(rng.standard_normal(6) * 0.1)
        w2 = ad.parameter(rng.standard_normal((6, 2)) * 0.5)
        x = ad.constant(rng.standard_normal((3, 4)))

        def forward():
            h = ad.relu(ad.add(ad.matmul(x, w1), b1))
            return ad.mean(ad.sigmoid(ad.matmul(h, w2)))

        res = gradcheck.check_gradients("two_layer", forward, [w1, b1, w2])
        assert res.max_rel_error < 1e-4

    def test_every_op_kind_passes_gradcheck(self):
        for res in gradcheck.run_op_suite(seed=5):
            assert res.passed, f"{res.name}: rel error {res.max_rel_error:.3e}"

    def test_corrupted_gradient_is_caught(self):
        results = gradcheck.run_op_suite(seed=5, corrupt_kind="conv2d")
        failed = {r.name: r for r in results if not r.passed}
        assert set(failed) == {"conv2d"}

    def test_op_suite_covers_each_kind_once(self):
        names = [r.name for r in gradcheck.run_op_suite(seed=1)]
        assert names == list(ad.DIFFERENTIABLE_OPS)
        assert len(set(names)) == len(names)

    def test_unreachable_leaf_gets_zero_grad(self):
        x = ad.parameter([1.0, 2.0])
        y = ad.parameter([3.0, 4.0])
        _unused = ad.relu(y)
        loss = ad.tensor_sum(x)
        ad.backward(loss)
        np.testing.assert_array_equal(x.grad, [1.0, 1.0])
        np.testing.assert_array_equal(y.grad, [0.0, 0.0])

    def test_reachable_leaves_all_get_grads(self):
        # arbitrary composition: every requires_grad leaf ends up with a grad
        rng = np.random.default_rng(2)
        leaves = [ad.parameter(rng.standard_normal((2, 2))) for _ in range(4)]
        a = ad.add(leaves[0], leaves[1])
        b = ad.mul(ad.sigmoid(leaves[2]), a)
        c = ad.concat([b, leaves[3]], axis=0)
        loss = ad.mean(ad.relu(c))
        ad.backward(loss)
        assert all(l.grad is not None for l in leaves)

    def test_non_scalar_loss_rejected(self):
        x = ad.parameter([1.0, 2.0])
        y = ad.relu(x)
        with pytest.raises(ShapeError):
            ad.backward(y)
        ad.active_tape().clear()

    def test_tape_consumed_twice_rejected(self):
        x = ad.parameter([1.0, 2.0])
        loss = ad.tensor_sum(x)
        ad.backward(loss)
        with pytest.raises(TapeError):
            ad.backward(loss)

    def test_gradient_accumulates_across_backwards(self):
        x = ad.parameter([1.0, 2.0])
        ad.backward(ad.tensor_sum(x))
        ad.backward(ad.tensor_sum(x))
        np.testing.assert_array_equal(x.grad, [2.0, 2.0])

    def test_no_grad_disables_recording(self):
        x = ad.parameter([1.0])
        with ad.no_grad():
            y = ad.relu(x)
        assert not y.requires_grad
        assert len(ad.active_tape()) == 0

    def test_relu_subgradient_zero_at_zero(self):
        x = ad.parameter([0.0, -1.0, 2.0])
        ad.backward(ad.tensor_sum(ad.relu(x)))
        np.testing.assert_array_equal(x.grad, [0.0, 0.0, 1.0])


def test_determinism_identical_op_sequences():
    def run():
        rng = np.random.default_rng(99)
        w = ad.parameter(rng.standard_normal((3, 3)))
        x = ad.constant(rng.standard_normal((2, 3)))
        for _ in range(5):
            loss = ad.mean(ad.sigmoid(ad.matmul(x, w)))
            ad.backward(loss)
            w.values -= 0.1 * w.grad
            ad.zero_grads([w])
        return w.values.copy()

    a, b = run(), run()
    assert np.array_equal(a, b)
