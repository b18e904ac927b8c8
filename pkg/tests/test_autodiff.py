import numpy as np
import pytest
from scipy.signal import correlate

from vidstereo.autodiff import (
    ShapeError,
    Tensor,
    concat,
    conv,
    elementwise,
    getitem,
    grad_check,
    instance_norm,
    matmul,
    mean,
    no_grad,
    pad,
    reshape,
    resize_bilinear,
    softmax,
    stack,
    transpose,
    tsum,
    unfold,
    unfold3d,
    where,
)
from oracles import unfold_gather

SEEDS = range(5)


def t64(rng, *shape, low=None, high=None):
    if low is not None:
        return Tensor(rng.uniform(low, high, shape), requires_grad=True)
    return Tensor(rng.normal(size=shape), requires_grad=True)


def weighted_sum(out, rng):
    # random projection to a scalar so every output entry matters
    w = Tensor(rng.normal(size=out.shape))
    return tsum(out * w)


class TestElementwise:
    def test_sigmoid_tanh_at_zero(self):
        assert elementwise("sigmoid", Tensor([0.0])).data[0] == 0.5
        assert elementwise("tanh", Tensor([0.0])).data[0] == 0.0

    def test_add_and_grad(self):
        a = Tensor([1.0, 2.0], requires_grad=True)
        b = Tensor([3.0, 4.0], requires_grad=True)
        out = elementwise("add", a, b)
        np.testing.assert_array_equal(out.data, [4.0, 6.0])
        tsum(out).backward()
        np.testing.assert_array_equal(a.grad, [1.0, 1.0])
        np.testing.assert_array_equal(b.grad, [1.0, 1.0])

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4,\)"):
            elementwise("add", Tensor(np.zeros((2, 3))), Tensor(np.zeros(4)))

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            elementwise("cosh", Tensor([1.0]))

    def test_relu_values(self):
        np.testing.assert_array_equal(elementwise("relu", Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])

    @pytest.mark.parametrize("seed", SEEDS)
    @pytest.mark.parametrize("kind", ["add", "sub", "mul", "div"])
    def test_binary_grad_with_broadcast(self, kind, seed):
        rng = np.random.default_rng(seed)
        a = t64(rng, 3, 4, 5)
        b = t64(rng, 4, 1, low=0.5, high=2.0)
        assert grad_check(lambda x, y: weighted_sum(elementwise(kind, x, y), np.random.default_rng(9)), [a, b]) < 1e-5

    @pytest.mark.parametrize("seed", SEEDS)
    @pytest.mark.parametrize("kind", ["sigmoid", "tanh", "exp", "neg"])
    def test_unary_grad(self, kind, seed):
        rng = np.random.default_rng(seed)
        a = t64(rng, 4, 5)
        assert grad_check(lambda x: weighted_sum(elementwise(kind, x), np.random.default_rng(9)), [a]) < 1e-5

    @pytest.mark.parametrize("seed", SEEDS)
    def test_relu_grad_away_from_kink(self, seed):
        rng = np.random.default_rng(seed)
        data = rng.normal(size=(4, 5))
        data[np.abs(data) < 1e-3] = 0.5
        a = Tensor(data, requires_grad=True)
        assert grad_check(lambda x: weighted_sum(elementwise("relu", x), np.random.default_rng(9)), [a]) < 1e-5

    @pytest.mark.parametrize("seed", SEEDS)
    @pytest.mark.parametrize("kind", ["log", "sqrt", "abs"])
    def test_positive_domain_grad(self, kind, seed):
        rng = np.random.default_rng(seed)
        a = t64(rng, 3, 4, low=0.5, high=2.0)
        assert grad_check(lambda x: weighted_sum(elementwise(kind, x), np.random.default_rng(9)), [a]) < 1e-5


class TestShapeOps:
    @pytest.mark.parametrize("seed", SEEDS)
    def test_reductions_and_layout(self, seed):
        rng = np.random.default_rng(seed)
        a = t64(rng, 2, 3, 4)

        w = Tensor(rng.normal(size=4))

        def f(x):
            y = transpose(reshape(x, (6, 4)), (1, 0))
            return tsum(mean(y, axis=1) * w) + tsum(x[1, :, 2:] ** 2.0)

        assert grad_check(f, [a]) < 1e-5

    @pytest.mark.parametrize("seed", SEEDS)
    def test_concat_stack_matmul(self, seed):
        rng = np.random.default_rng(seed)
        a, b, c = t64(rng, 2, 3), t64(rng, 2, 2), t64(rng, 5, 4)

        def f(x, y, z):
            m = matmul(concat([x, y], axis=1), z)
            return weighted_sum(stack([m, m * 2.0], axis=0), np.random.default_rng(3))

        assert grad_check(f, [a, b, c]) < 1e-5

    def test_batched_matmul_broadcast_weight(self, rng):
        a, w = t64(rng, 3, 4, 5), t64(rng, 5, 2)
        assert grad_check(lambda x, y: weighted_sum(matmul(x, y), np.random.default_rng(1)), [a, w]) < 1e-5

    def test_fancy_getitem_accumulates(self):
        a = Tensor(np.arange(4.0), requires_grad=True)
        tsum(getitem(a, np.array([0, 0, 2]))).backward()
        np.testing.assert_array_equal(a.grad, [2.0, 0.0, 1.0, 0.0])

    def test_where_routes_gradient(self):
        a = Tensor([1.0, 2.0], requires_grad=True)
        b = Tensor([3.0, 4.0], requires_grad=True)
        tsum(where(np.array([True, False]), a, b)).backward()
        np.testing.assert_array_equal(a.grad, [1.0, 0.0])
        np.testing.assert_array_equal(b.grad, [0.0, 1.0])

    def test_reshape_error(self):
        with pytest.raises(ShapeError):
            reshape(Tensor(np.zeros(6)), (4, 2))

    def test_matmul_inner_dim_error(self):
        with pytest.raises(ShapeError):
            matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


class TestGraph:
    def test_shared_subexpression_visited_once(self):
        a = Tensor([3.0], requires_grad=True)
        b = a * a
        c = b + b
        c.backward()
        np.testing.assert_allclose(a.grad, [12.0])

    def test_every_reachable_leaf_gets_grad(self, rng):
        a, b = t64(rng, 3), t64(rng, 3)
        unused_path = a * 0.0
        (tsum(a * b) + tsum(unused_path)).backward()
        assert a.grad is not None and b.grad is not None
        assert a.grad.shape == a.shape

    def test_no_grad_records_nothing(self, rng):
        a = t64(rng, 3)
        with no_grad():
            out = a * 2.0
        assert not out.requires_grad

    def test_deep_chain_no_recursion_limit(self):
        a = Tensor([1.0], requires_grad=True)
        x = a
        for _ in range(5000):
            x = x + 1.0
        x.backward()
        assert a.grad[0] == 1.0

    def test_forward_is_deterministic(self):
        outs = []
        for _ in range(2):
            rng = np.random.default_rng(5)
            x = Tensor(rng.normal(size=(1, 2, 3, 6, 6)))
            w = Tensor(rng.normal(size=(4, 2, 3, 3, 3)))
            outs.append(conv(x, w, padding=1).data)
        assert np.array_equal(outs[0], outs[1])


class TestConv:
    def test_sum_of_ones(self):
        out = conv(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))))
        np.testing.assert_array_equal(out.data, [[[[9.0]]]])

    def test_identity_kernel(self, rng):
        x = rng.normal(size=(2, 1, 5, 6))
        k = np.zeros((1, 1, 3, 3))
        k[0, 0, 1, 1] = 1.0
        np.testing.assert_array_equal(conv(Tensor(x), Tensor(k), padding=1).data, x)

    @pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1), (2, 0)])
    def test_matches_scipy_correlate(self, rng, stride, padding):
        x = rng.normal(size=(2, 3, 7, 6))
        w = rng.normal(size=(4, 3, 3, 3))
        out = conv(Tensor(x), Tensor(w), stride=stride, padding=padding).data
        xp = np.pad(x, [(0, 0), (0, 0), (padding, padding), (padding, padding)])
        for b in range(2):
            for o in range(4):
                ref = correlate(xp[b], w[o], mode="valid")[0][::stride, ::stride]
                np.testing.assert_allclose(out[b, o], ref, atol=1e-12)

    def test_output_size_formula(self, rng):
        x = Tensor(rng.normal(size=(1, 1, 9, 8)))
        out = conv(x, Tensor(rng.normal(size=(1, 1, 3, 2))), stride=(2, 3), padding=(1, 0))
        assert out.shape[2:] == ((9 + 2 - 3) // 2 + 1, (8 - 2) // 3 + 1)

    def test_kernel_too_large(self, rng):
        with pytest.raises(ValueError, match="larger"):
            conv(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 3, 3))))

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            conv(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))

    @pytest.mark.parametrize("seed", SEEDS)
    def test_conv2d_gradient(self, seed):
        rng = np.random.default_rng(seed)
        x, w, b = t64(rng, 2, 3, 5, 5), t64(rng, 2, 3, 3, 3), t64(rng, 2)
        f = lambda x, w, b: weighted_sum(conv(x, w, b, stride=1, padding=1), np.random.default_rng(seed))
        assert grad_check(f, [x, w, b]) < 1e-5

    @pytest.mark.parametrize("seed", SEEDS)
    def test_strided_conv3d_gradient(self, seed):
        rng = np.random.default_rng(seed)
        x, w = t64(rng, 1, 2, 3, 5, 4), t64(rng, 2, 2, 3, 3, 3)
        f = lambda x, w: weighted_sum(conv(x, w, stride=(1, 2, 2), padding=1), np.random.default_rng(seed))
        assert grad_check(f, [x, w]) < 1e-5

    @pytest.mark.parametrize("seed", SEEDS)
    def test_separable_composition_gradient(self, seed):
        rng = np.random.default_rng(seed)
        x, ws, wt = t64(rng, 1, 2, 3, 4, 4), t64(rng, 3, 2, 1, 3, 3), t64(rng, 3, 3, 3, 1, 1)
        f = lambda x, a, b: weighted_sum(conv(conv(x, a, padding=(0, 1, 1)), b, padding=(1, 0, 0)),
                                         np.random.default_rng(seed))
        assert grad_check(f, [x, ws, wt]) < 1e-5


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3)

    def test_large_values_stable(self):
        np.testing.assert_array_equal(softmax(Tensor([1000.0, 1000.0])).data, [0.5, 0.5])

    def test_sums_to_one(self, rng):
        out = softmax(Tensor(rng.normal(size=7) * 10)).data
        assert abs(out.sum() - 1.0) <= 1e-12
        assert np.all((out > 0) & (out < 1))

    def test_axis_out_of_range(self):
        with pytest.raises(ValueError):
            softmax(Tensor(np.zeros((2, 3))), axis=2)

    def test_sum_of_softmax_has_zero_gradient(self, rng):
        a = t64(rng, 6)
        tsum(softmax(a)).backward()
        assert np.abs(a.grad).max() < 1e-9

    @pytest.mark.parametrize("seed", SEEDS)
    def test_gradient(self, seed):
        rng = np.random.default_rng(seed)
        a = t64(rng, 3, 5)
        assert grad_check(lambda x: weighted_sum(softmax(x, axis=0), np.random.default_rng(seed)), [a]) < 1e-5


class TestInstanceNorm:
    def test_moments(self, rng):
        x = Tensor(rng.normal(3.0, 2.0, size=(2, 4, 3, 5, 6)))
        out = instance_norm(x).data
        np.testing.assert_allclose(out.mean(axis=(-2, -1)), 0.0, atol=1e-12)
        np.testing.assert_allclose(out.var(axis=(-2, -1)), 1.0, atol=1e-3)

    def test_affine_invariance(self, rng):
        x = rng.normal(size=(1, 2, 2, 4, 4))
        a = instance_norm(Tensor(x), eps=0.0).data
        b = instance_norm(Tensor(5.0 * x - 7.0), eps=0.0).data
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_constant_map_is_zero(self):
        out = instance_norm(Tensor(np.full((1, 1, 1, 3, 3), 4.0))).data
        assert np.all(out == 0.0)

    @pytest.mark.parametrize("seed", SEEDS)
    def test_gradient(self, seed):
        rng = np.random.default_rng(seed)
        a = t64(rng, 2, 3, 2, 3, 4)
        f = lambda x: weighted_sum(instance_norm(x), np.random.default_rng(seed + 100))
        assert grad_check(f, [a]) < 1e-5


class TestUnfold:
    def test_constant_field(self):
        out = unfold3d(Tensor(np.full((1, 1, 2, 3, 3), 2.5))).data
        assert out.shape == (1, 1, 27, 2, 3, 3)
        assert np.all(out == 2.5)

    def test_single_frame_replicates_in_time(self, rng):
        x = rng.normal(size=(1, 2, 1, 3, 4))
        out = unfold3d(Tensor(x)).data
        np.testing.assert_array_equal(out[:, :, 0:9], out[:, :, 9:18])
        np.testing.assert_array_equal(out[:, :, 18:27], out[:, :, 9:18])

    def test_center_channel_is_identity(self, rng):
        x = rng.normal(size=(2, 3, 3, 4, 5))
        np.testing.assert_array_equal(unfold3d(Tensor(x)).data[:, :, 13], x)

    def test_matches_gather_oracle(self, rng):
        x = rng.normal(size=(1, 1, 3, 4, 4))
        np.testing.assert_array_equal(unfold3d(Tensor(x)).data, unfold_gather(x))

    def test_spatial_only_kernel(self, rng):
        x = rng.normal(size=(1, 2, 2, 3, 3))
        np.testing.assert_array_equal(unfold(Tensor(x), (1, 3, 3)).data, unfold_gather(x, (1, 3, 3)))

    @pytest.mark.parametrize("seed", SEEDS)
    def test_gradient(self, seed):
        rng = np.random.default_rng(seed)
        a = t64(rng, 1, 2, 2, 3, 3)
        assert grad_check(lambda x: weighted_sum(unfold3d(x), np.random.default_rng(seed)), [a]) < 1e-5


class TestPadResize:
    @pytest.mark.parametrize("mode", ["zero", "edge"])
    @pytest.mark.parametrize("seed", SEEDS)
    def test_pad_gradient(self, mode, seed):
        rng = np.random.default_rng(seed)
        a = t64(rng, 3, 4)
        f = lambda x: weighted_sum(pad(x, [(1, 2), (0, 3)], mode), np.random.default_rng(seed))
        assert grad_check(f, [a]) < 1e-5

    def test_resize_reproduces_affine(self):
        y, x = np.mgrid[0:4, 0:5].astype(float)
        field = 2.0 * x - 0.5 * y + 1.0
        out = resize_bilinear(Tensor(field), (7, 9)).data
        yy, xx = np.meshgrid(np.linspace(0, 3, 7), np.linspace(0, 4, 9), indexing="ij")
        np.testing.assert_allclose(out, 2.0 * xx - 0.5 * yy + 1.0, atol=1e-12)

    @pytest.mark.parametrize("seed", SEEDS)
    def test_resize_gradient(self, seed):
        rng = np.random.default_rng(seed)
        a = t64(rng, 1, 3, 4)
        assert grad_check(lambda x: weighted_sum(resize_bilinear(x, (6, 8)), np.random.default_rng(seed)), [a]) < 1e-5


class TestGradCheck:
    def test_sum_of_squares(self, rng):
        a = t64(rng, 4, 3)
        assert grad_check(lambda x: tsum(x * x), [a]) < 1e-7

    def test_non_finite_raises(self):
        a = Tensor([-1.0], requires_grad=True)
        with np.errstate(invalid="ignore"), pytest.raises(FloatingPointError):
            grad_check(lambda x: tsum(elementwise("log", x)), [a])

    def test_detects_wrong_gradient(self, rng):
        from vidstereo.autodiff import make_result

        def bad_square(x):
            return make_result(x.data**2, (x,), lambda g: (g * x.data,), "bad")  # missing factor 2

        a = t64(rng, 3, low=0.5, high=1.0)
        assert grad_check(lambda x: tsum(bad_square(x)), [a]) > 0.4
