import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import lmkit.tensor as T
from lmkit.tensor import ShapeError, Tensor

from fixtures import conv2d_naive


class TestTensorType:
    def test_rank_bounds(self):
        with pytest.raises(ShapeError):
            Tensor(np.zeros(()))
        with pytest.raises(ShapeError):
            Tensor(np.zeros((1,) * 7))
        assert Tensor(np.zeros((1,) * 6)).rank == 6

    def test_extents_positive(self):
        with pytest.raises(ShapeError):
            Tensor(np.zeros((2, 0)))

    def test_immutable(self):
        t = Tensor([1.0, 2.0])
        with pytest.raises(ValueError):
            t.data[0] = 5.0

    def test_f16_storage_upcasts_on_arithmetic(self):
        a = Tensor([1.0, 2.0], dtype="f16")
        b = Tensor([0.5, 0.5], dtype="f16")
        out = T.add(a, b)
        assert a.dtype == "f16" and out.dtype == "f32"

    def test_f16_round_trip_ulp_bound(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(-100, 100, size=1000).astype(np.float32)
        back = Tensor(Tensor(x, dtype="f16").data).astype("f32").data
        # half precision: 11-bit significand in the normal range
        assert (np.abs(back - x) <= np.abs(x) * 2.0 ** -11 + 1e-7).all()


class TestConv2d:
    def test_scalar_case(self):
        out = T.conv2d(Tensor([[[1.0]]]), Tensor([[[[2.0]]]]), bias=Tensor([3.0]))
        assert out.data.tolist() == [[[5.0]]]

    def test_identity_kernel(self):
        rng = np.random.default_rng(1)
        x = Tensor(rng.standard_normal((2, 5, 7)).astype(np.float32))
        w = np.zeros((2, 2, 3, 3), np.float32)
        w[0, 0, 1, 1] = 1.0
        w[1, 1, 1, 1] = 1.0
        out = T.conv2d(x, Tensor(w), padding=(1, 1))
        np.testing.assert_array_equal(out.data, x.data)

    def test_matches_naive_loop(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((4, 8, 8)).astype(np.float32)
        w = rng.standard_normal((6, 4, 3, 3)).astype(np.float32)
        got = T.conv2d(Tensor(x), Tensor(w)).data
        want = conv2d_naive(x, w)
        assert np.abs(got - want).max() < 1e-6

    @pytest.mark.parametrize("stride,padding", [((1, 1), (0, 0)), ((2, 2), (1, 1)), ((2, 1), (0, 1))])
    def test_strided_padded_vs_naive(self, stride, padding):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((3, 9, 11)).astype(np.float32)
        w = rng.standard_normal((5, 3, 3, 3)).astype(np.float32)
        b = rng.standard_normal(5).astype(np.float32)
        got = T.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, padding=padding).data
        want = conv2d_naive(x, w, b, stride=stride, padding=padding)
        assert got.shape == want.shape
        assert np.abs(got - want).max() < 1e-6

    def test_output_size_law(self):
        x = Tensor(np.zeros((1, 10, 10), np.float32))
        w = Tensor(np.zeros((1, 1, 3, 3), np.float32))
        assert T.conv2d(x, w, stride=(2, 2), padding=(1, 1)).shape == (1, 5, 5)

    def test_depthwise_equals_per_channel(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((5, 8, 8)).astype(np.float32)
        w = rng.standard_normal((5, 1, 3, 3)).astype(np.float32)
        got = T.conv2d(Tensor(x), Tensor(w), groups=5, padding=(1, 1)).data
        for c in range(5):
            single = T.conv2d(Tensor(x[c:c + 1]), Tensor(w[c:c + 1]), padding=(1, 1)).data
            np.testing.assert_array_equal(got[c:c + 1], single)

    def test_grouped_vs_naive(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((4, 6, 6)).astype(np.float32)
        w = rng.standard_normal((6, 2, 3, 3)).astype(np.float32)
        got = T.conv2d(Tensor(x), Tensor(w), groups=2, padding=(1, 1)).data
        want = conv2d_naive(x, w, padding=(1, 1), groups=2)
        assert np.abs(got - want).max() < 1e-6

    def test_shape_errors_name_axis(self):
        x = Tensor(np.zeros((5, 4, 4), np.float32))
        w = Tensor(np.zeros((4, 2, 3, 3), np.float32))
        with pytest.raises(ShapeError, match="axis 0"):
            T.conv2d(x, w, groups=2)
        w_bad = Tensor(np.zeros((4, 3, 3, 3), np.float32))
        with pytest.raises(ShapeError, match="axis 1"):
            T.conv2d(x, w_bad, groups=1)
        with pytest.raises(ShapeError, match="bias"):
            T.conv2d(Tensor(np.zeros((2, 4, 4), np.float32)),
                     Tensor(np.zeros((3, 2, 1, 1), np.float32)),
                     bias=Tensor(np.zeros(2, np.float32)))


class TestInstanceNorm:
    def test_constant_channel_is_zeroed(self):
        x = Tensor(np.full((2, 4, 4), 7.0, np.float32))
        out = T.instance_norm(x, Tensor(np.ones(2)), Tensor(np.zeros(2)))
        np.testing.assert_allclose(out.data, 0.0, atol=1e-6)

    def test_gamma_zero_beta_five(self):
        rng = np.random.default_rng(6)
        x = Tensor(rng.standard_normal((3, 4, 4)).astype(np.float32))
        out = T.instance_norm(x, Tensor(np.zeros(3)), Tensor(np.full(3, 5.0)))
        np.testing.assert_allclose(out.data, 5.0, atol=1e-6)

    def test_moments_after_normalization(self):
        rng = np.random.default_rng(7)
        x = Tensor((rng.standard_normal((3, 4, 4)) * 3 + 1).astype(np.float32))
        out = T.instance_norm(x, Tensor(np.ones(3)), Tensor(np.zeros(3)), eps=1e-9).data
        mu = out.mean(axis=(1, 2))
        var = out.var(axis=(1, 2))
        assert np.abs(mu).max() < 1e-6
        assert np.abs(var - 1).max() < 1e-5


class TestActivations:
    def test_sigmoid_zero(self):
        assert T.sigmoid(Tensor([0.0])).data[0] == 0.5

    def test_relu(self):
        np.testing.assert_array_equal(T.relu(Tensor([-3.0, 3.0])).data, [0.0, 3.0])

    def test_silu_scalar(self):
        # x * sigmoid(x) at x=1, from the definition
        want = 1.0 / (1.0 + np.exp(-1.0))
        assert abs(T.silu(Tensor([1.0])).data[0] - want) < 1e-7

    def test_sigmoid_extreme_values_stable(self):
        out = T.sigmoid(Tensor([-1e4, 1e4])).data
        assert out[0] == 0.0 and out[1] == 1.0 and np.isfinite(out).all()


class TestShapeOps:
    def test_reshape_round_trip(self):
        x = Tensor([[1.0, 2, 3], [4, 5, 6]])
        back = T.reshape(T.reshape(x, (3, 2)), (2, 3))
        np.testing.assert_array_equal(back.data, x.data)

    def test_reshape_count_mismatch(self):
        with pytest.raises(ShapeError, match="reshape"):
            T.reshape(Tensor([[1.0, 2]]), (3,))

    def test_permute_involution(self):
        x = Tensor([[1.0, 2], [3, 4]])
        np.testing.assert_array_equal(T.permute(T.permute(x, (1, 0)), (1, 0)).data, x.data)

    def test_permute_index_oracle(self):
        rng = np.random.default_rng(8)
        x = rng.standard_normal((3, 4, 5, 2)).astype(np.float32)
        order = (2, 0, 3, 1)
        out = T.permute(Tensor(x), order).data
        for _ in range(100):
            idx = tuple(int(rng.integers(0, e)) for e in out.shape)
            src = tuple(idx[order.index(a)] for a in range(4))
            assert out[idx] == x[src]

    def test_permute_invalid_order(self):
        with pytest.raises(ShapeError, match="permutation"):
            T.permute(Tensor([[1.0]]), (0, 0))

    def test_split_concat_round_trip(self):
        rng = np.random.default_rng(9)
        x = Tensor(rng.standard_normal((2, 6, 3)).astype(np.float32))
        parts = T.split(x, 1, 3)
        assert [p.shape for p in parts] == [(2, 2, 3)] * 3
        np.testing.assert_array_equal(T.concat(parts, 1).data, x.data)
        sized = T.split(x, 1, [1, 2, 3])
        assert [p.shape[1] for p in sized] == [1, 2, 3]

    def test_concat_mismatch_names_axis(self):
        a = Tensor(np.zeros((2, 3), np.float32))
        b = Tensor(np.zeros((3, 3), np.float32))
        with pytest.raises(ShapeError, match="axis 0"):
            T.concat([a, b], 1)

    def test_squeeze_unsqueeze(self):
        x = Tensor(np.zeros((2, 1, 3), np.float32))
        assert T.squeeze(x, 1).shape == (2, 3)
        assert T.unsqueeze(x, 0).shape == (1, 2, 1, 3)
        with pytest.raises(ShapeError):
            T.squeeze(x, 0)

    @given(st.permutations(list(range(4))))
    @settings(max_examples=25, deadline=None)
    def test_permute_preserves_multiset(self, order):
        rng = np.random.default_rng(10)
        x = rng.standard_normal((2, 3, 4, 5)).astype(np.float32)
        out = T.permute(Tensor(x), order).data
        assert sorted(out.reshape(-1)) == sorted(x.reshape(-1))


class TestUpsample:
    def test_nearest_1x1_to_4x4(self):
        out = T.upsample(Tensor([[[3.5]]]), (4, 4), mode="nearest")
        np.testing.assert_array_equal(out.data, np.full((1, 4, 4), 3.5, np.float32))

    @pytest.mark.parametrize("mode", ["nearest", "bilinear"])
    def test_same_size_identity(self, mode):
        rng = np.random.default_rng(11)
        x = Tensor(rng.standard_normal((2, 2, 2)).astype(np.float32))
        np.testing.assert_allclose(T.upsample(x, (2, 2), mode=mode).data, x.data, atol=1e-7)

    def test_bilinear_2x2_to_4x4_oracle(self):
        x = np.array([[[0.0, 1.0], [2.0, 3.0]]], np.float32)
        got = T.upsample(Tensor(x), (4, 4), mode="bilinear").data
        want = np.empty((1, 4, 4))
        for i in range(4):
            for j in range(4):
                sy = min(max((i + 0.5) * 0.5 - 0.5, 0.0), 1.0)
                sx = min(max((j + 0.5) * 0.5 - 0.5, 0.0), 1.0)
                y0, x0 = int(np.floor(sy)), int(np.floor(sx))
                y1, x1 = min(y0 + 1, 1), min(x0 + 1, 1)
                fy, fx = sy - y0, sx - x0
                want[0, i, j] = (x[0, y0, x0] * (1 - fy) * (1 - fx) + x[0, y0, x1] * (1 - fy) * fx
                                 + x[0, y1, x0] * fy * (1 - fx) + x[0, y1, x1] * fy * fx)
        np.testing.assert_allclose(got, want, atol=1e-6)

    def test_downscale_rejected(self):
        with pytest.raises(ShapeError, match="downscal"):
            T.upsample(Tensor(np.zeros((1, 4, 4), np.float32)), (2, 4))


class TestReductions:
    def test_softmax_uniform(self):
        np.testing.assert_allclose(T.softmax(Tensor([0.0, 0.0, 0.0]), 0).data,
                                   [1 / 3] * 3, atol=1e-7)

    def test_softmax_sums_to_one(self):
        rng = np.random.default_rng(12)
        x = Tensor(rng.standard_normal((4, 7)).astype(np.float32) * 10)
        s = T.softmax(x, 1).data.sum(axis=1)
        assert np.abs(s - 1).max() < 1e-6
        assert (T.softmax(x, 1).data >= 0).all()

    def test_sum_left_to_right_order(self):
        # pairwise summation would lose the +1 against 1e8
        x = Tensor(np.array([1e8, 1.0, -1e8, 1.0], np.float32))
        assert T.sum_(x).data[0] == 1.0

    def test_sum_axis(self):
        x = Tensor(np.arange(6, dtype=np.float32).reshape(2, 3))
        np.testing.assert_array_equal(T.sum_(x, 0).data, [3.0, 5.0, 7.0])
        np.testing.assert_array_equal(T.sum_(x, 1).data, [3.0, 12.0])

    def test_matmul_identity(self):
        rng = np.random.default_rng(13)
        m = rng.standard_normal((3, 5)).astype(np.float32)
        np.testing.assert_allclose(T.matmul_batched(Tensor(np.eye(3, dtype=np.float32)),
                                                    Tensor(m)).data, m, atol=1e-7)

    def test_matmul_inner_mismatch(self):
        with pytest.raises(ShapeError, match="inner"):
            T.matmul_batched(Tensor(np.zeros((2, 3), np.float32)),
                             Tensor(np.zeros((4, 2), np.float32)))

    def test_broadcast_add_vs_loop(self):
        rng = np.random.default_rng(14)
        a = rng.standard_normal((3, 1, 1)).astype(np.float32)
        b = rng.standard_normal((3, 4, 5)).astype(np.float32)
        got = T.add(Tensor(a), Tensor(b)).data
        want = np.empty_like(b)
        for c in range(3):
            for i in range(4):
                for j in range(5):
                    want[c, i, j] = a[c, 0, 0] + b[c, i, j]
        np.testing.assert_array_equal(got, want)

    def test_non_broadcastable_rejected(self):
        with pytest.raises(ShapeError, match="broadcast"):
            T.add(Tensor(np.zeros((2, 3), np.float32)), Tensor(np.zeros((2, 4), np.float32)))
