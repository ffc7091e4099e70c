"""Attention, sinusoidal encodings and box-modulated positional queries."""

import numpy as np

from cadet import diagnostics
from cadet import tensor as T
from cadet.attention import (
    BoxModulator,
    MultiHeadAttention,
    modulated_box_query,
    positional_embed_3d,
    sinusoidal_encoding,
)
from cadet.gradcheck import gradcheck
from cadet.tensor import Tensor


class TestSinusoidalEncoding:
    def test_bounded(self):
        x = Tensor(np.linspace(0, 1, 64))
        enc = sinusoidal_encoding(x, 16).data
        assert enc.shape == (64, 16)
        assert np.all(enc <= 1.0) and np.all(enc >= -1.0)

    def test_zero_coordinate(self):
        enc = sinusoidal_encoding(Tensor(np.array(0.0)), 8).data
        np.testing.assert_allclose(enc, [0, 1, 0, 1, 0, 1, 0, 1], atol=1e-15)

    def test_first_pair_injective_on_grid(self):
        # sin/cos of 2*pi*x is injective for x in [0, 1), so distinct grid
        # positions stay distinct
        n = 32
        coords = (np.arange(n) + 0.5) / n
        enc = sinusoidal_encoding(Tensor(coords), 4).data
        for i in range(n):
            for j in range(i + 1, n):
                assert np.abs(enc[i] - enc[j]).max() > 1e-6

    def test_odd_dim(self):
        enc = sinusoidal_encoding(Tensor(np.array([0.3])), 7).data
        assert enc.shape == (1, 7)

    def test_differentiable(self):
        x = Tensor(np.array([0.21, 0.53, 0.86]), requires_grad=True)
        err = gradcheck(lambda x: (sinusoidal_encoding(x, 8) ** 2.0).sum(), [x])
        assert err < 1e-6


class TestPositional3d:
    def test_shape_and_padding(self):
        emb = positional_embed_3d(2, 3, 4, 16)
        assert emb.shape == (2, 3, 4, 16)
        # 16 = 3*5 + 1: the last channel is zero padding
        assert np.all(emb[..., 15] == 0.0)
        assert np.any(emb[..., :15] != 0.0)

    def test_distinct_positions_distinct_rows(self):
        emb = positional_embed_3d(4, 8, 8, 12).reshape(-1, 12)
        rounded = np.round(emb, 9)
        unique = np.unique(rounded, axis=0)
        assert unique.shape[0] == emb.shape[0]

    def test_axis_blocks_depend_only_on_their_axis(self):
        emb = positional_embed_3d(3, 4, 5, 12)
        # t block constant across (y, x)
        assert np.all(emb[:, 0, 0, :4] == emb[:, 2, 3, :4])
        # y block constant across (t, x)
        assert np.all(emb[0, :, 0, 4:8] == emb[2, :, 4, 4:8])


class TestMultiHeadAttention:
    def _mha(self, rng, dq=8, dk=8, dv=6, dm=8, heads=2):
        return MultiHeadAttention(dq, dk, dv, dm, heads, rng)

    def test_rows_stochastic(self):
        rng = np.random.default_rng(50)
        mha = self._mha(rng)
        q = Tensor(rng.standard_normal((3, 5, 8)))
        k = Tensor(rng.standard_normal((3, 7, 8)))
        v = Tensor(rng.standard_normal((3, 7, 6)))
        _, attn = mha(q, k, v)
        assert attn.shape == (3, 5, 7)
        np.testing.assert_allclose(attn.data.sum(-1), 1.0, atol=1e-12)

    def test_single_key_collapses_to_value_projection(self):
        rng = np.random.default_rng(51)
        mha = self._mha(rng)
        q = Tensor(rng.standard_normal((4, 8)))
        k = Tensor(rng.standard_normal((1, 8)))
        v = Tensor(rng.standard_normal((1, 6)))
        out, attn = mha(q, k, v)
        np.testing.assert_array_equal(attn.data, np.ones((4, 1)))
        expected = mha.w_out(mha.w_v(v)).data
        np.testing.assert_allclose(out.data, np.broadcast_to(expected, out.shape), atol=1e-12)

    def test_key_permutation_equivariance(self):
        rng = np.random.default_rng(52)
        mha = self._mha(rng)
        q = Tensor(rng.standard_normal((5, 8)))
        k = rng.standard_normal((7, 8))
        v = rng.standard_normal((7, 6))
        perm = rng.permutation(7)
        out_a, attn_a = mha(q, Tensor(k), Tensor(v))
        out_b, attn_b = mha(q, Tensor(k[perm]), Tensor(v[perm]))
        np.testing.assert_allclose(attn_a.data[:, perm], attn_b.data, atol=1e-12)
        np.testing.assert_allclose(out_a.data, out_b.data, atol=1e-12)

    def test_query_permutation_equivariance(self):
        rng = np.random.default_rng(53)
        mha = self._mha(rng)
        q = rng.standard_normal((5, 8))
        k = Tensor(rng.standard_normal((7, 8)))
        v = Tensor(rng.standard_normal((7, 6)))
        perm = rng.permutation(5)
        out_a, attn_a = mha(Tensor(q), k, v)
        out_b, attn_b = mha(Tensor(q[perm]), k, v)
        np.testing.assert_allclose(out_a.data[perm], out_b.data, atol=1e-12)
        np.testing.assert_allclose(attn_a.data[perm], attn_b.data, atol=1e-12)

    def test_gradcheck(self):
        rng = np.random.default_rng(54)
        mha = self._mha(rng, dq=4, dk=4, dv=4, dm=4, heads=2)
        q = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        k = Tensor(rng.standard_normal((4, 4)), requires_grad=True)
        v = Tensor(rng.standard_normal((4, 4)), requires_grad=True)
        err = gradcheck(lambda q, k, v: (mha(q, k, v)[0] ** 2.0).sum(), [q, k, v])
        assert err < 1e-5


class TestBoxModulation:
    def test_unit_ratio_is_plain_pe(self):
        rng = np.random.default_rng(55)
        boxes = rng.uniform(0.2, 0.8, (6, 4))
        ref = Tensor(boxes[..., 2:4])  # reference equals actual size
        out = modulated_box_query(Tensor(boxes), ref, 16).data
        pe_x = sinusoidal_encoding(Tensor(boxes[..., 0]), 8).data
        pe_y = sinusoidal_encoding(Tensor(boxes[..., 1]), 8).data
        np.testing.assert_array_equal(out, np.concatenate([pe_x, pe_y], axis=-1))

    def test_wide_box_downweights_x_half(self):
        base = np.array([[0.5, 0.5, 0.2, 0.2]])
        wide = np.array([[0.5, 0.5, 0.8, 0.2]])
        ref = Tensor(np.full((1, 2), 0.2))
        out_base = modulated_box_query(Tensor(base), ref, 8).data
        out_wide = modulated_box_query(Tensor(wide), ref, 8).data
        assert np.abs(out_wide[0, :4]).sum() < np.abs(out_base[0, :4]).sum()
        np.testing.assert_allclose(out_wide[0, 4:], out_base[0, 4:], atol=1e-15)

    def test_collapsed_box_clamps_and_counts(self):
        diagnostics.reset()
        box = Tensor(np.array([[0.5, 0.5, 0.0, 1e-9]]))
        ref = Tensor(np.array([[1.0, 1.0]]))
        out = modulated_box_query(box, ref, 8)
        assert np.all(np.isfinite(out.data))
        assert diagnostics.counters["box_modulate.size_clamp"] == 2

    def test_modulator_gradcheck(self):
        rng = np.random.default_rng(56)
        mod = BoxModulator(8, rng)
        box = Tensor(rng.uniform(0.3, 0.7, (3, 4)), requires_grad=True)
        embed = Tensor(rng.standard_normal((3, 8)), requires_grad=True)
        err = gradcheck(lambda b, e: (mod(b, e) ** 2.0).sum(), [box, embed])
        assert err < 1e-5

    def test_zero_fc_gives_unit_reference(self):
        rng = np.random.default_rng(57)
        mod = BoxModulator(8, rng)
        mod.fc.weight.data[:] = 0.0
        mod.fc.bias.data[:] = 0.0
        ref = mod.reference_size(Tensor(np.zeros((2, 8))))
        np.testing.assert_array_equal(ref.data, np.ones((2, 2)))
