import numpy as np
import pytest

from objseg.blocks import residual_conv_block
from objseg.errors import DimensionError, InputError
from objseg.pixmem import (
    MemoryFrame,
    PixelMemoryBank,
    affinity,
    deep_update,
    gather,
    insert,
    readout,
    register_pixel_memory_params,
    sensory_update,
    similarity,
)
from objseg.registry import ParamRegistry

from oracles import similarity_loops


def _reg(seed=0, c=8, d=6):
    reg = ParamRegistry(seed)
    register_pixel_memory_params(reg, c, d)
    return reg.freeze()


class TestSimilarity:
    def test_exact_match_is_row_maximum_zero(self):
        rng = np.random.default_rng(20)
        k = rng.standard_normal((6, 4)).astype(np.float32)
        q = k[2:3].copy()
        e = rng.random((1, 4)).astype(np.float32) * 0.9 + 0.1
        s = 1.0 + rng.random(6)
        d = similarity(q, e, k, s)
        assert abs(d[0, 2]) < 1e-6
        assert np.all(d <= 1e-6)
        assert d[0].argmax() == 2

    def test_unit_displacement_analytic(self):
        q = np.zeros((1, 3))
        k = np.array([[1.0, 0.0, 0.0]])
        d = similarity(q, np.ones((1, 3)), k, np.ones(1))
        np.testing.assert_allclose(d, [[-1.0]], atol=1e-9)

    def test_against_loop_oracle(self):
        rng = np.random.default_rng(21)
        for _ in range(5):
            q = rng.standard_normal((5, 6)).astype(np.float32)
            e = rng.random((5, 6)).astype(np.float32)
            k = rng.standard_normal((8, 6)).astype(np.float32)
            s = (1.0 + rng.random(8)).astype(np.float32)
            ref = similarity_loops(q, e, k, s)
            assert np.abs(similarity(q, e, k, s) - ref).max() < 1e-5

    def test_shape_errors(self):
        with pytest.raises(DimensionError):
            similarity(np.zeros((2, 3)), np.zeros((2, 4)), np.zeros((5, 3)), np.ones(5))
        with pytest.raises(DimensionError):
            similarity(np.zeros((2, 3)), np.zeros((2, 3)), np.zeros((5, 3)), np.ones(4))


class TestAffinity:
    def test_large_k_equals_plain_softmax(self):
        rng = np.random.default_rng(22)
        logits = rng.standard_normal((6, 10)).astype(np.float32)
        a = affinity(logits, 10)
        b = affinity(logits, 999)
        e = np.exp(logits.astype(np.float64) - logits.max(axis=1, keepdims=True))
        ref = e / e.sum(axis=1, keepdims=True)
        assert np.abs(a - ref).max() < 1e-6
        np.testing.assert_array_equal(a, b)

    def test_k_one_is_one_hot(self):
        rng = np.random.default_rng(23)
        logits = rng.standard_normal((7, 9))
        a = affinity(logits, 1)
        assert np.all(a.sum(axis=1) == 1.0)
        assert np.all((a == 1.0).sum(axis=1) == 1)
        np.testing.assert_array_equal(a.argmax(axis=1), logits.argmax(axis=1))

    def test_rows_sum_to_one_with_at_most_k_nonzeros(self):
        rng = np.random.default_rng(24)
        logits = rng.standard_normal((8, 20))
        a = affinity(logits, 5)
        np.testing.assert_allclose(a.sum(axis=1), 1.0, atol=1e-6)
        assert np.all((a > 0).sum(axis=1) <= 5)

    def test_kept_set_is_top_k(self):
        logits = np.array([[5.0, 1.0, 4.0, 2.0, 3.0]])
        a = affinity(logits, 2)
        assert set(np.flatnonzero(a[0] > 0)) == {0, 2}

    def test_invalid_k(self):
        with pytest.raises(InputError):
            affinity(np.zeros((2, 3)), 0)


class TestReadout:
    def test_zero_hidden_identity_fuse(self):
        c, h, w = 8, 3, 3
        reg = ParamRegistry(0)
        register_pixel_memory_params(reg, c, 6)
        zeroed = reg
        for block in ("block0", "block1"):
            zeroed = zeroed.with_param(f"pixel_memory.fuse.{block}.conv2.weight", np.zeros((c, c, 3, 3), np.float32))
            zeroed = zeroed.with_param(f"pixel_memory.fuse.{block}.conv2.bias", np.zeros(c, np.float32))
        rng = np.random.default_rng(25)
        a = affinity(rng.standard_normal((h * w, 5)), 999)
        v = rng.standard_normal((5, c)).astype(np.float32)
        out = readout(zeroed, a, v, np.zeros((c, h, w), np.float32), (h, w))
        assert np.abs(out - a @ v).max() < 1e-6

    def test_self_match_recovers_values(self):
        rng = np.random.default_rng(26)
        c, h, w, ck = 8, 2, 3, 4
        hw = h * w
        k = rng.standard_normal((hw, ck)).astype(np.float32)
        s = (1.0 + rng.random(hw)).astype(np.float32)
        e = (rng.random((hw, ck)) * 0.9 + 0.1).astype(np.float32)
        d = similarity(k, e, k, s)
        a = affinity(d, 1)
        np.testing.assert_array_equal(a, np.eye(hw))
        v = rng.standard_normal((hw, c)).astype(np.float32)
        reg = _reg(seed=27, c=c)
        zeroed = reg
        for block in ("block0", "block1"):
            zeroed = zeroed.with_param(f"pixel_memory.fuse.{block}.conv2.weight", np.zeros((c, c, 3, 3), np.float32))
        out = readout(zeroed, a, v, np.zeros((c, h, w), np.float32), (h, w))
        assert np.abs(out - v).max() < 1e-6

    def test_composed_op_oracle(self):
        rng = np.random.default_rng(28)
        c, h, w = 8, 3, 2
        reg = _reg(seed=29, c=c)
        a = affinity(rng.standard_normal((h * w, 7)), 4)
        v = rng.standard_normal((7, c)).astype(np.float32)
        hidden = rng.standard_normal((c, h, w)).astype(np.float32)
        x = (a @ v).T.reshape(c, h, w).astype(np.float32) + hidden
        x = residual_conv_block(reg, "pixel_memory.fuse.block0", x, channel_attention=True)
        x = residual_conv_block(reg, "pixel_memory.fuse.block1", x, channel_attention=True)
        ref = x.reshape(c, h * w).T
        out = readout(reg, a, v, hidden, (h, w))
        assert np.abs(out - ref).max() < 1e-5


def _frame(i, hw=4, ck=3, c=4, objects=(1,), rng=None):
    rng = rng or np.random.default_rng(i)
    return MemoryFrame(
        frame_index=i,
        k=rng.standard_normal((hw, ck)).astype(np.float32),
        s=(1.0 + rng.random(hw)).astype(np.float32),
        values={o: rng.standard_normal((hw, c)).astype(np.float32) for o in objects},
    )


class TestBankPolicy:
    def test_first_insert_pinned(self):
        bank = PixelMemoryBank(t_max=3)
        insert(bank, _frame(0))
        assert bank.contents() == [(0, True)]

    def test_fifo_keeps_first_frame(self):
        bank = PixelMemoryBank(t_max=3)
        for i in range(5):
            insert(bank, _frame(i))
        assert [i for i, _ in bank.contents()] == [0, 3, 4]

    def test_ten_inserts_tmax_three(self):
        bank = PixelMemoryBank(t_max=3)
        for i in range(10):
            insert(bank, _frame(i))
        assert [i for i, _ in bank.contents()] == [0, 8, 9]

    def test_permanent_survives_churn(self):
        bank = PixelMemoryBank(t_max=3)
        insert(bank, _frame(0))
        insert(bank, _frame(7), pinned=True)
        for i in range(8, 28):
            insert(bank, _frame(i))
        kept = dict(bank.contents())
        assert kept[0] and kept[7]
        assert len(bank.frames) == 3

    def test_capacity_after_warmup(self):
        bank = PixelMemoryBank(t_max=4)
        for i in range(12):
            insert(bank, _frame(i))
            assert len(bank.frames) <= 4

    def test_mismatched_frame_rejected(self):
        bank = PixelMemoryBank(t_max=3)
        insert(bank, _frame(0, hw=4))
        with pytest.raises(DimensionError):
            insert(bank, _frame(1, hw=6))


class TestGather:
    def test_concatenates_in_frame_order(self):
        bank = PixelMemoryBank(t_max=4)
        frames = [_frame(i, objects=(1, 2)) for i in range(3)]
        for f in frames:
            insert(bank, f)
        ks, ss, vs = gather(bank, 1)
        assert ks.shape == (12, 3)
        np.testing.assert_array_equal(ks[:4], frames[0].k)
        np.testing.assert_array_equal(vs[8:], frames[2].values[1])
        np.testing.assert_array_equal(ss[4:8], frames[1].s)

    def test_late_object_backfills_zero_values(self):
        bank = PixelMemoryBank(t_max=4)
        insert(bank, _frame(0, objects=(1,)))
        insert(bank, _frame(1, objects=(1, 2)))
        _, _, vs = gather(bank, 2)
        np.testing.assert_array_equal(vs[:4], 0.0)
        assert np.abs(vs[4:]).max() > 0

    def test_unknown_object_rejected(self):
        bank = PixelMemoryBank(t_max=4)
        insert(bank, _frame(0, objects=(1,)))
        with pytest.raises(InputError):
            gather(bank, 9)

    def test_empty_bank_rejected(self):
        with pytest.raises(InputError):
            gather(PixelMemoryBank(t_max=3), 1)


class TestHiddenStateUpdates:
    def test_sensory_and_deep_use_distinct_parameters(self):
        reg = _reg()
        sensory = [n for n in reg.names() if n.startswith("pixel_memory.sensory.gru")]
        deep = [n for n in reg.names() if n.startswith("pixel_memory.deep.gru")]
        assert len(sensory) == 6 and len(deep) == 6
        assert not set(sensory) & set(deep)

    def test_closed_gate_keeps_hidden(self):
        c, d = 4, 6
        reg = ParamRegistry(1)
        register_pixel_memory_params(reg, c, d)
        reg = reg.with_param("pixel_memory.sensory.gru.update.weight", np.zeros((c, 2 * c, 3, 3), np.float32))
        reg = reg.with_param("pixel_memory.sensory.gru.update.bias", np.full(c, -30.0, np.float32))
        rng = np.random.default_rng(30)
        h = rng.standard_normal((c, 4, 4)).astype(np.float32)
        feats = (
            rng.standard_normal((d, 4, 4)).astype(np.float32),
            rng.standard_normal((d, 8, 8)).astype(np.float32),
            rng.standard_normal((d, 16, 16)).astype(np.float32),
        )
        assert np.abs(sensory_update(reg, h, feats) - h).max() < 1e-6

    def test_sensory_multiscale_shapes(self):
        c, d = 4, 6
        reg = _reg(seed=2, c=c, d=d)
        rng = np.random.default_rng(31)
        h = rng.standard_normal((c, 3, 5)).astype(np.float32)
        feats = (
            rng.standard_normal((d, 3, 5)).astype(np.float32),
            rng.standard_normal((d, 6, 10)).astype(np.float32),
            rng.standard_normal((d, 12, 20)).astype(np.float32),
        )
        out = sensory_update(reg, h, feats)
        assert out.shape == h.shape
        assert np.abs(out).max() <= max(np.abs(h).max(), 1.0) + 1e-6

    def test_deep_update_bound(self):
        c = 4
        reg = _reg(seed=3, c=c)
        rng = np.random.default_rng(32)
        h = (rng.random((c, 4, 4)).astype(np.float32) * 2 - 1)
        g = rng.standard_normal((c, 4, 4)).astype(np.float32)
        out = deep_update(reg, h, g)
        assert out.shape == h.shape
        assert np.abs(out).max() <= max(np.abs(h).max(), 1.0) + 1e-6
