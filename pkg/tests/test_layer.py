import numpy as np
import pytest

from funkan import tensor as T
from funkan.errors import ShapeError
from funkan.hermite import uniform_grid
from funkan.layer import FunKanBlock, OffsetPredictor

from oracles import finite_difference_grads, hermite_closed_form, max_rel_error


def zero_block_parameters(block):
    for _, p in block.named_parameters("b"):
        p.data[...] = 0.0


class TestOffsetPredictor:
    def test_zero_parameters_give_zero_offsets(self):
        rng = np.random.default_rng(0)
        pred = OffsetPredictor(4, rng)
        for _, p in pred.named_parameters("o"):
            p.data[...] = 0.0
        # restore BN defaults wiped by the zero fill
        for bn in (pred.bn0, pred.bn1, pred.bn2):
            bn.gamma.data[...] = 1.0
        x = T.Tensor(rng.standard_normal((2, 4, 6, 6)))
        dqx, dqy = pred(x, mode="train")
        assert np.abs(dqx.data).max() == 0.0
        assert np.abs(dqy.data).max() == 0.0

    def test_output_shapes(self):
        rng = np.random.default_rng(1)
        pred = OffsetPredictor(32, rng)
        x = T.Tensor(rng.standard_normal((2, 32, 16, 16)))
        dqx, dqy = pred(x, mode="train")
        assert dqx.shape == (2, 32, 16, 16)
        assert dqy.shape == (2, 32, 16, 16)

    def test_channel_mismatch_rejected(self):
        pred = OffsetPredictor(4, np.random.default_rng(2))
        with pytest.raises(ShapeError):
            pred(T.Tensor(np.zeros((1, 3, 8, 8))), mode="train")

    def test_gradients_match_finite_differences(self):
        with T.using_dtype(np.float64):
            rng = np.random.default_rng(3)
            pred = OffsetPredictor(3, rng)
            x = T.Tensor(rng.standard_normal((1, 3, 5, 5)))
            params = dict(pred.named_parameters("o"))
            leaves = list(params.values())
            proj_x = rng.standard_normal((1, 3, 5, 5))
            proj_y = rng.standard_normal((1, 3, 5, 5))

            def forward():
                dqx, dqy = pred(x, mode="train")
                return float((dqx.data * proj_x).sum() + (dqy.data * proj_y).sum())

            dqx, dqy = pred(x, mode="train")
            loss = T.add(T.tsum(T.mul(dqx, T.Tensor(proj_x))), T.tsum(T.mul(dqy, T.Tensor(proj_y))))
            loss.backward()
            fd = finite_difference_grads(forward, leaves, step=1e-5)
            for (name, p), ref in zip(params.items(), fd):
                assert max_rel_error(p.grad, ref) < 1e-3, name


class TestBlockForward:
    def test_output_shape_contract(self):
        rng = np.random.default_rng(4)
        block = FunKanBlock(32, 32, 6, rng)
        x = T.Tensor(rng.standard_normal((1, 32, 16, 16)))
        out = block.forward(x, mode="train")
        assert out.shape == (1, 32, 16, 16)

    @pytest.mark.parametrize("n,m,hw", [(4, 4, 8), (4, 7, 9), (3, 5, 12)])
    def test_shape_contract_various(self, n, m, hw):
        rng = np.random.default_rng(5)
        block = FunKanBlock(n, m, 3, rng)
        x = T.Tensor(rng.standard_normal((2, n, hw, hw)))
        assert block.forward(x, mode="train").shape == (2, m, hw, hw)

    def test_one_hot_attention_reproduces_basis_map(self):
        """Zero offsets + raw one-hot attention + identity mixing = fixed psi_0 map."""
        rng = np.random.default_rng(6)
        n = 3
        block = FunKanBlock(n, n, 3, rng, attention_norm="raw")
        zero_block_parameters(block)
        block.A.data[:, 0] = 1.0  # one-hot on k=0
        for c in range(n):
            block.theta.kernel.data[0, 0, c, c] = 1.0
        x = T.Tensor(rng.standard_normal((2, n, 8, 8)))
        out = block.forward(x, mode="train")

        qx, qy = uniform_grid(8, 8, block.extent)
        expected = hermite_closed_form(0, qx.data) * hermite_closed_form(0, qy.data)
        for b in range(2):
            for c in range(n):
                assert np.abs(out.data[b, c] - expected).max() < 1e-5

    def test_frozen_offsets_make_output_input_independent(self):
        rng = np.random.default_rng(7)
        block = FunKanBlock(4, 4, 6, rng)
        for _, p in block.offset.named_parameters("o"):
            p.data[...] = 0.0
        for bn in (block.offset.bn0, block.offset.bn1, block.offset.bn2):
            bn.gamma.data[...] = 1.0
        a = block.forward(T.Tensor(rng.standard_normal((1, 4, 8, 8))), mode="train").data
        b = block.forward(T.Tensor(rng.standard_normal((1, 4, 8, 8))), mode="train").data
        assert np.allclose(a, b, atol=1e-6)

    def test_full_gradient_check_on_toy_block(self):
        """All parameters of a 1x4x8x8 block against central differences."""
        with T.using_dtype(np.float64):
            rng = np.random.default_rng(8)
            block = FunKanBlock(4, 4, 3, rng)
            x = T.Tensor(rng.standard_normal((1, 4, 8, 8)))
            params = dict(block.named_parameters("b"))
            proj = rng.standard_normal((1, 4, 8, 8))

            def forward():
                return float((block.forward(x, mode="train").data * proj).sum())

            out = block.forward(x, mode="train")
            T.tsum(T.mul(out, T.Tensor(proj))).backward()
            fd = finite_difference_grads(forward, list(params.values()), step=1e-5)
            for (name, p), ref in zip(params.items(), fd):
                assert max_rel_error(p.grad, ref) < 1e-3, name

    def test_input_gradient_flows_through_deformation(self):
        with T.using_dtype(np.float64):
            rng = np.random.default_rng(9)
            block = FunKanBlock(3, 3, 3, rng)
            x = T.Tensor(rng.standard_normal((1, 3, 6, 6)), requires_grad=True)
            proj = rng.standard_normal((1, 3, 6, 6))

            def forward():
                return float((block.forward(x, mode="train").data * proj).sum())

            T.tsum(T.mul(block.forward(x, mode="train"), T.Tensor(proj))).backward()
            fd = finite_difference_grads(forward, [x], step=1e-5)
            assert max_rel_error(x.grad, fd[0]) < 1e-3


class TestAttention:
    def test_zero_logits_give_uniform_rows(self):
        block = FunKanBlock(5, 5, 4, np.random.default_rng(10))
        att = block.attention()
        assert np.allclose(att, 0.25, atol=1e-7)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(11)
        block = FunKanBlock(32, 32, 6, rng)
        block.A.data[...] = rng.standard_normal((32, 6))
        att = block.attention()
        assert att.shape == (32, 6)
        assert np.abs(att.sum(axis=1) - 1.0).max() < 1e-6

    def test_shift_invariance(self):
        rng = np.random.default_rng(12)
        block = FunKanBlock(8, 8, 6, rng)
        block.A.data[...] = rng.standard_normal((8, 6))
        before = block.attention()
        block.A.data += 5.0  # constant shift of every logit
        after = block.attention()
        assert np.array_equal(before.argmax(axis=1), after.argmax(axis=1))
        assert np.abs(before - after).max() < 1e-6
