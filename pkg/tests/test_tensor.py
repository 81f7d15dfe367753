import numpy as np
import pytest

from funkan import tensor as T
from funkan.errors import NumericError, ShapeError

from oracles import conv2d_naive, finite_difference_grads, max_rel_error


def scalar_loss(out, rng):
    """Project onto fixed random weights so all gradient signs matter."""
    weights = T.Tensor(rng.standard_normal(out.shape))
    return T.tsum(T.mul(out, weights))


class TestElementwise:
    def test_add_values(self):
        out = T.add(T.Tensor([1.0, 2.0]), T.Tensor([3.0, 4.0]))
        assert np.array_equal(out.data, [4.0, 6.0])

    def test_mul_identity_exact(self):
        x = T.Tensor([[0.3, -1.7], [2.5, 0.0]])
        out = T.mul(x, 1.0)
        assert np.array_equal(out.data, x.data)

    def test_mul_gradient_matches_finite_differences(self):
        with T.using_dtype(np.float64):
            x = T.Tensor([2.0], requires_grad=True)
            y = T.Tensor([3.0], requires_grad=True)
            out = T.tsum(T.mul(x, y))
            out.backward()
            assert np.allclose(x.grad, [3.0], atol=1e-9)
            fd = finite_difference_grads(lambda: T.tsum(T.mul(x, y)).item(), [x], step=1e-6)
            assert max_rel_error(x.grad, fd[0]) < 1e-6

    def test_shape_mismatch_reports_both_shapes(self):
        with pytest.raises(ShapeError) as err:
            T.add(T.Tensor(np.zeros((2, 3))), T.Tensor(np.zeros((4, 5))))
        assert "(2, 3)" in str(err.value) and "(4, 5)" in str(err.value)

    def test_per_channel_broadcast_gradients(self):
        with T.using_dtype(np.float64):
            rng = np.random.default_rng(11)
            x = T.Tensor(rng.standard_normal((2, 3, 4, 4)), requires_grad=True)
            bias = T.Tensor(rng.standard_normal((1, 3, 1, 1)), requires_grad=True)
            proj = T.Tensor(rng.standard_normal(x.shape))

            def forward():
                return T.tsum(T.mul(T.add(x, bias), proj)).item()

            out = T.tsum(T.mul(T.add(x, bias), proj))
            out.backward()
            fd = finite_difference_grads(forward, [bias], step=1e-6)
            assert max_rel_error(bias.grad, fd[0]) < 1e-6


class TestConv2d:
    def test_one_by_one_identity(self):
        rng = np.random.default_rng(0)
        x = T.Tensor(rng.standard_normal((2, 3, 5, 7)))
        eye = np.zeros((1, 1, 3, 3), dtype=np.float32)
        for c in range(3):
            eye[0, 0, c, c] = 1.0
        out = T.conv2d(x, T.Tensor(eye), T.Tensor(np.zeros(3)))
        assert np.allclose(out.data, x.data, atol=1e-6)

    def test_all_ones_kernel_matches_sliding_window_oracle(self):
        x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
        k = np.ones((3, 3, 1, 1))
        out = T.conv2d(T.Tensor(x), T.Tensor(k))
        expected = conv2d_naive(x, k)
        assert np.allclose(out.data, expected, atol=1e-6)
        assert np.allclose(out.data, [[[[10.0, 10.0], [10.0, 10.0]]]], atol=1e-6)

    @pytest.mark.parametrize("stride,padding", [(1, "same"), (2, "same"), (1, "valid"), (2, "valid")])
    def test_matches_naive_oracle(self, stride, padding):
        with T.using_dtype(np.float64):
            rng = np.random.default_rng(42)
            x = rng.standard_normal((2, 3, 7, 6))
            k = rng.standard_normal((3, 3, 3, 4))
            b = rng.standard_normal(4)
            out = T.conv2d(T.Tensor(x), T.Tensor(k), T.Tensor(b), stride=stride, padding=padding)
            ref = conv2d_naive(x, k, b, stride=stride, padding=padding)
            assert out.data.shape == ref.shape
            assert np.abs(out.data - ref).max() < 1e-12

    def test_same_padding_output_sizes(self):
        x = T.Tensor(np.zeros((1, 1, 9, 9)))
        k = T.Tensor(np.zeros((3, 3, 1, 2)))
        assert T.conv2d(x, k, stride=1).shape == (1, 2, 9, 9)
        assert T.conv2d(x, k, stride=2).shape == (1, 2, 5, 5)

    def test_channel_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            T.conv2d(T.Tensor(np.zeros((1, 2, 4, 4))), T.Tensor(np.zeros((3, 3, 3, 1))))

    def test_gradients_match_finite_differences(self):
        with T.using_dtype(np.float64):
            rng = np.random.default_rng(7)
            x = T.Tensor(rng.standard_normal((1, 2, 5, 5)), requires_grad=True)
            k = T.Tensor(rng.standard_normal((3, 3, 2, 3)), requires_grad=True)
            b = T.Tensor(rng.standard_normal(3), requires_grad=True)
            proj = rng.standard_normal((1, 3, 3, 3))

            def forward():
                out = T.conv2d(x, k, b, stride=2, padding="same")
                return float((out.data * proj).sum())

            out = T.conv2d(x, k, b, stride=2, padding="same")
            loss = T.tsum(T.mul(out, T.Tensor(proj)))
            loss.backward()
            fd = finite_difference_grads(forward, [x, k, b], step=1e-5)
            assert max_rel_error(x.grad, fd[0]) < 1e-4
            assert max_rel_error(k.grad, fd[1]) < 1e-4
            assert max_rel_error(b.grad, fd[2]) < 1e-4

    def test_sum_gradient_wrt_kernel(self):
        with T.using_dtype(np.float64):
            rng = np.random.default_rng(3)
            x = T.Tensor(rng.standard_normal((1, 2, 6, 6)))
            k = T.Tensor(rng.standard_normal((3, 3, 2, 2)), requires_grad=True)
            loss = T.tsum(T.conv2d(x, k))
            loss.backward()
            fd = finite_difference_grads(lambda: T.tsum(T.conv2d(x, k)).item(), [k], step=1e-5)
            assert max_rel_error(k.grad, fd[0]) < 1e-4


class TestBatchNorm:
    def test_constant_input_maps_to_zero(self):
        x = T.Tensor(np.full((2, 3, 4, 4), 5.0))
        state = T.RunningStats(3)
        out = T.batch_norm(x, T.Tensor(np.ones(3)), T.Tensor(np.zeros(3)), state, "train")
        assert np.abs(out.data).max() < 1e-3  # epsilon guard handles zero variance

    def test_normalizes_mean_and_std(self):
        rng = np.random.default_rng(5)
        x = T.Tensor((rng.standard_normal((4, 2, 8, 8)) * 2.0 + 5.0).astype(np.float64),
                     dtype=np.float64)
        state = T.RunningStats(2)
        out = T.batch_norm(x, T.Tensor(np.ones(2), dtype=np.float64),
                           T.Tensor(np.zeros(2), dtype=np.float64), state, "train")
        assert abs(out.data.mean()) < 1e-5
        assert abs(out.data.std() - 1.0) < 1e-2

    def test_eval_before_train_rejected(self):
        x = T.Tensor(np.zeros((1, 2, 4, 4)))
        state = T.RunningStats(2)
        with pytest.raises(NumericError):
            T.batch_norm(x, T.Tensor(np.ones(2)), T.Tensor(np.zeros(2)), state, "eval")

    def test_eval_uses_running_stats(self):
        rng = np.random.default_rng(6)
        gamma, beta = T.Tensor(np.ones(2)), T.Tensor(np.zeros(2))
        state = T.RunningStats(2)
        for _ in range(5):
            x = T.Tensor(rng.standard_normal((4, 2, 6, 6)) + 3.0)
            T.batch_norm(x, gamma, beta, state, "train")
        x = T.Tensor(np.full((1, 2, 4, 4), 3.0))
        out = T.batch_norm(x, gamma, beta, state, "eval")
        assert np.abs(out.data).max() < 0.5  # running mean has converged near 3

    def test_gradients_match_finite_differences(self):
        with T.using_dtype(np.float64):
            rng = np.random.default_rng(8)
            x = T.Tensor(rng.standard_normal((2, 2, 3, 3)), requires_grad=True)
            gamma = T.Tensor(np.ones(2), requires_grad=True)
            beta = T.Tensor(np.zeros(2), requires_grad=True)
            proj = rng.standard_normal(x.shape)

            def forward():
                state = T.RunningStats(2)
                out = T.batch_norm(x, gamma, beta, state, "train")
                return float((out.data * proj).sum())

            state = T.RunningStats(2)
            out = T.batch_norm(x, gamma, beta, state, "train")
            T.tsum(T.mul(out, T.Tensor(proj))).backward()
            fd = finite_difference_grads(forward, [x, gamma, beta], step=1e-5)
            assert max_rel_error(x.grad, fd[0]) < 1e-4
            assert max_rel_error(gamma.grad, fd[1]) < 1e-4
            assert max_rel_error(beta.grad, fd[2]) < 1e-4


class TestSimpleOps:
    def test_relu_values(self):
        out = T.relu(T.Tensor([-1.0, 0.0, 2.0]))
        assert np.array_equal(out.data, [0.0, 0.0, 2.0])

    def test_relu_subgradient_zero_at_origin(self):
        x = T.Tensor([0.0], requires_grad=True)
        T.tsum(T.relu(x)).backward()
        assert np.array_equal(x.grad, [0.0])

    def test_softmax_uniform(self):
        out = T.softmax(T.Tensor([[0.0, 0.0, 0.0]]), axis=1)
        assert np.allclose(out.data, 1.0 / 3.0, atol=1e-7)

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(2)
        out = T.softmax(T.Tensor(rng.standard_normal((5, 6))), axis=1)
        assert np.allclose(out.data.sum(axis=1), 1.0, atol=1e-6)

    def test_upsample_nearest(self):
        x = T.Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
        out = T.upsample_nearest2x(x)
        expected = [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]]
        assert np.array_equal(out.data[0, 0], expected)

    @pytest.mark.parametrize("op", ["relu", "sigmoid", "softplus", "exp", "log",
                                    "sqrt", "softmax", "upsample", "matmul",
                                    "mean", "getitem", "div"])
    def test_gradients_match_finite_differences(self, op):
        with T.using_dtype(np.float64):
            rng = np.random.default_rng(hash(op) % 2**32)
            if op == "matmul":
                a = T.Tensor(rng.standard_normal((3, 4)), requires_grad=True)
                b = T.Tensor(rng.standard_normal((4, 2)), requires_grad=True)
                proj = rng.standard_normal((3, 2))
                build = lambda: T.matmul(a, b)
                leaves = [a, b]
            elif op == "div":
                a = T.Tensor(rng.standard_normal((3, 3)), requires_grad=True)
                b = T.Tensor(rng.standard_normal((3, 3)) + 3.0, requires_grad=True)
                proj = rng.standard_normal((3, 3))
                build = lambda: T.div(a, b)
                leaves = [a, b]
            else:
                data = rng.standard_normal((2, 2, 4, 4))
                if op in ("log", "sqrt"):
                    data = np.abs(data) + 0.5
                if op == "relu":
                    data = data + np.sign(data) * 0.2  # keep away from the kink
                x = T.Tensor(data, requires_grad=True)
                leaves = [x]
                if op == "relu":
                    build = lambda: T.relu(x)
                elif op == "sigmoid":
                    build = lambda: T.sigmoid(x)
                elif op == "softplus":
                    build = lambda: T.softplus(x)
                elif op == "exp":
                    build = lambda: T.exp(x)
                elif op == "log":
                    build = lambda: T.log(x)
                elif op == "sqrt":
                    build = lambda: T.sqrt(x)
                elif op == "softmax":
                    build = lambda: T.softmax(x, axis=1)
                elif op == "upsample":
                    build = lambda: T.upsample_nearest2x(x)
                elif op == "mean":
                    build = lambda: T.tmean(x, axis=(0, 2), keepdims=True)
                elif op == "getitem":
                    build = lambda: T.getitem(x, np.s_[:, 1:, 1:3])
                proj = rng.standard_normal(build().shape)

            def forward():
                return float((build().data * proj).sum())

            T.tsum(T.mul(build(), T.Tensor(proj))).backward()
            fd = finite_difference_grads(forward, leaves, step=1e-6)
            for leaf, ref in zip(leaves, fd):
                assert max_rel_error(leaf.grad, ref) < 1e-4


class TestBackward:
    def test_sum_gradient_is_ones(self):
        x = T.Tensor([[1.0, -2.0], [0.5, 3.0]], requires_grad=True)
        T.tsum(x).backward()
        assert np.array_equal(x.grad, np.ones((2, 2), dtype=x.dtype))

    def test_sum_of_squares_gradient(self):
        x = T.Tensor([1.0, 2.0], requires_grad=True)
        T.tsum(T.mul(x, x)).backward()
        assert np.allclose(x.grad, [2.0, 4.0], atol=1e-6)

    def test_non_scalar_loss_rejected(self):
        x = T.Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ShapeError):
            T.mul(x, x).backward()

    def test_repeated_backward_without_reset_rejected(self):
        x = T.Tensor([1.0, 2.0], requires_grad=True)
        T.tsum(T.mul(x, x)).backward()
        with pytest.raises(NumericError):
            T.tsum(T.mul(x, x)).backward()
        x.zero_grad()
        T.tsum(T.mul(x, x)).backward()
        assert np.allclose(x.grad, [2.0, 4.0], atol=1e-6)

    def test_diamond_graph_accumulates_once_per_path(self):
        x = T.Tensor([3.0], requires_grad=True)
        y = T.mul(x, x)  # x^2
        loss = T.tsum(T.add(y, y))  # 2 x^2 -> d/dx = 4x = 12
        loss.backward()
        assert np.allclose(x.grad, [12.0], atol=1e-6)

    def test_no_grad_blocks_recording(self):
        x = T.Tensor([1.0], requires_grad=True)
        with T.no_grad():
            out = T.mul(x, x)
        assert not out.requires_grad

    def test_forward_is_pure(self):
        rng = np.random.default_rng(9)
        x = T.Tensor(rng.standard_normal((2, 3, 6, 6)))
        k = T.Tensor(rng.standard_normal((3, 3, 3, 3)))
        a = T.conv2d(x, k).data
        b = T.conv2d(x, k).data
        assert np.array_equal(a, b)
