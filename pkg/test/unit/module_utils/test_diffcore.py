import numpy as np
import pytest

from module_utils import diffcore as dc
from module_utils.common import DimensionError, LengthError, SkdanConfigurationError, make_rng

TOLERANCE = 1e-6


def random_tensor(shape, seed=0):
    return dc.parameter(make_rng(seed).normal(size=shape))


class TestElementaryOps(object):

    def test_add_broadcasts_and_unbroadcasts_gradient(self):
        a = dc.parameter(np.ones((3, 2)))
        b = dc.parameter(np.array([1.0, 2.0]))

        dc.tensor_sum(a + b).backward()

        assert np.array_equal(a.grad, np.ones((3, 2)))
        assert np.array_equal(b.grad, np.array([3.0, 3.0]))

    def test_shared_input_accumulates_gradient(self):
        a = dc.parameter(np.array([2.0, 3.0]))

        dc.tensor_sum(a * a + a).backward()

        assert np.allclose(a.grad, 2 * a.values + 1)

    def test_backward_requires_scalar_without_explicit_gradient(self):
        a = dc.parameter(np.ones(3))

        with pytest.raises(DimensionError):
            (a * 2.0).backward()

    def test_no_grad_does_not_record_graph(self):
        a = dc.parameter(np.ones(3))

        with dc.no_grad():
            out = dc.tensor_sum(a * 3.0)

        assert not out.requires_grad
        assert out._backward is None

    def test_matmul_rejects_mismatched_shapes(self):
        with pytest.raises(DimensionError) as ex:
            dc.matmul(dc.Tensor(np.ones((2, 3))), dc.Tensor(np.ones((4, 2))))

        assert ex.value.obj == ((2, 3), (4, 2))

    def test_matmul_rejects_vectors(self):
        with pytest.raises(DimensionError):
            dc.matmul(dc.Tensor(np.ones(3)), dc.Tensor(np.ones((3, 2))))

    def test_softmax_rows_sum_to_one_for_large_inputs(self):
        x = dc.Tensor(np.array([[1000.0, 1001.0, 1002.0], [-1000.0, 0.0, 1000.0]]))

        out = dc.softmax_rows(x).values

        assert np.all(np.isfinite(out))
        assert np.allclose(out.sum(axis=-1), 1.0)

    @pytest.mark.parametrize('scale', [1e-3, 1.0, 50.0, 1e4])
    def test_softmax_rows_of_random_inputs(self, scale):
        x = make_rng(3).normal(scale=scale, size=(4, 7, 33))

        out = dc.softmax_rows(dc.Tensor(x)).values

        assert np.all(out >= 0.0)
        assert np.max(np.abs(out.sum(axis=-1) - 1.0)) <= 1e-12

    def test_elu_and_relu_values(self):
        x = dc.Tensor(np.array([-1.0, 0.0, 2.0]))

        assert np.allclose(dc.elu(x).values, [np.expm1(-1.0), 0.0, 2.0])
        assert np.array_equal(dc.relu(x).values, [0.0, 0.0, 2.0])

    def test_dropout_is_identity_in_eval_mode(self):
        x = dc.Tensor(np.ones((4, 5)))

        assert dc.dropout(x, 0.5, make_rng(0), training=False) is x

    def test_dropout_rescales_survivors(self):
        x = dc.Tensor(np.ones(10000))

        out = dc.dropout(x, 0.25, make_rng(1), training=True).values

        assert set(np.unique(out)) <= {0.0, 1.0 / 0.75}
        assert abs(np.mean(out == 0.0) - 0.25) < 0.02

    def test_dropout_rejects_rate_of_one(self):
        with pytest.raises(SkdanConfigurationError):
            dc.dropout(dc.Tensor(np.ones(3)), 1.0, make_rng(0), training=True)


class TestConvolution(object):

    def test_same_padding_keeps_length(self):
        x = dc.Tensor(np.ones((2, 10, 4)))
        kernels = dc.Tensor(np.ones((3, 4, 8)))

        out = dc.conv1d(x, kernels, dc.Tensor(np.zeros(8)))

        assert out.shape == (2, 10, 8)
        # interior rows see three ones per channel, edges see two
        assert np.allclose(out.values[0, 1:-1], 12.0)
        assert np.allclose(out.values[0, 0], 8.0)

    def test_valid_padding_shortens_output(self):
        out = dc.conv1d(dc.Tensor(np.ones((10, 2))), dc.Tensor(np.ones((3, 2, 1))), dc.Tensor(np.zeros(1)),
                        padding=dc.PaddingMode.VALID)

        assert out.shape == (8, 1)

    def test_matches_direct_cross_correlation(self):
        rng = make_rng(3)
        x = rng.normal(size=(7, 2))
        kernels = rng.normal(size=(3, 2, 2))
        bias = rng.normal(size=2)

        out = dc.conv1d(dc.Tensor(x), dc.Tensor(kernels), dc.Tensor(bias)).values

        padded = np.pad(x, [(1, 1), (0, 0)])
        expected = np.array([[np.sum(padded[t:t + 3] * kernels[:, :, o]) + bias[o] for o in range(2)]
                             for t in range(7)])
        assert np.allclose(out, expected)

    def test_rejects_wrong_input_channels(self):
        with pytest.raises(DimensionError):
            dc.conv1d(dc.Tensor(np.ones((10, 3))), dc.Tensor(np.ones((3, 4, 8))), dc.Tensor(np.zeros(8)))

    def test_rejects_even_kernel_with_same_padding(self):
        with pytest.raises(SkdanConfigurationError):
            dc.conv1d(dc.Tensor(np.ones((10, 4))), dc.Tensor(np.ones((2, 4, 8))), dc.Tensor(np.zeros(8)))

    def test_valid_padding_rejects_short_input(self):
        with pytest.raises(LengthError):
            dc.conv1d(dc.Tensor(np.ones((2, 4))), dc.Tensor(np.ones((3, 4, 1))), dc.Tensor(np.zeros(1)),
                      padding=dc.PaddingMode.VALID)


class TestPooling(object):

    def test_pool_length(self):
        assert dc.pool_length(160, 4, 4) == 40
        assert dc.pool_length(159, 2, 2) == 79

    def test_picks_window_maximum(self):
        x = dc.Tensor(np.array([[1.0], [3.0], [2.0], [5.0], [4.0]]))

        out = dc.maxpool1d(x, 2, 2)

        assert np.array_equal(out.values, [[3.0], [5.0]])

    def test_gradient_goes_to_first_maximum(self):
        x = dc.parameter(np.array([[2.0], [2.0], [1.0], [0.0]]))

        dc.tensor_sum(dc.maxpool1d(x, 2, 2)).backward()

        assert np.array_equal(x.grad[:, 0], [1.0, 0.0, 1.0, 0.0])

    def test_rejects_window_longer_than_input(self):
        with pytest.raises(LengthError):
            dc.maxpool1d(dc.Tensor(np.ones((3, 1))), 4, 4)


class TestGradCheck(object):

    @pytest.mark.parametrize('fn, shapes', [
        (lambda a, b: dc.tensor_sum(dc.matmul(a, b) * dc.matmul(a, b)), [(3, 4), (4, 2)]),
        (lambda a: dc.mean(dc.exp(a) * 0.5), [(2, 3)]),
        (lambda a: dc.tensor_sum(dc.softmax_rows(a) * dc.Tensor(np.arange(12.0).reshape(3, 4))), [(3, 4)]),
        (lambda a: dc.tensor_sum(dc.elu(a) * dc.elu(a)), [(5, 3)]),
        (lambda a: dc.tensor_sum(dc.reciprocal(dc.exp(a) + 1.0)), [(4,)]),
        (lambda a: dc.tensor_sum(dc.transpose(a)[0] * 3.0), [(2, 3, 4)]),
        (lambda a, b: dc.tensor_sum(dc.concat([a, b], axis=-1) * dc.concat([a, b], axis=-1)), [(2, 3), (2, 1)]),
    ])
    def test_elementary_gradients(self, fn, shapes):
        point = [random_tensor(shape, seed) for seed, shape in enumerate(shapes)]

        assert dc.grad_check(fn, point) < TOLERANCE

    def test_conv1d_gradients(self):
        point = [random_tensor((2, 9, 3), 0), random_tensor((3, 3, 4), 1), random_tensor((4,), 2)]
        weights = dc.Tensor(make_rng(5).normal(size=(2, 9, 4)))

        def fn(x, kernels, bias):
            return dc.tensor_sum(dc.conv1d(x, kernels, bias) * weights)

        assert dc.grad_check(fn, point) < TOLERANCE

    def test_maxpool_gradients(self):
        # distinct values keep the arg-max stable under the finite-difference step
        x = dc.parameter(make_rng(2).permutation(24).reshape(12, 2).astype(float))
        weights = dc.Tensor(make_rng(4).normal(size=(3, 2)))

        assert dc.grad_check(lambda a: dc.tensor_sum(dc.maxpool1d(a, 4, 4) * weights), x) < TOLERANCE

    def test_sampled_coordinates(self):
        point = random_tensor((20, 20), 7)

        error = dc.grad_check(lambda a: dc.tensor_sum(dc.exp(a * 0.1)), point, max_coordinates=15)

        assert error < TOLERANCE

    def test_restores_perturbed_values(self):
        point = random_tensor((3, 3), 8)
        before = point.values.copy()

        dc.grad_check(lambda a: dc.tensor_sum(a * a), point)

        assert np.array_equal(point.values, before)


class TestAdam(object):

    def test_first_step_moves_each_coordinate_by_learning_rate(self):
        param = dc.parameter(np.array([1.0, -2.0, 3.0]))
        state = dc.AdamState([param.shape], learning_rate=0.1)

        dc.adam_step([param], [np.array([0.5, -4.0, 1e-3])], state)

        assert np.allclose(param.values, [0.9, -1.9, 2.9], atol=1e-6)
        assert state.step == 1

    def test_missing_gradient_counts_as_zero(self):
        param = dc.parameter(np.ones(2))
        state = dc.AdamState([param.shape])

        dc.adam_step([param], [None], state)

        assert np.array_equal(param.values, np.ones(2))

    def test_rejects_shape_mismatch(self):
        param = dc.parameter(np.ones(2))
        state = dc.AdamState([(3,)])

        with pytest.raises(DimensionError):
            dc.adam_step([param], [np.ones(2)], state)

    def test_minimizes_quadratic(self):
        param = dc.parameter(np.array([5.0, -3.0]))
        optimizer = dc.Adam([param], learning_rate=0.1)

        for _ in range(1000):
            optimizer.zero_grad()
            dc.tensor_sum(param * param).backward()
            optimizer.step()

        assert np.all(np.abs(param.values) < 0.05)


def test_glorot_uniform_respects_limit():
    values = dc.glorot_uniform(make_rng(0), (64, 32), 64, 32)

    assert values.shape == (64, 32)
    assert np.max(np.abs(values)) <= np.sqrt(6.0 / 96)


class TestWorkedExamples(object):

    def test_matmul_examples(self):
        m = dc.Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))

        assert np.array_equal(dc.matmul(dc.Tensor(np.eye(2)), m).values, m.values)
        assert np.array_equal(dc.matmul(dc.Tensor([[1.0, 2.0]]), dc.Tensor([[3.0], [4.0]])).values, [[11.0]])

    def test_conv1d_examples(self):
        x = dc.Tensor(np.array([[1.0], [2.0], [3.0]]))

        ones = dc.conv1d(x, dc.Tensor(np.ones((3, 1, 1))), dc.Tensor(np.zeros(1)))
        delta = dc.conv1d(x, dc.Tensor(np.array([0.0, 1.0, 0.0]).reshape(3, 1, 1)), dc.Tensor(np.zeros(1)))

        assert np.array_equal(ones.values[:, 0], [3.0, 6.0, 5.0])
        assert np.array_equal(delta.values, x.values)

    def test_conv1d_rejects_empty_input(self):
        with pytest.raises(LengthError):
            dc.conv1d(dc.Tensor(np.zeros((0, 1))), dc.Tensor(np.ones((3, 1, 1))), dc.Tensor(np.zeros(1)))

    def test_maxpool_examples(self):
        assert np.array_equal(dc.maxpool1d(dc.Tensor([[1.0], [3.0], [2.0], [5.0]]), 2, 2).values, [[3.0], [5.0]])
        assert np.array_equal(dc.maxpool1d(dc.Tensor(np.full((6, 2), 7.0)), 2, 2).values, np.full((3, 2), 7.0))
        assert dc.maxpool1d(dc.Tensor(np.zeros((160, 1))), 2, 2).shape == (80, 1)

    def test_softmax_examples(self):
        assert np.allclose(dc.softmax_rows(dc.Tensor([[0.0, 0.0]])).values, [[0.5, 0.5]])
        assert np.allclose(dc.softmax_rows(dc.Tensor([[np.log(2.0), 0.0]])).values, [[2.0 / 3.0, 1.0 / 3.0]])
        assert np.allclose(dc.softmax_rows(dc.Tensor(np.full((1, 4), 1e6))).values, 0.25)

    def test_activation_examples(self):
        assert dc.elu(dc.Tensor(0.0)).item() == 0.0
        assert dc.relu(dc.Tensor(-2.0)).item() == 0.0
        assert np.isclose(dc.elu(dc.Tensor(-1.0)).item(), -0.63212, atol=1e-5)

    def test_zero_dropout_is_identity_in_training(self):
        x = dc.Tensor(np.arange(5.0))

        assert np.array_equal(dc.dropout(x, 0.0, make_rng(0), training=True).values, x.values)

    def test_adam_first_step_example(self):
        param = dc.parameter(np.array([0.0]))

        dc.adam_step([param], [np.array([1.0])], dc.AdamState([(1,)], learning_rate=0.1))

        assert np.isclose(param.values[0], -0.1, atol=1e-6)

    def test_adam_is_deterministic(self):
        def run():
            param = dc.parameter(make_rng(3).normal(size=(4, 3)))
            optimizer = dc.Adam([param], learning_rate=0.01)
            for _ in range(20):
                optimizer.zero_grad()
                dc.tensor_sum(dc.exp(param * 0.3)).backward()
                optimizer.step()
            return param.values

        assert np.array_equal(run(), run())

    def test_grad_check_sum_of_squares(self):
        error = dc.grad_check(lambda a: dc.tensor_sum(a * a), random_tensor((4, 5), 11))

        assert error < 1e-8

    def test_grad_check_constant_function(self):
        assert dc.grad_check(lambda a: dc.tensor_sum(a * 0.0) + 3.0, random_tensor((3,), 12)) == 0.0
