"""
Minimal reverse-mode differentiation over numpy float64 arrays.

Every op accepts arrays with any number of leading batch dimensions; the trailing
dimensions carry the (length, channel) or (rows, columns) layout the op documents.
"""
import contextlib
import logging

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from module_utils.common import DimensionError, LengthError, SkdanConfigurationError, make_rng

logger = logging.getLogger(__name__)

DTYPE = np.float64

_grad_state = {'enabled': True}


class PaddingMode:
    SAME = 'same'
    VALID = 'valid'


@contextlib.contextmanager
def no_grad():
    """Ops executed inside this block do not record a backward graph."""
    previous = _grad_state['enabled']
    _grad_state['enabled'] = False
    try:
        yield
    finally:
        _grad_state['enabled'] = previous


class Tensor(object):
    __array_priority__ = 100

    def __init__(self, values, requires_grad=False):
        self.values = np.asarray(values, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.values.shape

    @property
    def ndim(self):
        return self.values.ndim

    def item(self):
        return float(self.values.reshape(-1)[0]) if self.values.size == 1 else float('nan')

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """
        Accumulates d(self)/d(leaf) into `grad` of every tracked tensor in the graph.

        :param grad: upstream gradient, defaults to 1 for scalar tensors
        """
        if grad is None:
            if self.values.size != 1:
                raise DimensionError('backward() without an explicit gradient needs a scalar, got shape %s.'
                                     % (self.shape,), obj=self.shape)
            grad = np.ones_like(self.values)

        order = _topological_order(self)
        _accumulate(self, np.asarray(grad, dtype=DTYPE))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self):
        return 'Tensor(shape=%s, requires_grad=%s)' % (self.shape, self.requires_grad)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, reciprocal(other))
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)


def as_tensor(value):
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def parameter(values):
    return Tensor(values, requires_grad=True)


def _topological_order(root):
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _accumulate(tensor, grad):
    if not tensor.requires_grad:
        return
    grad = _unbroadcast(grad, tensor.shape)
    if tensor.grad is None:
        tensor.grad = np.array(grad, dtype=DTYPE)
    else:
        tensor.grad = tensor.grad + grad


def _result(values, parents, backward):
    out = Tensor(values)
    if _grad_state['enabled'] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(grad):
        _accumulate(a, grad)
        _accumulate(b, grad)

    return _result(a.values + b.values, (a, b), backward)


def neg(a):
    def backward(grad):
        _accumulate(a, -grad)

    return _result(-a.values, (a,), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(grad):
        _accumulate(a, grad * b.values)
        _accumulate(b, grad * a.values)

    return _result(a.values * b.values, (a, b), backward)


def reciprocal(a):
    out_values = 1.0 / a.values

    def backward(grad):
        _accumulate(a, -grad * out_values * out_values)

    return _result(out_values, (a,), backward)


def exp(a):
    out_values = np.exp(a.values)

    def backward(grad):
        _accumulate(a, grad * out_values)

    return _result(out_values, (a,), backward)


def clip_min(a, floor):
    mask = a.values > floor

    def backward(grad):
        _accumulate(a, grad * mask)

    return _result(np.maximum(a.values, floor), (a,), backward)


def tensor_sum(a, axis=None, keepdims=False):
    def backward(grad):
        if axis is not None and not keepdims:
            grad = np.expand_dims(grad, axis)
        _accumulate(a, np.broadcast_to(grad, a.shape))

    return _result(np.sum(a.values, axis=axis, keepdims=keepdims), (a,), backward)


def mean(a, axis=None, keepdims=False):
    count = a.values.size if axis is None else a.shape[axis]
    return tensor_sum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def reshape(a, shape):
    def backward(grad):
        _accumulate(a, grad.reshape(a.shape))

    return _result(a.values.reshape(shape), (a,), backward)


def transpose(a):
    """Swaps the two trailing axes."""
    def backward(grad):
        _accumulate(a, np.swapaxes(grad, -1, -2))

    return _result(np.swapaxes(a.values, -1, -2), (a,), backward)


def take(a, index):
    def backward(grad):
        full = np.zeros_like(a.values)
        np.add.at(full, index, grad)
        _accumulate(a, full)

    return _result(a.values[index], (a,), backward)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    split_points = np.cumsum(sizes)[:-1]

    def backward(grad):
        for tensor, part in zip(tensors, np.split(grad, split_points, axis=axis)):
            _accumulate(tensor, part)

    return _result(np.concatenate([t.values for t in tensors], axis=axis), tensors, backward)


def matmul(a, b):
    """
    Matrix product over the two trailing axes, broadcasting leading batch axes.

    :type a: Tensor
    :type b: Tensor
    :raises DimensionError: if either operand has fewer than 2 axes or inner sizes disagree
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError('Cannot multiply matrices of shapes %s and %s.' % (a.shape, b.shape),
                             obj=(a.shape, b.shape))

    def backward(grad):
        _accumulate(a, np.matmul(grad, np.swapaxes(b.values, -1, -2)))
        _accumulate(b, np.matmul(np.swapaxes(a.values, -1, -2), grad))

    return _result(np.matmul(a.values, b.values), (a, b), backward)


def conv1d(x, kernels, bias, padding=PaddingMode.SAME):
    """
    One-dimensional cross-correlation of a [..., n, c_in] input with [k, c_in, c_out] kernels.

    `same` padding zero-pads (k - 1) / 2 rows on both sides and keeps the length;
    `valid` padding produces n - k + 1 rows.
    """
    x, kernels, bias = as_tensor(x), as_tensor(kernels), as_tensor(bias)
    if kernels.ndim != 3:
        raise DimensionError('Convolution kernels must have shape [k, c_in, c_out], got %s.' % (kernels.shape,),
                             obj=kernels.shape)
    k, c_in, c_out = kernels.shape
    if x.ndim < 2 or x.shape[-1] != c_in:
        raise DimensionError('Convolution expects %d input channels, got input of shape %s.' % (c_in, x.shape),
                             obj=x.shape)
    if bias.shape != (c_out,):
        raise DimensionError('Convolution bias must have shape (%d,), got %s.' % (c_out, bias.shape),
                             obj=bias.shape)
    n = x.shape[-2]
    if n < 1:
        raise LengthError('Convolution input is empty.', obj=x.shape)

    if padding == PaddingMode.SAME:
        if k % 2 == 0:
            raise SkdanConfigurationError('Same padding requires an odd kernel size, got %d.' % k, obj=k)
        total = k - 1
        left, right = total // 2, total - total // 2
    elif padding == PaddingMode.VALID:
        if n < k:
            raise LengthError('Valid convolution needs at least %d rows, got %d.' % (k, n), obj=n)
        left = right = 0
    else:
        raise SkdanConfigurationError("Unknown padding mode '%s'." % padding, obj=padding)

    pad_width = [(0, 0)] * (x.ndim - 2) + [(left, right), (0, 0)]
    padded = np.pad(x.values, pad_width)
    n_out = padded.shape[-2] - k + 1
    # [..., n_out, c_in, k] -> [..., n_out, k * c_in] with kernel offset as the slow index
    columns = np.swapaxes(sliding_window_view(padded, k, axis=-2), -1, -2)
    columns = columns.reshape(columns.shape[:-2] + (k * c_in,))
    weights = kernels.values.reshape(k * c_in, c_out)
    out_values = np.matmul(columns, weights) + bias.values

    def backward(grad):
        if kernels.requires_grad:
            flat_columns = columns.reshape(-1, k * c_in)
            flat_grad = grad.reshape(-1, c_out)
            _accumulate(kernels, np.matmul(flat_columns.T, flat_grad).reshape(k, c_in, c_out))
        if bias.requires_grad:
            _accumulate(bias, grad.reshape(-1, c_out).sum(axis=0))
        if x.requires_grad:
            grad_columns = np.matmul(grad, weights.T).reshape(grad.shape[:-1] + (k, c_in))
            grad_padded = np.zeros_like(padded)
            for offset in range(k):
                grad_padded[..., offset:offset + n_out, :] += grad_columns[..., offset, :]
            _accumulate(x, grad_padded[..., left:left + n, :])

    return _result(out_values, (x, kernels, bias), backward)


def pool_length(n, window, stride):
    return (n - window) // stride + 1


def maxpool1d(x, window, stride):
    """
    Per-channel windowed maximum over the length axis of a [..., n, c] input.
    The gradient goes to the first maximal position of each window.
    """
    x = as_tensor(x)
    n = x.shape[-2]
    if window < 1 or stride < 1:
        raise SkdanConfigurationError('Pooling window and stride must be positive, got %d and %d.'
                                      % (window, stride))
    if window > n:
        raise LengthError('Pooling window %d exceeds input length %d.' % (window, n), obj=n)

    n_out = pool_length(n, window, stride)
    # [..., n_out, c, window]
    windows = sliding_window_view(x.values, window, axis=-2)[..., ::stride, :, :][..., :n_out, :, :]
    argmax = np.argmax(windows, axis=-1)
    out_values = np.take_along_axis(windows, argmax[..., None], axis=-1)[..., 0]

    def backward(grad):
        full = np.zeros_like(x.values)
        last = stride * (n_out - 1) + 1
        for offset in range(window):
            full[..., offset:offset + last:stride, :] += np.where(argmax == offset, grad, 0.0)
        _accumulate(x, full)

    return _result(out_values, (x,), backward)


def softmax_rows(x):
    """Softmax over the trailing axis, computed with max subtraction."""
    x = as_tensor(x)
    shifted = x.values - np.max(x.values, axis=-1, keepdims=True)
    weights = np.exp(shifted)
    weights /= np.sum(weights, axis=-1, keepdims=True)

    def backward(grad):
        _accumulate(x, weights * (grad - np.sum(grad * weights, axis=-1, keepdims=True)))

    return _result(weights, (x,), backward)


def elu(x):
    x = as_tensor(x)
    positive = x.values >= 0
    negative_part = np.expm1(np.minimum(x.values, 0.0))
    out_values = np.where(positive, x.values, negative_part)

    def backward(grad):
        _accumulate(x, grad * np.where(positive, 1.0, negative_part + 1.0))

    return _result(out_values, (x,), backward)


def relu(x):
    x = as_tensor(x)
    mask = x.values > 0

    def backward(grad):
        _accumulate(x, grad * mask)

    return _result(np.where(mask, x.values, 0.0), (x,), backward)


def dropout(x, rate, rng, training):
    """
    Inverted dropout: zeroes entries with probability `rate` and rescales survivors by 1 / (1 - rate)
    in training mode, identity otherwise.
    """
    if not 0.0 <= rate < 1.0:
        raise SkdanConfigurationError('Dropout rate must lie in [0, 1), got %s.' % rate, obj=rate)
    x = as_tensor(x)
    if not training or rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(DTYPE) / (1.0 - rate)
    return mul(x, Tensor(keep))


def glorot_uniform(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class AdamState(object):
    def __init__(self, shapes, learning_rate=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
        """
        :param shapes: parameter shapes, in the order parameters are passed to `adam_step`
        """
        self.first_moments = [np.zeros(shape, dtype=DTYPE) for shape in shapes]
        self.second_moments = [np.zeros(shape, dtype=DTYPE) for shape in shapes]
        self.step = 0
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon


def adam_step(params, grads, state):
    """
    Applies one bias-corrected Adam update to `params` and advances `state`.

    :param params: list of Tensor parameters, updated in place
    :param grads: list of gradient arrays, None counts as zero
    :type state: AdamState
    :return: the updated parameters
    """
    if len(params) != len(grads) or len(params) != len(state.first_moments):
        raise DimensionError('Adam received %d parameters, %d gradients and %d moment slots.'
                             % (len(params), len(grads), len(state.first_moments)))

    state.step += 1
    correction1 = 1.0 - state.beta1 ** state.step
    correction2 = 1.0 - state.beta2 ** state.step
    for i, (param, grad) in enumerate(zip(params, grads)):
        if grad is None:
            grad = np.zeros_like(param.values)
        if grad.shape != param.shape or state.first_moments[i].shape != param.shape:
            raise DimensionError('Adam shape mismatch: parameter %s, gradient %s, state %s.'
                                 % (param.shape, grad.shape, state.first_moments[i].shape))
        m = state.beta1 * state.first_moments[i] + (1.0 - state.beta1) * grad
        v = state.beta2 * state.second_moments[i] + (1.0 - state.beta2) * grad * grad
        state.first_moments[i] = m
        state.second_moments[i] = v
        update = state.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + state.epsilon)
        param.values = param.values - update
    return params


class Adam(object):
    def __init__(self, params, learning_rate=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.params = list(params)
        self.state = AdamState([p.shape for p in self.params], learning_rate, beta1, beta2, epsilon)

    def zero_grad(self):
        for param in self.params:
            param.zero_grad()

    def step(self):
        adam_step(self.params, [p.grad for p in self.params], self.state)


def grad_check(fn, point, h=1e-5, max_coordinates=None, seed=0):
    """
    Compares reverse-mode gradients of a scalar function with central differences.

    :param fn: callable receiving the tensors of `point` as positional arguments and returning a scalar Tensor
    :param point: a Tensor, an array or a list of them; Tensors are perturbed in place and restored
    :param h: finite-difference step
    :param max_coordinates: if set, check only this many randomly chosen coordinates
    :return: max|analytic - numeric| / max(max|analytic|, max|numeric|), 0 when both gradients vanish
    :rtype: float
    """
    if isinstance(point, (Tensor, np.ndarray)) or np.isscalar(point):
        point = [point]
    tensors = []
    for p in point:
        tensor = p if isinstance(p, Tensor) else Tensor(p)
        tensor.requires_grad = True
        tensor.zero_grad()
        tensors.append(tensor)

    fn(*tensors).backward()
    analytic_grads = [np.zeros_like(t.values) if t.grad is None else t.grad.copy() for t in tensors]

    coordinates = [(i, j) for i, t in enumerate(tensors) for j in range(t.values.size)]
    if max_coordinates is not None and max_coordinates < len(coordinates):
        picked = make_rng(seed).choice(len(coordinates), size=max_coordinates, replace=False)
        coordinates = [coordinates[k] for k in sorted(picked)]

    analytic = np.empty(len(coordinates))
    numeric = np.empty(len(coordinates))
    with no_grad():
        for k, (i, j) in enumerate(coordinates):
            tensor = tensors[i]
            original = tensor.values
            shifted = original.copy().reshape(-1)
            shifted[j] = original.reshape(-1)[j] + h
            tensor.values = shifted.reshape(original.shape)
            f_plus = fn(*tensors).item()
            shifted[j] = original.reshape(-1)[j] - h
            tensor.values = shifted.reshape(original.shape)
            f_minus = fn(*tensors).item()
            tensor.values = original
            numeric[k] = (f_plus - f_minus) / (2.0 * h)
            analytic[k] = analytic_grads[i].reshape(-1)[j]

    scale = max(np.max(np.abs(analytic), initial=0.0), np.max(np.abs(numeric), initial=0.0))
    if scale == 0.0:
        return 0.0
    error = float(np.max(np.abs(analytic - numeric)) / scale)
    logger.debug('Gradient check over %d coordinates: relative error %.3e', len(coordinates), error)
    return error
