"""
Self-attention distillation extractor: a convolutional embedding with positional encoding followed by
blocks of multi-head scaled dot-product attention and a conv/ELU/max-pool distillation step that halves
the sequence length.
"""
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from module_utils import diffcore as dc
from module_utils.common import CHANNEL_COUNT, SEGMENT_LENGTH, DimensionError, LengthError, SkdanConfigurationError

EMBED_KERNEL_SIZE = 3
DISTILL_KERNEL_SIZE = 3
DISTILL_POOL = 2
CLASSIC_PE_BASE = 10000.0


class PeBase:
    SEGMENT = 'segment'
    CLASSIC = 'classic'


@dataclass
class SadConfig:
    d_model: int = 128
    n_heads: int = 2
    n_layers: int = 2
    pe_base: str = PeBase.SEGMENT
    input_length: int = SEGMENT_LENGTH
    input_channels: int = CHANNEL_COUNT
    disable_attention: bool = False
    disable_distillation: bool = False

    def __post_init__(self):
        if self.d_model < 2 or self.d_model % 2:
            raise SkdanConfigurationError('d_model must be a positive even number, got %s.' % self.d_model)
        if self.n_heads < 1 or self.d_model % self.n_heads:
            raise SkdanConfigurationError('d_model (%s) must be divisible by the number of heads (%s).'
                                          % (self.d_model, self.n_heads))
        if self.n_layers < 0:
            raise SkdanConfigurationError('n_layers must be non-negative, got %s.' % self.n_layers)
        if self.pe_base not in (PeBase.SEGMENT, PeBase.CLASSIC):
            raise SkdanConfigurationError("Unknown positional encoding base '%s'." % self.pe_base)
        if not self.disable_distillation and self.input_length // 2 ** self.n_layers < 1:
            raise SkdanConfigurationError('%d distillation layers cannot halve a %d-point segment.'
                                          % (self.n_layers, self.input_length))

    @property
    def head_dim(self):
        return self.d_model // self.n_heads

    @property
    def output_length(self):
        if self.disable_distillation:
            return self.input_length
        length = self.input_length
        for _ in range(self.n_layers):
            length = dc.pool_length(length, DISTILL_POOL, DISTILL_POOL)
        return length

    @property
    def pe_denominator_base(self):
        return 2.0 * self.input_length if self.pe_base == PeBase.SEGMENT else CLASSIC_PE_BASE


def init_sad_params(config, rng):
    """
    Glorot-uniform weights and zero biases, keyed in declaration order.

    :type config: SadConfig
    :rtype: OrderedDict
    """
    d = config.d_model
    params = OrderedDict()
    params['embed.kernels'] = dc.parameter(dc.glorot_uniform(
        rng, (EMBED_KERNEL_SIZE, config.input_channels, d),
        EMBED_KERNEL_SIZE * config.input_channels, EMBED_KERNEL_SIZE * d))
    params['embed.bias'] = dc.parameter(np.zeros(d))
    for layer in range(config.n_layers):
        if not config.disable_attention:
            for head in range(config.n_heads):
                for role in ('query', 'key', 'value'):
                    params['layer%d.head%d.%s' % (layer, head, role)] = dc.parameter(
                        dc.glorot_uniform(rng, (d, config.head_dim), d, config.head_dim))
        if not config.disable_distillation:
            params['layer%d.distill.kernels' % layer] = dc.parameter(dc.glorot_uniform(
                rng, (DISTILL_KERNEL_SIZE, d, d), DISTILL_KERNEL_SIZE * d, DISTILL_KERNEL_SIZE * d))
            params['layer%d.distill.bias' % layer] = dc.parameter(np.zeros(d))
    return params


def head_params(params, layer, n_heads):
    return [tuple(params['layer%d.head%d.%s' % (layer, head, role)] for role in ('query', 'key', 'value'))
            for head in range(n_heads)]


def positional_encoding(n, d_model, base=None):
    """
    P[k, 2j] = sin(k / base ** (2j / d_model)) and P[k, 2j + 1] = cos(k / base ** (2j / d_model)),
    with base = 2n unless given.
    """
    if n < 1:
        raise LengthError('Positional encoding needs a positive length, got %s.' % n)
    if d_model % 2:
        raise SkdanConfigurationError('Positional encoding needs an even d_model, got %s.' % d_model)
    base = 2.0 * n if base is None else float(base)
    positions = np.arange(n, dtype=np.float64)[:, None]
    exponents = np.arange(0, d_model, 2, dtype=np.float64) / d_model
    angles = positions / np.power(base, exponents)
    encoding = np.empty((n, d_model))
    encoding[:, 0::2] = np.sin(angles)
    encoding[:, 1::2] = np.cos(angles)
    return encoding


def embed_input(x, params, config):
    """G = P + Conv1d(X) with a same-padded kernel-3 convolution lifting the channels to d_model."""
    x = dc.as_tensor(x)
    if x.ndim < 2 or x.shape[-1] != config.input_channels:
        raise DimensionError('Extractor input must have %d channels, got shape %s.'
                             % (config.input_channels, x.shape), obj=x.shape)
    encoding = positional_encoding(x.shape[-2], config.d_model, config.pe_denominator_base)
    return dc.conv1d(x, params['embed.kernels'], params['embed.bias']) + encoding


def multi_head_attention(g, heads, return_weights=False):
    """
    Concatenation of softmax(Q_i K_i^T / sqrt(d_k)) V_i over heads, without an output projection.

    :param g: Tensor [..., n, d_model]
    :param heads: list of (W_Q, W_K, W_V) tensors, each [d_model, d_k]
    :return: Tensor [..., n, d_model], plus the list of attention weight arrays when `return_weights`
    """
    outputs = []
    weights = []
    for w_query, w_key, w_value in heads:
        query = dc.matmul(g, w_query)
        key = dc.matmul(g, w_key)
        value = dc.matmul(g, w_value)
        scores = dc.matmul(query, dc.transpose(key)) * (1.0 / np.sqrt(w_key.shape[-1]))
        attention = dc.softmax_rows(scores)
        weights.append(attention.values)
        outputs.append(dc.matmul(attention, value))
    out = outputs[0] if len(outputs) == 1 else dc.concat(outputs, axis=-1)
    if return_weights:
        return out, weights
    return out


def distill(h, kernels, bias):
    """MaxPool(ELU(Conv1d(H))) with pool window and stride 2."""
    h = dc.as_tensor(h)
    if h.shape[-2] < DISTILL_POOL:
        raise LengthError('Distillation needs at least %d rows, got %d.' % (DISTILL_POOL, h.shape[-2]),
                          obj=h.shape[-2])
    return dc.maxpool1d(dc.elu(dc.conv1d(h, kernels, bias)), DISTILL_POOL, DISTILL_POOL)


def extract_features(x, params, config):
    """
    :param x: normalized segments, Tensor or array [..., input_length, 4]
    :return: Tensor [..., output_length, d_model]
    """
    g = embed_input(x, params, config)
    for layer in range(config.n_layers):
        h = g if config.disable_attention else multi_head_attention(g, head_params(params, layer, config.n_heads))
        if config.disable_distillation:
            g = h
        else:
            g = distill(h, params['layer%d.distill.kernels' % layer], params['layer%d.distill.bias' % layer])
    return g
