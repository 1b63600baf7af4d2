"""
CNN predictor: two conv/ReLU/max-pool blocks, flatten, dropout and a one-hidden-layer FNN head,
plus the smoothness penalty on Gaussian feature perturbations.
"""
from collections import OrderedDict
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from module_utils import diffcore as dc
from module_utils.common import LengthError, Mode, SkdanConfigurationError

POOL_SIZE = 4
POOL_STRIDE = 4


@dataclass
class PredictorConfig:
    input_length: int
    input_channels: int
    kernel_size: int = 3
    conv_channels: Tuple[int, ...] = (32, 16)
    fnn_width: int = 64
    dropout: float = 0.3
    noise_scale: float = 0.01
    fnn_only: bool = False

    def __post_init__(self):
        self.conv_channels = tuple(int(c) for c in self.conv_channels)
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise SkdanConfigurationError('Predictor kernel size must be odd, got %s.' % self.kernel_size)
        if not 0.0 <= self.dropout < 1.0:
            raise SkdanConfigurationError('Dropout rate must lie in [0, 1), got %s.' % self.dropout)
        if self.noise_scale < 0:
            raise SkdanConfigurationError('Smoothness noise scale must be non-negative, got %s.' % self.noise_scale)
        if self.fnn_width < 1 or any(c < 1 for c in self.conv_channels):
            raise SkdanConfigurationError('Layer widths must be positive.')
        if not self.fnn_only:
            length = self.input_length
            for _ in self.conv_channels:
                if length < POOL_SIZE:
                    raise SkdanConfigurationError(
                        'A %d-point feature map is too short for %d pooling blocks of size %d.'
                        % (self.input_length, len(self.conv_channels), POOL_SIZE))
                length = dc.pool_length(length, POOL_SIZE, POOL_STRIDE)

    @property
    def output_length(self):
        length = self.input_length
        if not self.fnn_only:
            for _ in self.conv_channels:
                length = dc.pool_length(length, POOL_SIZE, POOL_STRIDE)
        return length

    @property
    def flattened_width(self):
        channels = self.input_channels if self.fnn_only or not self.conv_channels else self.conv_channels[-1]
        return self.output_length * channels


def init_predictor_params(config, rng):
    """
    :type config: PredictorConfig
    :rtype: OrderedDict
    """
    params = OrderedDict()
    if not config.fnn_only:
        previous = config.input_channels
        for j, channels in enumerate(config.conv_channels):
            params['conv%d.kernels' % j] = dc.parameter(dc.glorot_uniform(
                rng, (config.kernel_size, previous, channels),
                config.kernel_size * previous, config.kernel_size * channels))
            params['conv%d.bias' % j] = dc.parameter(np.zeros(channels))
            previous = channels
    width = config.flattened_width
    params['fnn.w1'] = dc.parameter(dc.glorot_uniform(rng, (width, config.fnn_width), width, config.fnn_width))
    params['fnn.b1'] = dc.parameter(np.zeros(config.fnn_width))
    params['fnn.w2'] = dc.parameter(dc.glorot_uniform(rng, (config.fnn_width, 1), config.fnn_width, 1))
    params['fnn.b2'] = dc.parameter(np.zeros(1))
    return params


def conv_block(f, kernels, bias):
    """Same-padded convolution, ReLU, then max-pool with window and stride 4."""
    f = dc.as_tensor(f)
    if f.shape[-2] < POOL_SIZE:
        raise LengthError('A conv block needs at least %d rows, got %d.' % (POOL_SIZE, f.shape[-2]),
                          obj=f.shape[-2])
    return dc.maxpool1d(dc.relu(dc.conv1d(f, kernels, bias)), POOL_SIZE, POOL_STRIDE)


def predict_soh(features, params, config, mode=Mode.EVAL, rng=None):
    """
    :param features: extractor output, Tensor [batch, L, d_model] or [L, d_model]
    :param mode: Mode.TRAIN enables dropout between flatten and the FNN
    :return: Tensor [batch] of SOH estimates, or a 0-d Tensor for unbatched input
    """
    f = dc.as_tensor(features)
    unbatched = f.ndim == 2
    if unbatched:
        f = dc.reshape(f, (1,) + f.shape)

    if not config.fnn_only:
        for j in range(len(config.conv_channels)):
            f = conv_block(f, params['conv%d.kernels' % j], params['conv%d.bias' % j])
    z = dc.reshape(f, (f.shape[0], -1))
    z = dc.dropout(z, config.dropout, rng, training=mode == Mode.TRAIN)
    hidden = dc.relu(dc.matmul(z, params['fnn.w1']) + params['fnn.b1'])
    out = dc.matmul(hidden, params['fnn.w2']) + params['fnn.b2']
    return dc.reshape(out, () if unbatched else (out.shape[0],))


def smooth_loss(features, params, config, rng):
    """
    Mean over the batch of (f_p(F) - f_p(F + noise_scale * delta)) ** 2, delta standard normal,
    both branches evaluated without dropout.
    """
    features = dc.as_tensor(features)
    delta = rng.standard_normal(features.shape)
    clean = predict_soh(features, params, config, Mode.EVAL)
    perturbed = predict_soh(features + config.noise_scale * delta, params, config, Mode.EVAL)
    gap = clean - perturbed
    return dc.mean(gap * gap)
