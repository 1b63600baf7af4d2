"""
Training objective: source prediction MSE, multi-kernel MMD between source and target features,
and the smoothness penalty, combined as L_pre + mmd_weight * L_MMD + smoothness_weight * L_smooth.
"""
import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from module_utils import diffcore as dc
from module_utils.common import DimensionError, LossTerm, Mode, SkdanConfigurationError, SkdanDataError

logger = logging.getLogger(__name__)

DEFAULT_MULTIPLIERS = (0.25, 0.5, 1.0, 2.0, 4.0)


@dataclass
class KernelBank:
    bandwidths: Tuple[float, ...]
    weights: Tuple[float, ...] = None

    def __post_init__(self):
        self.bandwidths = tuple(float(b) for b in self.bandwidths)
        if self.weights is None:
            self.weights = tuple(1.0 / len(self.bandwidths) for _ in self.bandwidths)
        self.weights = tuple(float(w) for w in self.weights)
        if not self.bandwidths or len(self.weights) != len(self.bandwidths):
            raise SkdanConfigurationError('A kernel bank needs one weight per bandwidth.')
        if any(b <= 0 for b in self.bandwidths):
            raise SkdanConfigurationError('Kernel bandwidths must be positive, got %s.' % (self.bandwidths,))
        if any(w < 0 for w in self.weights) or abs(sum(self.weights) - 1.0) > 1e-12:
            raise SkdanConfigurationError('Kernel weights must be non-negative and sum to 1, got %s.'
                                          % (self.weights,))

    @property
    def size(self):
        return len(self.bandwidths)

    @classmethod
    def single(cls, bandwidth):
        return cls((bandwidth,), (1.0,))

    @classmethod
    def median_heuristic(cls, source, target, kernel_count=len(DEFAULT_MULTIPLIERS)):
        """
        Bandwidths are the median pairwise distance of the joint sample times fixed multipliers,
        computed from plain values so that no gradient flows through them.

        :param kernel_count: 5 for the default bank, 1 for a single kernel at the median distance
        """
        joint = np.concatenate([_values(source), _values(target)])
        squared = pairwise_squared_distances(joint, joint)
        off_diagonal = squared[~np.eye(len(joint), dtype=bool)]
        positive = off_diagonal[off_diagonal > 0]
        median = float(np.sqrt(np.median(positive))) if positive.size else 1.0
        return cls(tuple(median * m for m in multipliers_for(kernel_count)))


def multipliers_for(kernel_count):
    if kernel_count == len(DEFAULT_MULTIPLIERS):
        return DEFAULT_MULTIPLIERS
    if kernel_count < 1:
        raise SkdanConfigurationError('kernel_count must be at least 1, got %s.' % kernel_count)
    if kernel_count == 1:
        return (1.0,)
    return tuple(np.logspace(-2, 2, kernel_count, base=2.0))


@dataclass
class LossWeights:
    mmd_weight: float = 1.0
    smoothness_weight: float = 0.0

    def __post_init__(self):
        if self.mmd_weight < 0 or self.smoothness_weight < 0:
            raise SkdanConfigurationError('Loss weights must be non-negative, got %s and %s.'
                                          % (self.mmd_weight, self.smoothness_weight))


@dataclass
class LossBreakdown:
    total: dc.Tensor
    prediction: float
    mmd: float
    smooth: float
    weights: LossWeights

    def components(self):
        return {
            LossTerm.PRE: self.prediction,
            LossTerm.MMD: self.mmd,
            LossTerm.SMOOTH: self.smooth,
            LossTerm.TOTAL: self.total.item(),
        }


def _values(x):
    return x.values if isinstance(x, dc.Tensor) else np.asarray(x, dtype=np.float64)


def pairwise_squared_distances(a, b):
    sq_a = np.sum(a * a, axis=1)[:, None]
    sq_b = np.sum(b * b, axis=1)[None, :]
    return np.maximum(sq_a + sq_b - 2.0 * a @ b.T, 0.0)


def prediction_loss(pred, label):
    """Mean of squared residuals."""
    pred = dc.as_tensor(pred)
    label = np.asarray(label, dtype=np.float64)
    if pred.shape != label.shape or pred.values.size < 1:
        raise DimensionError('Predictions %s and labels %s must be equal-length non-empty vectors.'
                             % (pred.shape, label.shape), obj=(pred.shape, label.shape))
    residual = pred - label
    return dc.mean(residual * residual)


def _squared_distances(a, b):
    sq_a = dc.tensor_sum(a * a, axis=1, keepdims=True)
    sq_b = dc.transpose(dc.tensor_sum(b * b, axis=1, keepdims=True))
    return dc.clip_min(sq_a + sq_b - 2.0 * dc.matmul(a, dc.transpose(b)), 0.0)


def kernel_mean(a, b, bank):
    """Mean over all pairs of the weighted sum of Gaussian kernels exp(-|a_i - b_j|^2 / (2 sigma^2))."""
    distances = _squared_distances(a, b)
    total = None
    for bandwidth, weight in zip(bank.bandwidths, bank.weights):
        term = dc.exp(distances * (-1.0 / (2.0 * bandwidth * bandwidth))) * weight
        total = term if total is None else total + term
    return dc.mean(total)


def mk_mmd(fs, ft, bank=None, kernel_count=len(DEFAULT_MULTIPLIERS)):
    """
    Biased (V-statistic) multi-kernel MMD between source and target feature vectors.

    :param fs: Tensor or array [N_s, width]
    :param ft: Tensor or array [N_t, width]
    :param bank: KernelBank, median heuristic over the joint sample when omitted
    :rtype: Tensor
    """
    fs, ft = dc.as_tensor(fs), dc.as_tensor(ft)
    if fs.ndim != 2 or ft.ndim != 2 or fs.shape[0] == 0 or ft.shape[0] == 0:
        raise SkdanDataError('MK-MMD needs two non-empty [N, width] feature sets, got %s and %s.'
                             % (fs.shape, ft.shape))
    if fs.shape[1] != ft.shape[1]:
        raise DimensionError('Source width %d differs from target width %d.' % (fs.shape[1], ft.shape[1]))
    if bank is None:
        bank = KernelBank.median_heuristic(fs, ft, kernel_count)
    return kernel_mean(fs, fs, bank) + kernel_mean(ft, ft, bank) - 2.0 * kernel_mean(fs, ft, bank)


def flatten_features(features):
    return dc.reshape(features, (features.shape[0], -1))


def overall_loss(source_x, source_y, target_x, model, weights, rng, bank=None, kernel_count=5):
    """
    Builds the differentiable training objective for one pair of minibatches.

    MMD is evaluated only when its weight is positive, as is the smoothness term; a skipped term is
    reported as 0.

    :param model: SkdanModel
    :type weights: LossWeights
    :param bank: fixed KernelBank, median heuristic per batch when omitted
    :rtype: LossBreakdown
    """
    if len(source_x) == 0:
        raise SkdanDataError('Source minibatch is empty.')
    source_features = model.extract(source_x)
    predictions = model.predict(source_features, Mode.TRAIN, rng)
    total = prediction_loss(predictions, source_y)
    prediction_value = total.item()

    mmd_value = 0.0
    if weights.mmd_weight > 0:
        if target_x is None or len(target_x) == 0:
            raise SkdanDataError('Target minibatch is empty.')
        target_features = model.extract(target_x)
        mmd = mk_mmd(flatten_features(source_features), flatten_features(target_features), bank, kernel_count)
        mmd_value = mmd.item()
        total = total + mmd * weights.mmd_weight

    smooth_value = 0.0
    if weights.smoothness_weight > 0:
        smooth = model.smooth_loss(source_features, rng)
        smooth_value = smooth.item()
        total = total + smooth * weights.smoothness_weight

    return LossBreakdown(total, prediction_value, mmd_value, smooth_value, weights)
