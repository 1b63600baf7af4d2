import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import pandas as pd

from module_utils import diffcore as dc
from module_utils.common import LossTerm, SkdanDataError, TrainingDivergedError, make_rng, spawn_seeds
from module_utils.hyperparams import AblationFlags
from module_utils.losses import LossWeights, overall_loss
from module_utils.metrics import metrics_from_predictions
from module_utils.model import SkdanModel

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ('epoch',) + LossTerm.ORDER


class LossTrace(object):
    """Per-epoch means of the loss components; `total` is recomposed from the means and the loss weights."""

    def __init__(self, weights):
        self.weights = weights
        self.rows = []

    def record(self, epoch, prediction, mmd, smooth):
        total = prediction + self.weights.mmd_weight * mmd + self.weights.smoothness_weight * smooth
        row = {
            'epoch': epoch,
            LossTerm.PRE: prediction,
            LossTerm.MMD: mmd,
            LossTerm.SMOOTH: smooth,
            LossTerm.TOTAL: total,
        }
        self.rows.append(row)
        return row

    def column(self, name):
        return np.array([row[name] for row in self.rows])

    def to_frame(self):
        return pd.DataFrame(self.rows, columns=list(TRACE_COLUMNS))

    def write_csv(self, path):
        self.to_frame().to_csv(path, index=False, float_format='%.12e')

    def __len__(self):
        return len(self.rows)


@dataclass
class FitResult:
    model: SkdanModel
    trace: LossTrace
    best_epoch: Optional[int] = None
    best_validation_rmse: Optional[float] = None
    validation_history: List[tuple] = field(default_factory=list)


def _check_inputs(source, target):
    if source is None or source.n_samples == 0:
        raise SkdanDataError('Source domain is empty.')
    if not source.labeled:
        raise SkdanDataError('Source domain must be labeled.')
    if target is None or target.n_samples == 0:
        raise SkdanDataError('Target domain is empty.')
    if source.segment_length != target.segment_length:
        raise SkdanDataError('Source and target segment lengths differ: %d vs %d.'
                             % (source.segment_length, target.segment_length))
    if not (source.normalized and target.normalized):
        logger.warning('Training on datasets that are not min-max normalized')


def _diverged(epoch, breakdown):
    for term, value in ((LossTerm.PRE, breakdown.prediction), (LossTerm.MMD, breakdown.mmd),
                        (LossTerm.SMOOTH, breakdown.smooth), (LossTerm.TOTAL, breakdown.total.item())):
        if not np.isfinite(value):
            raise TrainingDivergedError(epoch, term, value)


def fit(source, target, hp, flags=None, validation=None, bank=None):
    """
    Trains a fresh model with minibatch Adam on the composite objective.

    Each epoch shuffles the source and draws an independent target order; target minibatches have the
    size of their source minibatch and wrap around the target set. Target labels are never read.

    :param source: labeled, normalized DomainDataset
    :param target: normalized DomainDataset; any labels it carries are dropped
    :type hp: module_utils.hyperparams.HyperConfig
    :type flags: AblationFlags
    :param validation: optional labeled DomainDataset; the parameters with the lowest validation RMSE are kept
    :param bank: fixed KernelBank, median heuristic per batch when omitted
    :rtype: FitResult
    """
    flags = flags or AblationFlags()
    _check_inputs(source, target)
    if target.labeled:
        target, _ = target.without_labels()
    target_features = target.features

    model_seed, training_seed = spawn_seeds(hp.seed, 2)
    model = SkdanModel.build(hp, flags, seed=model_seed, input_length=source.segment_length)
    # start the regression head at the mean label
    model.predictor_params['fnn.b2'].values = np.array([float(np.mean(source.labels))])

    optimizer = dc.Adam(model.parameter_list(), hp.learning_rate)
    weights = LossWeights(*hp.effective_weights(flags))
    rng = make_rng(training_seed)
    trace = LossTrace(weights)
    result = FitResult(model, trace)
    best_snapshot = None

    n_source = source.n_samples
    n_target = target.n_samples
    log_every = max(1, hp.max_epochs // 10)
    logger.info('Training %d parameters on %d source and %d target samples (%s)', model.parameter_count(),
                n_source, n_target, flags.describe())

    for epoch in range(1, hp.max_epochs + 1):
        source_order = rng.permutation(n_source)
        target_order = rng.permutation(n_target)
        sums = np.zeros(3)
        for start in range(0, n_source, hp.batch_size):
            source_idx = source_order[start:start + hp.batch_size]
            target_idx = target_order[np.arange(start, start + len(source_idx)) % n_target]

            optimizer.zero_grad()
            breakdown = overall_loss(source.features[source_idx], source.labels[source_idx],
                                     target_features[target_idx], model, weights, rng, bank, hp.kernel_count)
            _diverged(epoch, breakdown)
            breakdown.total.backward()
            optimizer.step()
            sums += len(source_idx) * np.array([breakdown.prediction, breakdown.mmd, breakdown.smooth])

        row = trace.record(epoch, *(sums / n_source))
        if epoch % log_every == 0 or epoch == hp.max_epochs:
            logger.info('epoch %d/%d %s=%.6g %s=%.6g %s=%.6g %s=%.6g', epoch, hp.max_epochs,
                        LossTerm.PRE, row[LossTerm.PRE], LossTerm.MMD, row[LossTerm.MMD],
                        LossTerm.SMOOTH, row[LossTerm.SMOOTH], LossTerm.TOTAL, row[LossTerm.TOTAL])

        if validation is not None and (epoch % hp.eval_every == 0 or epoch == hp.max_epochs):
            rmse = metrics_from_predictions(model.predict_array(validation.features), validation.labels).rmse
            result.validation_history.append((epoch, rmse))
            if result.best_validation_rmse is None or rmse < result.best_validation_rmse:
                result.best_validation_rmse = rmse
                result.best_epoch = epoch
                best_snapshot = model.snapshot()

    if best_snapshot is not None:
        model.restore(best_snapshot)
        logger.debug('Restored parameters of epoch %d (validation RMSE %.6g)', result.best_epoch,
                     result.best_validation_rmse)
    return result
