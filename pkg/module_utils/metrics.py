from dataclasses import dataclass

import numpy as np

from module_utils.common import DimensionError, SkdanConfigurationError, SkdanDataError, check_finite

UNDERESTIMATE_SCALE = 1.3


class ScoreVariant:
    SUM = 'sum'
    MEAN = 'mean'

    ALL = (SUM, MEAN)


@dataclass
class EvalReport:
    rmse: float
    mae: float
    score: float
    score_sum: float
    residuals: np.ndarray
    n: int
    score_variant: str = ScoreVariant.MEAN

    def to_dict(self):
        return {
            'rmse': self.rmse,
            'mae': self.mae,
            'score': self.score,
            'score_sum': self.score_sum,
            'score_variant': self.score_variant,
            'n': self.n,
            'residuals': [float(r) for r in self.residuals],
        }


def score_fn(residuals, variant=ScoreVariant.SUM):
    """
    Asymmetric exponential error: exp(-d / 1.3) - 1 for underestimates (d < 0) and exp(d) - 1 otherwise,
    with d = prediction - label. Overestimation is penalized more.

    :param variant: `sum` over samples, or `mean` (sum divided by the sample count)
    """
    if variant not in ScoreVariant.ALL:
        raise SkdanConfigurationError("Unknown score variant '%s'." % variant, obj=variant)
    d = check_finite(np.asarray(residuals, dtype=np.float64), 'Residuals')
    penalties = np.where(d < 0, np.expm1(-d / UNDERESTIMATE_SCALE), np.expm1(d))
    total = float(np.sum(penalties))
    if variant == ScoreVariant.MEAN:
        return total / len(d) if len(d) else 0.0
    return total


def metrics_from_predictions(predictions, labels, score_variant=ScoreVariant.MEAN):
    predictions = np.asarray(predictions, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels, dtype=np.float64).reshape(-1)
    if len(labels) == 0:
        raise SkdanDataError('Cannot evaluate on an empty test set.')
    if predictions.shape != labels.shape:
        raise DimensionError('Got %d predictions for %d labels.' % (len(predictions), len(labels)))
    residuals = predictions - labels
    return EvalReport(
        rmse=float(np.sqrt(np.mean(residuals * residuals))),
        mae=float(np.mean(np.abs(residuals))),
        score=score_fn(residuals, score_variant),
        score_sum=score_fn(residuals, ScoreVariant.SUM),
        residuals=residuals,
        n=len(residuals),
        score_variant=score_variant,
    )


def evaluate(model, dataset, score_variant=ScoreVariant.MEAN):
    """
    :param model: trained SkdanModel, run in eval mode
    :param dataset: labeled DomainDataset
    :rtype: EvalReport
    """
    if dataset.n_samples == 0:
        raise SkdanDataError('Cannot evaluate on an empty test set.')
    if not dataset.labeled:
        raise SkdanDataError('Evaluation needs a labeled dataset.')
    return metrics_from_predictions(model.predict_array(dataset.features), dataset.labels, score_variant)
