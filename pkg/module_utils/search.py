"""
Random hyperparameter search ranked by validation RMSE on a held-out part of the source domain.
"""
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd

from module_utils.common import SkdanConfigurationError, TrainingDivergedError, make_rng, spawn_seeds
from module_utils.config_schema import ModelName, validate_or_raise
from module_utils.datapipe import holdout_split
from module_utils.hyperparams import AblationFlags, HyperConfig
from module_utils.metrics import evaluate
from module_utils.training import fit

logger = logging.getLogger(__name__)

HYPER_FIELDS = tuple(f.name for f in fields(HyperConfig))

DEFAULT_SPACE = {
    'batch_size': {'choices': [16, 32, 64]},
    'learning_rate': {'low': 1e-5, 'high': 1e-2, 'log': True},
    'n_attention_layers': {'choices': [1, 2, 3]},
    'd_model': {'choices': [64, 128]},
    'n_heads': {'choices': [1, 2, 4]},
    'kernel_size': {'choices': [3, 5]},
    'fnn_width': {'choices': [16, 32, 64]},
    'dropout': {'choices': [0.2, 0.3, 0.4]},
    'smoothness_weight': {'low': 0.01, 'high': 0.2, 'log': True},
    'mmd_weight': {'low': 0.1, 'high': 2.0, 'log': True},
}
INTEGER_FIELDS = ('batch_size', 'n_attention_layers', 'd_model', 'n_heads', 'kernel_size', 'fnn_width',
                  'max_epochs', 'kernel_count', 'eval_every')


class TrialStatus:
    OK = 'ok'
    DIVERGED = 'diverged'


@dataclass
class SearchDimension:
    name: str
    choices: Optional[Tuple] = None
    low: Optional[float] = None
    high: Optional[float] = None
    log: bool = False

    def __post_init__(self):
        if self.name not in HYPER_FIELDS or self.name == 'seed':
            raise SkdanConfigurationError("'%s' is not a searchable hyperparameter." % self.name, obj=self.name)
        if self.choices is not None:
            self.choices = tuple(self.choices)
            if not self.choices:
                raise SkdanConfigurationError("Search dimension '%s' has no choices." % self.name)
        elif self.low is None or self.high is None or not self.low <= self.high:
            raise SkdanConfigurationError("Search dimension '%s' needs choices or low <= high." % self.name)
        elif self.log and self.low <= 0:
            raise SkdanConfigurationError("Log-uniform dimension '%s' needs a positive lower bound." % self.name)

    def sample(self, rng):
        if self.choices is not None:
            value = self.choices[int(rng.integers(len(self.choices)))]
        elif self.log:
            value = float(math.exp(rng.uniform(math.log(self.low), math.log(self.high))))
        else:
            value = float(rng.uniform(self.low, self.high))
        if self.name in INTEGER_FIELDS:
            return int(round(value))
        return value

    def contains(self, value):
        if self.choices is not None:
            return value in self.choices
        return self.low <= value <= self.high


class SearchSpace(object):
    def __init__(self, dimensions):
        self.dimensions = list(dimensions)

    @classmethod
    def from_dict(cls, data=None):
        """
        :param data: mapping of hyperparameter name to {choices: [...]} or {low, high, log}; the default space
            when omitted
        """
        data = DEFAULT_SPACE if data is None else data
        dimensions = []
        for name in sorted(data):
            spec = data[name] or {}
            validate_or_raise(ModelName.SEARCH_DIMENSION, spec)
            dimensions.append(SearchDimension(name, spec.get('choices'), spec.get('low'), spec.get('high'),
                                              bool(spec.get('log', False))))
        return cls(dimensions)

    def __getitem__(self, name):
        for dimension in self.dimensions:
            if dimension.name == name:
                return dimension
        raise KeyError(name)

    def sample(self, rng, base):
        """
        Draws one configuration on top of `base`, redrawing until the combination is valid
        (e.g. d_model divisible by n_heads).
        """
        for _ in range(100):
            changes = dict((d.name, d.sample(rng)) for d in self.dimensions)
            try:
                return base.replace(**changes)
            except SkdanConfigurationError as e:
                logger.debug('Rejected sampled configuration %s: %s', changes, e.msg)
        raise SkdanConfigurationError('Could not draw a valid configuration from the search space.')


@dataclass
class TrialResult:
    trial_id: int
    config: HyperConfig
    validation_rmse: float
    validation_mae: float
    best_epoch: Optional[int]
    status: str = TrialStatus.OK

    def to_dict(self):
        row = {
            'trial_id': self.trial_id,
            'validation_rmse': self.validation_rmse,
            'validation_mae': self.validation_mae,
            'best_epoch': self.best_epoch,
            'status': self.status,
        }
        row.update(self.config.to_dict())
        return row


@dataclass
class SearchResult:
    best_config: HyperConfig
    leaderboard: List[TrialResult]

    def to_frame(self):
        frame = pd.DataFrame([t.to_dict() for t in self.leaderboard])
        frame['conv_channels'] = frame['conv_channels'].map(lambda c: '-'.join(str(v) for v in c))
        return frame

    def write(self, prefix):
        """Persists the leaderboard as `<prefix>.csv` and `<prefix>.json`."""
        self.to_frame().to_csv(prefix + '.csv', index=False, float_format='%.12e')
        with open(prefix + '.json', 'w', encoding='utf-8') as f:
            json.dump({'best_config': self.best_config.to_dict(),
                       'leaderboard': [t.to_dict() for t in self.leaderboard]}, f, indent=2, sort_keys=True)


def run_trial(trial_id, config, train, validation, target, flags):
    try:
        result = fit(train, target, config, flags, validation=validation)
    except TrainingDivergedError as e:
        logger.warning('Trial %d diverged: %s', trial_id, e.msg)
        return TrialResult(trial_id, config, float('inf'), float('inf'), None, TrialStatus.DIVERGED)
    report = evaluate(result.model, validation)
    logger.info('Trial %d: validation RMSE %.6g', trial_id, report.rmse)
    return TrialResult(trial_id, config, report.rmse, report.mae, result.best_epoch)


def draw_configs(space, n_trials, master_seed, base=None):
    base = base or HyperConfig()
    rng = make_rng(master_seed)
    seeds = spawn_seeds(master_seed, n_trials)
    return [space.sample(rng, base).replace(seed=seed) for seed in seeds]


def random_search(source, target, space=None, n_trials=100, validation_fraction=0.2, flags=None, base=None,
                  master_seed=0, n_jobs=1):
    """
    Trains `n_trials` independently drawn configurations and ranks them by validation RMSE.

    :param source: labeled, normalized source domain; `validation_fraction` of its samples are held out
    :param target: normalized target domain used for adaptation only
    :type space: SearchSpace
    :param base: HyperConfig providing the fields the space does not search (e.g. max_epochs)
    :rtype: SearchResult
    """
    if n_trials < 1:
        raise SkdanConfigurationError('Random search needs at least one trial, got %s.' % n_trials, obj=n_trials)
    space = space or SearchSpace.from_dict()
    flags = flags or AblationFlags()
    train, validation = holdout_split(source, validation_fraction, make_rng(master_seed))
    configs = draw_configs(space, n_trials, master_seed, base)
    logger.info('Random search: %d trials, %d training and %d validation samples', n_trials, train.n_samples,
                validation.n_samples)

    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            futures = [pool.submit(run_trial, i, c, train, validation, target, flags) for i, c in enumerate(configs)]
            trials = [f.result() for f in futures]
    else:
        trials = [run_trial(i, c, train, validation, target, flags) for i, c in enumerate(configs)]

    trials.sort(key=lambda t: t.trial_id)
    leaderboard = sorted(trials, key=lambda t: (t.validation_rmse, t.trial_id))
    if not np.isfinite(leaderboard[0].validation_rmse):
        logger.warning('Every search trial diverged')
    return SearchResult(leaderboard[0].config, leaderboard)
