"""
End-to-end transfer experiments: domain construction, optional random search, repeated fits per
ablation variant, evaluation on held-out target batteries, KDE exports and a Markdown summary.
"""
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np
import yaml
from jinja2 import Environment, FileSystemLoader

from module_utils.common import Channel, SkdanConfigurationError, make_rng, spawn_seeds
from module_utils.config_schema import ModelName, apply_defaults, validate_or_raise
from module_utils.datapipe import apply_normalization, channel_statistics, denormalize_domain, export_kde_csv, \
    load_battery, load_dataset, load_metadata, merge_domains, split_by_battery
from module_utils.hyperparams import AblationFlags, HyperConfig
from module_utils.metrics import evaluate
from module_utils.search import SearchSpace, random_search
from module_utils.synthgen import SynthSpec, synth_domain
from module_utils.training import fit

logger = logging.getLogger(__name__)

TEMPLATE_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.realpath(__file__))), 'templates')
SUMMARY_TEMPLATE = 'experiment_summary.md.j2'
DEFAULT_VARIANT = 'skdan'
METRICS = ('rmse', 'mae', 'score')


class NormalizationScope:
    ALL = 'all'
    TRAIN = 'train'


@dataclass
class RepeatOutcome:
    repeat: int
    seed: int
    report: object
    trace: object
    model: object


@dataclass
class VariantSummary:
    name: str
    flags: AblationFlags
    outcomes: List[RepeatOutcome] = field(default_factory=list)

    def aggregate(self):
        """Mean and population standard deviation of each metric over the repeats."""
        stats = {}
        for metric in METRICS:
            values = np.array([getattr(o.report, metric) for o in self.outcomes])
            stats[metric] = {'mean': float(np.mean(values)), 'std': float(np.std(values))}
        return stats


@dataclass
class ExperimentResult:
    name: str
    hyperparameters: HyperConfig
    variants: List[VariantSummary]
    output_dir: str
    kde_files: Dict[str, str] = field(default_factory=dict)

    def variant(self, name):
        for summary in self.variants:
            if summary.name == name:
                return summary
        raise KeyError(name)

    def to_dict(self):
        return {
            'name': self.name,
            'hyperparameters': self.hyperparameters.to_dict(),
            'variants': [{
                'name': v.name,
                'flags': v.flags.to_dict(),
                'aggregate': v.aggregate(),
                'repeats': [dict(o.report.to_dict(), repeat=o.repeat, seed=o.seed) for o in v.outcomes],
            } for v in self.variants],
            'kde_files': dict(self.kde_files),
        }


def load_experiment_file(path):
    """Reads a YAML or JSON experiment file and validates it."""
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = yaml.safe_load(f)
    except (OSError, yaml.YAMLError) as e:
        raise SkdanConfigurationError('Cannot read experiment file %s: %s' % (path, e), obj=path)
    if not isinstance(data, dict):
        raise SkdanConfigurationError('Experiment file %s must contain a mapping.' % path, obj=path)
    return data


def _resolve(base_dir, path):
    return path if os.path.isabs(path) else os.path.join(base_dir, path)


def _domain_paths(entry):
    paths = []
    if entry.get('dataset'):
        paths.append(entry['dataset'])
    for battery in entry.get('batteries') or []:
        paths.extend(p for p in (battery.get('csv'), battery.get('metadata'), battery.get('labels')) if p)
    return paths


def check_domain_entry(entry, role, base_dir):
    given = [key for key in ('synthetic', 'batteries', 'dataset') if entry.get(key)]
    if len(given) != 1:
        raise SkdanConfigurationError("The %s domain needs exactly one of 'synthetic', 'batteries' or 'dataset', "
                                      "got %s." % (role, given or 'none'), obj=role)
    for path in _domain_paths(entry):
        if not os.path.exists(_resolve(base_dir, path)):
            raise SkdanConfigurationError('The %s domain references a missing file: %s' % (role, path), obj=path)
    for battery in entry.get('batteries') or []:
        if not battery.get('labels'):
            raise SkdanConfigurationError('Every %s battery needs a labels file (%s has none).'
                                          % (role, battery['csv']), obj=battery['csv'])


def domain_soc_span(entry, base_dir):
    if entry.get('synthetic'):
        spec = SynthSpec.from_dict(entry['synthetic'])
        return spec.soc_window[1] - spec.soc_window[0]
    if entry.get('batteries'):
        return load_metadata(_resolve(base_dir, entry['batteries'][0]['metadata'])).soc_span
    return load_dataset(_resolve(base_dir, entry['dataset'])).metadata.soc_span


def build_domain_from_entry(entry, base_dir, window_dod, step, ic_smoothing):
    """
    :return: labeled, unnormalized DomainDataset
    """
    if entry.get('synthetic'):
        return synth_domain(SynthSpec.from_dict(entry['synthetic']), window_dod, step, normalize=False,
                            ic_smoothing=ic_smoothing)
    if entry.get('batteries'):
        datasets = [load_battery(_resolve(base_dir, b['csv']), _resolve(base_dir, b['metadata']),
                                 _resolve(base_dir, b['labels']), window_dod, step,
                                 battery_id=b.get('battery_id') or os.path.splitext(os.path.basename(b['csv']))[0],
                                 ic_smoothing=ic_smoothing)
                    for b in entry['batteries']]
        return merge_domains(datasets)
    dataset = load_dataset(_resolve(base_dir, entry['dataset']))
    return denormalize_domain(dataset) if dataset.normalized else dataset


def prepare_domains(config, base_dir, rng):
    """
    :return: (source, target used for adaptation without labels, labeled target test set)
    """
    window_dod = config.get('window_dod') or domain_soc_span(config['target'], base_dir)
    step = config['step']
    source = build_domain_from_entry(config['source'], base_dir, window_dod, step, config['ic_smoothing'])
    target = build_domain_from_entry(config['target'], base_dir, window_dod, step, config['ic_smoothing'])
    if not source.labeled:
        raise SkdanConfigurationError('The source domain has no SOH labels.')

    if len(set(str(b) for b in target.battery_ids)) >= 2:
        target_train, target_test = split_by_battery(target, config['split_fraction'], rng)
    else:
        logger.warning('The target domain has a single battery; it is used for both adaptation and testing')
        target_train, target_test = target, target

    if config['normalization'] == NormalizationScope.TRAIN:
        target_stats = channel_statistics(target_train.features)
    else:
        target_stats = channel_statistics(target.features)
    source = apply_normalization(source, *channel_statistics(source.features))
    target_train = apply_normalization(target_train, *target_stats)
    target_test = apply_normalization(target_test, *target_stats)
    target_train, _ = target_train.without_labels()
    logger.info('Source: %d samples; target: %d adaptation and %d test samples (%.0f%% DOD windows)',
                source.n_samples, target_train.n_samples, target_test.n_samples, window_dod)
    return source, target_train, target_test


def run_repeat(repeat, seed, hp, flags, source, target_train, target_test, score_variant):
    result = fit(source, target_train, hp.replace(seed=seed), flags)
    report = evaluate(result.model, target_test, score_variant)
    logger.info('Repeat %d (%s): RMSE %.6g MAE %.6g score %.6g', repeat, flags.describe(), report.rmse,
                report.mae, report.score)
    return RepeatOutcome(repeat, seed, report, result.trace, result.model)


def _variants(config):
    variants = config.get('variants')
    if not variants:
        return [(DEFAULT_VARIANT, AblationFlags.from_dict(config.get('ablation')))]
    names = [v['name'] for v in variants]
    if len(set(names)) != len(names):
        raise SkdanConfigurationError('Variant names must be unique, got %s.' % names)
    return [(v['name'], AblationFlags.from_dict(v.get('ablation'))) for v in variants]


def _choose_hyperparameters(config, source, target_train, output_dir):
    hp = HyperConfig.from_dict(config.get('hyperparameters'))
    search = config.get('search')
    if not search:
        return hp
    search = apply_defaults(ModelName.SEARCH, search)
    space = SearchSpace.from_dict(search.get('space'))
    result = random_search(source, target_train, space, search['n_trials'], search['validation_fraction'],
                           AblationFlags.from_dict(config.get('ablation')), hp, config['master_seed'],
                           search['n_jobs'])
    result.write(os.path.join(output_dir, 'search_leaderboard'))
    logger.info('Random search selected validation RMSE %.6g', result.leaderboard[0].validation_rmse)
    return result.best_config


def export_kde(output_dir, source, target, model, channel, grid_points, max_values):
    """
    Writes KDE curves of one normalized input channel and of the flattened extracted features
    for source and target.
    """
    kde_dir = os.path.join(output_dir, 'kde')
    os.makedirs(kde_dir, exist_ok=True)
    files = {}
    column = Channel.index(channel)
    for role, dataset in (('source', source), ('target', target)):
        raw = _thin(dataset.features[:, :, column].reshape(-1), max_values)
        name = 'raw_%s_%s' % (channel, role)
        export_kde_csv(os.path.join(kde_dir, name + '.csv'), raw, grid_points)
        files[name] = os.path.join('kde', name + '.csv')

        features = _thin(model.extract_array(dataset.features).reshape(-1), max_values)
        name = 'features_%s' % role
        export_kde_csv(os.path.join(kde_dir, name + '.csv'), features, grid_points)
        files[name] = os.path.join('kde', name + '.csv')
    return files


def _thin(values, max_values):
    if len(values) <= max_values:
        return values
    return values[np.linspace(0, len(values) - 1, max_values).astype(np.int64)]


def render_summary(result):
    env = Environment(loader=FileSystemLoader(TEMPLATE_DIR), trim_blocks=True, lstrip_blocks=True)
    env.filters['percent'] = lambda value: '%.2f' % (100.0 * value)
    env.filters['fixed'] = lambda value: '%.4f' % value
    return env.get_template(SUMMARY_TEMPLATE).render(experiment=result.to_dict(), metrics=METRICS)


def _write_json(path, data):
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write('\n')


def run_experiment(experiment, output_dir=None, base_dir=None):
    """
    Runs a transfer experiment described by a file path or an already loaded mapping.

    Every referenced file is checked before any training starts. Each variant is fitted `n_repeats` times
    with seeds derived from the master seed and evaluated on the held-out target batteries.

    :rtype: ExperimentResult
    """
    if isinstance(experiment, str):
        base_dir = base_dir or os.path.dirname(os.path.abspath(experiment))
        experiment = load_experiment_file(experiment)
    base_dir = base_dir or os.getcwd()
    validate_or_raise(ModelName.EXPERIMENT, experiment)
    config = apply_defaults(ModelName.EXPERIMENT, experiment)
    kde_options = apply_defaults(ModelName.KDE_OPTIONS, config.get('kde') or {})
    if config['n_repeats'] < 1:
        raise SkdanConfigurationError('n_repeats must be at least 1, got %s.' % config['n_repeats'])
    check_domain_entry(config['source'], 'source', base_dir)
    check_domain_entry(config['target'], 'target', base_dir)
    variants = _variants(config)

    output_dir = output_dir or _resolve(base_dir, config.get('output_dir') or '%s_output' % config['name'])
    os.makedirs(output_dir, exist_ok=True)

    split_seed, *seeds = spawn_seeds(config['master_seed'], config['n_repeats'] + 1)
    source, target_train, target_test = prepare_domains(config, base_dir, make_rng(split_seed))
    hp = _choose_hyperparameters(config, source, target_train, output_dir)
    _write_json(os.path.join(output_dir, 'hyperparameters.json'), hp.to_dict())

    summaries = []
    for name, flags in variants:
        jobs = [(r, seed, hp, flags, source, target_train, target_test, config['score_variant'])
                for r, seed in enumerate(seeds)]
        if config['n_jobs'] > 1:
            with ProcessPoolExecutor(max_workers=config['n_jobs']) as pool:
                outcomes = list(pool.map(run_repeat, *zip(*jobs)))
        else:
            outcomes = [run_repeat(*job) for job in jobs]
        outcomes.sort(key=lambda o: o.repeat)
        summaries.append(VariantSummary(name, flags, outcomes))
        _write_variant(output_dir, name, outcomes)

    result = ExperimentResult(config['name'], hp, summaries, output_dir)
    first_model = summaries[0].outcomes[0].model
    result.kde_files = export_kde(output_dir, source, target_train, first_model, kde_options['channel'],
                                  kde_options['grid_points'], kde_options['max_values'])
    _write_json(os.path.join(output_dir, 'report.json'), result.to_dict())
    with open(os.path.join(output_dir, 'summary.md'), 'w', encoding='utf-8') as f:
        f.write(render_summary(result))
    logger.info('Experiment %s finished; artifacts in %s', config['name'], output_dir)
    return result


def _write_variant(output_dir, name, outcomes):
    variant_dir = os.path.join(output_dir, name)
    os.makedirs(variant_dir, exist_ok=True)
    for outcome in outcomes:
        stem = os.path.join(variant_dir, 'repeat_%02d' % outcome.repeat)
        _write_json(stem + '_report.json', outcome.report.to_dict())
        outcome.trace.write_csv(stem + '_loss.csv')
    outcomes[0].model.save(os.path.join(variant_dir, 'model.skdan'), {'variant': name, 'seed': outcomes[0].seed})
