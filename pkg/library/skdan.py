#!/usr/bin/env python
"""
Command-line entry point of the SKDAN battery SOH transfer pipeline.

Each subcommand prints its result as a JSON object on stdout and exits 0. Failures are logged to stderr
as `<category> error: <message>` and exit with a category-specific code.
"""
import argparse
import json
import logging
import os
import sys

import numpy as np
import yaml
from scipy.integrate import trapezoid

from module_utils.common import Channel, ErrorCategory, SkdanConfigurationError, SkdanError, error_category, \
    make_rng
from module_utils.config_schema import ModelName, validate_or_raise
from module_utils.datapipe import export_kde_csv, load_battery, load_dataset, merge_domains, normalize_domain, \
    save_dataset
from module_utils.experiment import run_experiment
from module_utils.hyperparams import AblationFlags, HyperConfig
from module_utils.metrics import ScoreVariant, evaluate
from module_utils.model import SkdanModel
from module_utils.search import SearchSpace, random_search
from module_utils.synthgen import SynthSpec, write_corpus
from module_utils.training import fit

logger = logging.getLogger(__name__)

EXIT_CODES = {
    ErrorCategory.CONFIG: 2,
    ErrorCategory.VALIDATION: 2,
    ErrorCategory.SCHEMA: 3,
    ErrorCategory.DATA: 3,
    ErrorCategory.DIMENSION: 4,
    ErrorCategory.LENGTH: 4,
    ErrorCategory.TRAINING: 5,
    ErrorCategory.INTERNAL: 1,
}


class Command:
    SIMULATE = 'simulate'
    PREPROCESS = 'preprocess'
    TRAIN = 'train'
    EVALUATE = 'evaluate'
    SEARCH = 'search'
    EXPERIMENT = 'experiment'
    EXPORT_KDE = 'export-kde'


def read_mapping(path):
    """Reads a YAML or JSON mapping; an absent path gives an empty mapping."""
    if not path:
        return {}
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = yaml.safe_load(f)
    except (OSError, yaml.YAMLError) as e:
        raise SkdanConfigurationError('Cannot read %s: %s' % (path, e), obj=path)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise SkdanConfigurationError('%s must contain a mapping.' % path, obj=path)
    return data


def simulate(args):
    spec = SynthSpec.from_dict(read_mapping(args.spec))
    written = write_corpus(spec, args.output_dir, include_discharge=not args.charge_only)
    return dict(batteries=written)


def preprocess(args):
    labels = args.labels or []
    if labels and len(labels) != len(args.csv):
        raise SkdanConfigurationError('Give either no --labels or one per --csv file.')
    if len(args.metadata) not in (1, len(args.csv)):
        raise SkdanConfigurationError('Give one --metadata file, or one per --csv file.')

    datasets = []
    for i, csv_path in enumerate(args.csv):
        metadata_path = args.metadata[i] if len(args.metadata) > 1 else args.metadata[0]
        datasets.append(load_battery(csv_path, metadata_path, labels[i] if labels else None, args.window_dod,
                                     args.step, os.path.splitext(os.path.basename(csv_path))[0],
                                     args.ic_smoothing))
    dataset = merge_domains(datasets) if len(datasets) > 1 else datasets[0]
    if not args.raw:
        dataset = normalize_domain(dataset)
    save_dataset(args.output, dataset)
    return dict(output=args.output, samples=dataset.n_samples, labeled=dataset.labeled,
                degenerate_channels=dataset.degenerate_channels)


def _hyperparameters(path):
    return HyperConfig.from_dict(read_mapping(path))


def train(args):
    source = load_dataset(args.source)
    target = load_dataset(args.target)
    hp = _hyperparameters(args.config)
    if args.seed is not None:
        hp = hp.replace(seed=args.seed)
    flags = AblationFlags.from_dict(read_mapping(args.ablation))
    validation = load_dataset(args.validation) if args.validation else None

    result = fit(source, target, hp, flags, validation=validation)
    result.model.save(args.model_out, {'hyperparameters': hp.to_dict()})
    if args.trace_out:
        result.trace.write_csv(args.trace_out)
    return dict(model=args.model_out, epochs=len(result.trace), parameters=result.model.parameter_count(),
                best_epoch=result.best_epoch, final_loss=result.trace.rows[-1])


def evaluate_command(args):
    model = SkdanModel.load(args.model)
    dataset = load_dataset(args.dataset)
    report = evaluate(model, dataset, args.score_variant)
    if args.report_out:
        with open(args.report_out, 'w', encoding='utf-8') as f:
            json.dump(report.to_dict(), f, indent=2, sort_keys=True)
    return dict(rmse=report.rmse, mae=report.mae, score=report.score, score_sum=report.score_sum, n=report.n)


def search(args):
    settings = read_mapping(args.space)
    validate_or_raise(ModelName.SEARCH, settings)
    source = load_dataset(args.source)
    target = load_dataset(args.target)
    result = random_search(
        source, target,
        space=SearchSpace.from_dict(settings.get('space')),
        n_trials=args.n_trials if args.n_trials is not None else settings.get('n_trials', 100),
        validation_fraction=settings.get('validation_fraction', 0.2),
        flags=AblationFlags.from_dict(read_mapping(args.ablation)),
        base=_hyperparameters(args.config),
        master_seed=args.master_seed,
        n_jobs=args.n_jobs if args.n_jobs is not None else settings.get('n_jobs', 1),
    )
    result.write(args.output_prefix)
    best = result.leaderboard[0]
    return dict(best_config=result.best_config.to_dict(), validation_rmse=best.validation_rmse,
                leaderboard=args.output_prefix + '.csv')


def experiment(args):
    result = run_experiment(args.file, output_dir=args.output_dir)
    return dict(output_dir=result.output_dir,
                variants=dict((v.name, v.aggregate()) for v in result.variants))


def export_kde(args):
    dataset = load_dataset(args.dataset)
    if args.model:
        values = SkdanModel.load(args.model).extract_array(dataset.features).reshape(-1)
    else:
        values = dataset.features[:, :, Channel.index(args.channel)].reshape(-1)
    if args.max_values and len(values) > args.max_values:
        values = values[np.sort(make_rng(0).choice(len(values), args.max_values, replace=False))]
    grid, density = export_kde_csv(args.output, values, args.grid_points, args.bandwidth)
    return dict(output=args.output, points=len(grid), integral=float(trapezoid(density, grid)))


HANDLERS = {
    Command.SIMULATE: simulate,
    Command.PREPROCESS: preprocess,
    Command.TRAIN: train,
    Command.EVALUATE: evaluate_command,
    Command.SEARCH: search,
    Command.EXPERIMENT: experiment,
    Command.EXPORT_KDE: export_kde,
}


def build_parser():
    parser = argparse.ArgumentParser(description='Battery SOH estimation under shallow cycles with '
                                                 'self-attention distillation and MK-MMD domain adaptation')
    parser.add_argument('-v', '--verbose', action='count', default=0, help='Increase log verbosity (-v, -vv)')
    subparsers = parser.add_subparsers(dest='command', required=True)

    sub = subparsers.add_parser(Command.SIMULATE, help='Generate a synthetic cycling corpus')
    sub.add_argument('--spec', required=True, help='YAML/JSON synthetic battery specification')
    sub.add_argument('--output-dir', required=True)
    sub.add_argument('--charge-only', action='store_true', help='Omit discharge rows from the cycling CSVs')

    sub = subparsers.add_parser(Command.PREPROCESS, help='Turn cycling CSVs into a serialized domain dataset')
    sub.add_argument('--csv', required=True, action='append', help='Cycling CSV, repeat for several batteries')
    sub.add_argument('--metadata', required=True, action='append', help='Metadata JSON (one, or one per CSV)')
    sub.add_argument('--labels', action='append', help='Labels CSV per battery (source domains)')
    sub.add_argument('--window-dod', type=float, help='SOC window width in percent, full span by default')
    sub.add_argument('--step', type=float, default=10.0, help='SOC window step in percent')
    sub.add_argument('--ic-smoothing', action='store_true', help='Apply a centered 5-point moving average to IC')
    sub.add_argument('--raw', action='store_true', help='Skip min-max normalization')
    sub.add_argument('--output', required=True)

    sub = subparsers.add_parser(Command.TRAIN, help='Fit one configuration')
    sub.add_argument('--source', required=True, help='Labeled source dataset')
    sub.add_argument('--target', required=True, help='Target dataset (labels are ignored)')
    sub.add_argument('--config', help='YAML/JSON hyperparameters')
    sub.add_argument('--ablation', help='YAML/JSON ablation flags')
    sub.add_argument('--validation', help='Labeled validation dataset for best-epoch selection')
    sub.add_argument('--seed', type=int)
    sub.add_argument('--model-out', required=True)
    sub.add_argument('--trace-out', help='Loss trace CSV')

    sub = subparsers.add_parser(Command.EVALUATE, help='Evaluate a model on a labeled dataset')
    sub.add_argument('--model', required=True)
    sub.add_argument('--dataset', required=True)
    sub.add_argument('--score-variant', choices=ScoreVariant.ALL, default=ScoreVariant.MEAN)
    sub.add_argument('--report-out')

    sub = subparsers.add_parser(Command.SEARCH, help='Random hyperparameter search')
    sub.add_argument('--source', required=True)
    sub.add_argument('--target', required=True)
    sub.add_argument('--space', help='YAML/JSON search settings (n_trials, validation_fraction, n_jobs, space)')
    sub.add_argument('--config', help='Base hyperparameters for fields the space does not search')
    sub.add_argument('--ablation')
    sub.add_argument('--n-trials', type=int)
    sub.add_argument('--n-jobs', type=int)
    sub.add_argument('--master-seed', type=int, default=0)
    sub.add_argument('--output-prefix', required=True, help='Leaderboard path without extension')

    sub = subparsers.add_parser(Command.EXPERIMENT, help='Run a full experiment file')
    sub.add_argument('--file', required=True)
    sub.add_argument('--output-dir')

    sub = subparsers.add_parser(Command.EXPORT_KDE, help='Export a kernel density estimate as CSV')
    sub.add_argument('--dataset', required=True)
    sub.add_argument('--channel', choices=Channel.ORDER, default=Channel.V)
    sub.add_argument('--model', help='Estimate the density of extracted features instead of a raw channel')
    sub.add_argument('--grid-points', type=int, default=400)
    sub.add_argument('--bandwidth', type=float)
    sub.add_argument('--max-values', type=int, default=20000)
    sub.add_argument('--output', required=True)
    return parser


def configure_logging(verbosity):
    level = logging.WARNING
    if verbosity == 1:
        level = logging.INFO
    elif verbosity > 1:
        level = logging.DEBUG
    logging.basicConfig(level=level, stream=sys.stderr, format='%(asctime)s %(levelname)s %(name)s: %(message)s')


def main(argv=None):
    """
    Runs one subcommand. The result is printed to stdout as JSON; failures are logged to stderr.

    :return: 0 on success, otherwise the exit code of the failure category
    """
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)
    try:
        result = HANDLERS[args.command](args)
    except SkdanError as e:
        category = error_category(e)
        logger.error('%s error: %s', category, e.msg)
        return EXIT_CODES[category]
    except Exception as e:
        logger.debug('Unexpected failure', exc_info=True)
        logger.error('%s error: %s', ErrorCategory.INTERNAL, e)
        return EXIT_CODES[ErrorCategory.INTERNAL]
    print(json.dumps(result, indent=2, sort_keys=True, default=str))
    return 0


if __name__ == '__main__':
    sys.exit(main())
