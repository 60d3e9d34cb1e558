#!/usr/bin/env python
"""Command line: generate datasets, run discoveries, build reports and ridge sweeps.

Exit codes: 0 success, 2 validation or configuration error, 3 numeric failure,
4 partial failure (some seeds failed).
"""
import functools
import glob
import json
import logging
import os
import shutil
import sys

import click
import numpy as np
import pandas as pd
import torch
from joblib import Parallel, delayed

from pde_discovery import __version__, app_logging
from pde_discovery.config import PdeDiscoveryConfig
from pde_discovery.discovery.engine import run_discovery, run_oracle_discovery
from pde_discovery.discovery.results import read_result, write_result
from pde_discovery.exceptions import DomainError, NumericError, PartialFailure, PdeDiscoveryError, ValidationError
from pde_discovery.runspec import build_experiments, load_runspec
from pde_discovery.synthetic.dataset_io import checksum, dataset_path, read_dataset, write_dataset
from pde_discovery.synthetic.experiment import ground_truth

logger = logging.getLogger('pde_discovery')


def handle_errors(f):
    @functools.wraps(f)
    def wrapper(*args, **kwargs):
        try:
            return f(*args, **kwargs)
        except PdeDiscoveryError as e:
            logger.error(str(e))
            click.echo(json.dumps(e.to_dict(), default=str), err=True)
            sys.exit(e.exit_code)
        except Exception as e:
            logger.exception('Unexpected error: %s', e)
            sys.exit(1)
    return wrapper


def _attach_file_log(output_dir):
    # one log file per command invocation
    for previous in [h for h in logger.handlers if isinstance(h, logging.FileHandler)]:
        logger.removeHandler(previous)
        previous.close()
    handler = app_logging.file_handler('pde_discovery', os.path.join(output_dir, PdeDiscoveryConfig.LOG_DIR_NAME))
    logger.addHandler(handler)
    return handler


def _output_dir(spec, output_dir):
    directory = output_dir or spec.output_dir
    os.makedirs(directory, exist_ok=True)
    _attach_file_log(directory)
    return directory


def _dataset_dir(output_dir):
    return os.path.join(output_dir, PdeDiscoveryConfig.DATASET_DIR_NAME)


def _manifest_path(output_dir):
    return os.path.join(_dataset_dir(output_dir), PdeDiscoveryConfig.MANIFEST_FILE)


def generate_datasets(spec, output_dir):
    directory = _dataset_dir(output_dir)
    os.makedirs(directory, exist_ok=True)
    manifest = {'schema_version': PdeDiscoveryConfig.SCHEMA_VERSION, 'datasets': []}
    for experiment in build_experiments(spec.experiments):
        path = write_dataset(experiment, dataset_path(directory, experiment.name, spec.format))
        manifest['datasets'].append({'name': experiment.name, 'file': os.path.basename(path),
                                     'sha256': checksum(path), 'n': int(experiment.n),
                                     'pde_name': experiment.pde_name, 'params': experiment.params,
                                     'noise_level': experiment.noise_level})
    with open(_manifest_path(output_dir), 'w') as f:
        json.dump(manifest, f, indent=2)
    if spec.path:
        shutil.copyfile(spec.path, os.path.join(output_dir, 'runspec.yml'))
    logger.info('Generated %d datasets in %s', len(manifest['datasets']), directory)
    return manifest


def load_datasets(spec, output_dir):
    """Experiments of the RunSpec read back from the dataset directory, checksums verified."""
    path = _manifest_path(output_dir)
    if not os.path.exists(path):
        raise ValidationError('No dataset manifest, run generate first', path=path)
    with open(path) as f:
        manifest = {entry['name']: entry for entry in json.load(f)['datasets']}
    experiments = []
    for entry in spec.experiments:
        if entry['name'] not in manifest:
            raise ValidationError('Dataset %s missing from the manifest' % entry['name'], path=path)
        record = manifest[entry['name']]
        file_path = os.path.join(_dataset_dir(output_dir), record['file'])
        if checksum(file_path) != record['sha256']:
            raise ValidationError('Checksum mismatch', path=file_path)
        experiments.append(read_dataset(file_path))
    return experiments


def _truth(experiments):
    try:
        return ground_truth(experiments)
    except DomainError as e:
        logger.warning('No ground truth for metrics: %s', e)
        return None


def method_name(mode, architecture, oracle=False):
    return '%s_%s' % (mode, 'oracle' if oracle else architecture)


def _run_one(experiments, config, directory, oracle):
    torch.set_num_threads(1)
    truth = _truth(experiments)
    try:
        result = (run_oracle_discovery if oracle else run_discovery)(experiments, config, truth)
    except PdeDiscoveryError as e:
        logger.error('Seed %d failed: %s', config.seed, e)
        return {'seed': config.seed, 'error': e.to_dict()}
    return {'seed': config.seed, 'path': write_result(result, directory), 'metrics': result.metrics,
            'mse_test_total': result.mse_test_total, 'regression_mse_test': sum(result.regression_mse_test)}


def _aggregate(outcomes):
    ok = [o for o in outcomes if 'error' not in o]
    metrics = [o['metrics'] for o in ok if o.get('metrics')]
    errors = [m['coeff_error'] for m in metrics]
    mse = [o['mse_test_total'] for o in ok if o['mse_test_total'] is not None]
    return {
        'seeds': [o['seed'] for o in ok],
        'failed_seeds': [o['seed'] for o in outcomes if 'error' in o],
        'success_rate': float(np.mean([m['success'] for m in metrics])) if metrics else None,
        'coeff_error_mean': float(np.mean(errors)) if errors else None,
        'coeff_error_std': float(np.std(errors)) if errors else None,
        'mse_test_mean': float(np.mean(mse)) if mse else None,
        'regression_mse_test_mean': float(np.mean([o['regression_mse_test'] for o in ok])) if ok else None,
    }


def _paired(outcomes_by_method):
    """Per-seed grouped vs individual held-out MSE for every architecture run in both modes."""
    pairs = {}
    for method in outcomes_by_method:
        if not method.startswith('grouped_'):
            continue
        other = 'individual_' + method[len('grouped_'):]
        if other not in outcomes_by_method:
            continue
        grouped = {o['seed']: o for o in outcomes_by_method[method] if 'error' not in o}
        individual = {o['seed']: o for o in outcomes_by_method[other] if 'error' not in o}
        rows = []
        for seed in sorted(set(grouped) & set(individual)):
            key = 'mse_test_total' if grouped[seed]['mse_test_total'] is not None else 'regression_mse_test'
            rows.append({'seed': seed, 'grouped': grouped[seed][key], 'individual': individual[seed][key],
                         'grouped_not_worse': grouped[seed][key] <= individual[seed][key]})
        pairs[method[len('grouped_'):]] = rows
    return pairs


def discover_all(spec, output_dir, modes, architectures, seeds, oracle=False, n_jobs=None):
    experiments = load_datasets(spec, output_dir)
    results_dir = os.path.join(output_dir, PdeDiscoveryConfig.RESULTS_DIR_NAME)
    outcomes_by_method = {}
    for mode in modes:
        for architecture in (['none'] if oracle else architectures):
            method = method_name(mode, architecture, oracle)
            directory = os.path.join(results_dir, method)
            configs = [spec.discovery.replace(mode=mode, architecture=spec.discovery.architecture if oracle
                                              else architecture, seed=seed) for seed in seeds]
            outcomes_by_method[method] = Parallel(n_jobs=n_jobs or PdeDiscoveryConfig.THREADS)(
                delayed(_run_one)(experiments, config, directory, oracle) for config in configs)
    summary = {'methods': {m: _aggregate(o) for m, o in outcomes_by_method.items()}}
    summary['paired_mse'] = _paired(outcomes_by_method)
    summary['failures'] = {m: [o for o in outcomes if 'error' in o] for m, outcomes in outcomes_by_method.items()}
    os.makedirs(results_dir, exist_ok=True)
    with open(os.path.join(results_dir, 'summary.json'), 'w') as f:
        json.dump(summary, f, indent=2)
    total = sum(len(o) for o in outcomes_by_method.values())
    failed = sum(len(f) for f in summary['failures'].values())
    if failed == total and total:
        raise NumericError('All %d runs failed' % total, payload={'summary': summary['failures']})
    if failed:
        raise PartialFailure('%d of %d runs failed' % (failed, total), payload={'summary': summary['failures']})
    return summary


def _report_rows(result, method):
    stability, patterns = [], []
    for index, event in enumerate(result.triggers):
        for report in event.reports:
            for k, label in enumerate(report.labels):
                for j, lam in enumerate(report.lambdas):
                    stability.append({'method': method, 'seed': result.seed, 'trigger': index, 'epoch': event.epoch,
                                      'mode': report.mode, 'label': label, 'lambda': float(lam),
                                      'pi_hat': float(report.pi_hat[k, j]),
                                      'in_region': j in report.region})
    for i, experiment in enumerate(result.experiments):
        for j, label in enumerate(result.labels):
            patterns.append({'method': method, 'seed': result.seed, 'experiment': experiment, 'label': label,
                             'active': bool(result.mask.masks[i, j]),
                             'coefficient': float(result.coefficients[i, j])})
    return stability, patterns


def build_report(output_dir):
    """Plot-ready CSV tables from every result file under the results directory."""
    results_dir = os.path.join(output_dir, PdeDiscoveryConfig.RESULTS_DIR_NAME)
    report_dir = os.path.join(output_dir, PdeDiscoveryConfig.REPORT_DIR_NAME)
    os.makedirs(report_dir, exist_ok=True)
    files = sorted(glob.glob(os.path.join(results_dir, '*', 'seed_*.json')))
    if not files:
        logger.warning('No result files found under %s', results_dir)
    stability, patterns, summary, corrupt = [], [], [], []
    for path in files:
        method = os.path.basename(os.path.dirname(path))
        try:
            result = read_result(path)
        except ValidationError as e:
            logger.warning('Skipping %s', e)
            corrupt.append({'file': path, 'error': e.message})
            continue
        rows = _report_rows(result, method)
        stability.extend(rows[0])
        patterns.extend(rows[1])
        metrics = result.metrics or {}
        summary.append({'method': method, 'seed': result.seed, 'success': metrics.get('success'),
                        'coeff_error': metrics.get('coeff_error'), 'mse_test': result.mse_test_total,
                        'regression_mse_test': float(sum(result.regression_mse_test)),
                        'epochs': result.epochs, 'converged': result.converged})
    tables = {
        'stability_paths.csv': pd.DataFrame(stability, columns=['method', 'seed', 'trigger', 'epoch', 'mode',
                                                                'label', 'lambda', 'pi_hat', 'in_region']),
        'sparsity_patterns.csv': pd.DataFrame(patterns, columns=['method', 'seed', 'experiment', 'label', 'active',
                                                                 'coefficient']),
        'runs.csv': pd.DataFrame(summary, columns=['method', 'seed', 'success', 'coeff_error', 'mse_test',
                                                   'regression_mse_test', 'epochs', 'converged']),
        'corrupt_files.csv': pd.DataFrame(corrupt, columns=['file', 'error']),
    }
    runs = tables['runs.csv']
    if runs.empty:
        methods = pd.DataFrame(columns=['method', 'runs', 'success_rate', 'coeff_error_mean', 'coeff_error_std',
                                        'mse_test_mean'])
        paired = pd.DataFrame(columns=['seed'])
    else:
        methods = runs.groupby('method').agg(runs=('seed', 'count'),
                                             success_rate=('success', lambda s: s.astype(float).mean()),
                                             coeff_error_mean=('coeff_error', 'mean'),
                                             coeff_error_std=('coeff_error', 'std'),
                                             mse_test_mean=('mse_test', 'mean')).reset_index()
        paired = runs.pivot_table(index='seed', columns='method', values='regression_mse_test').reset_index()
        if runs['mse_test'].notna().any():
            paired = runs.pivot_table(index='seed', columns='method', values='mse_test').reset_index()
    tables['methods.csv'] = methods
    tables['paired_mse.csv'] = paired
    for name, frame in tables.items():
        frame.to_csv(os.path.join(report_dir, name), index=False)
    logger.info('Report written to %s from %d result files (%d corrupt)', report_dir, len(files), len(corrupt))
    return tables


def sweep_ridge(spec, output_dir, alphas, modes, seed, oracle=False):
    """Selected support and held-out errors for every ridge alpha and mode."""
    experiments = load_datasets(spec, output_dir)
    truth = _truth(experiments)
    rows = []
    for alpha in alphas:
        for mode in modes:
            config = spec.discovery.replace(mode=mode, ridge_alpha=float(alpha), seed=seed)
            result = (run_oracle_discovery if oracle else run_discovery)(experiments, config, truth)
            for i, experiment in enumerate(result.experiments):
                rows.append({'ridge_alpha': float(alpha), 'mode': mode, 'experiment': experiment,
                             'support': ' + '.join(sorted(result.support(i))),
                             'mse_test': result.mse_test[i], 'regression_mse_test': result.regression_mse_test[i],
                             'success': None if result.metrics is None else result.metrics['success']})
    frame = pd.DataFrame(rows)
    directory = os.path.join(output_dir, PdeDiscoveryConfig.REPORT_DIR_NAME)
    os.makedirs(directory, exist_ok=True)
    frame.to_csv(os.path.join(directory, 'sweep_ridge.csv'), index=False)
    supports = frame.groupby(['mode', 'experiment'])['support'].nunique()
    value = 'regression_mse_test' if frame['mse_test'].isna().all() else 'mse_test'
    totals = frame.groupby(['ridge_alpha', 'mode'])[value].sum().unstack()
    summary = {'support_changes': bool((supports > 1).any()), 'alphas': [float(a) for a in alphas]}
    if {'grouped', 'individual'} <= set(totals.columns):
        summary['grouped_worse_than_individual'] = {
            str(alpha): bool(row['grouped'] > row['individual']) for alpha, row in totals.iterrows()}
    with open(os.path.join(directory, 'sweep_ridge.json'), 'w') as f:
        json.dump(summary, f, indent=2)
    return frame, summary


@click.group()
@click.version_option(__version__)
@click.option('--debug', is_flag=True, default=PdeDiscoveryConfig.DEBUG, help='Log at DEBUG level')
def cli(debug):
    """Discover a shared PDE from multiple noisy experiments."""
    if not logger.handlers:
        logger.addHandler(app_logging.default_handler(debug))
    logger.setLevel(logging.DEBUG if debug else logging.INFO)
    logger.propagate = False


@cli.command()
@click.argument('runspec', type=click.Path(exists=True, dir_okay=False))
@click.option('--output-dir', type=click.Path(file_okay=False), help='Overrides output_dir of the RunSpec')
@handle_errors
def generate(runspec, output_dir):
    """Generate the datasets of a RunSpec with a checksummed manifest."""
    spec = load_runspec(runspec)
    manifest = generate_datasets(spec, _output_dir(spec, output_dir))
    click.echo(json.dumps(manifest, indent=2))


@cli.command()
@click.argument('runspec', type=click.Path(exists=True, dir_okay=False))
@click.option('--mode', 'modes', multiple=True, type=click.Choice(['individual', 'grouped']))
@click.option('--architecture', 'architectures', multiple=True, type=click.Choice(['separate', 'shared_trunk']))
@click.option('--seed', 'seeds', multiple=True, type=int, help='Repeat for several seeds; defaults to the RunSpec')
@click.option('--output-dir', type=click.Path(file_okay=False))
@click.option('--oracle-library', is_flag=True, help='Use analytic libraries and skip network training')
@handle_errors
def discover(runspec, modes, architectures, seeds, output_dir, oracle_library):
    """Run discovery for every mode, architecture and seed and write a summary."""
    spec = load_runspec(runspec)
    directory = _output_dir(spec, output_dir)
    summary = discover_all(spec, directory, list(modes) or [spec.discovery.mode],
                           list(architectures) or [spec.discovery.architecture], list(seeds) or spec.seeds,
                           oracle_library)
    click.echo(json.dumps(summary['methods'], indent=2))


@cli.command()
@click.argument('output_dir', type=click.Path(file_okay=False))
@handle_errors
def report(output_dir):
    """Write summary tables and plot data for the results under OUTPUT_DIR."""
    os.makedirs(output_dir, exist_ok=True)
    _attach_file_log(output_dir)
    tables = build_report(output_dir)
    click.echo('\n'.join('%s: %d rows' % (name, len(frame)) for name, frame in tables.items()))


@cli.command('sweep-ridge')
@click.argument('runspec', type=click.Path(exists=True, dir_okay=False))
@click.option('--alpha', 'alphas', multiple=True, type=float, help='Ridge alphas; defaults to the RunSpec sweep')
@click.option('--mode', 'modes', multiple=True, type=click.Choice(['individual', 'grouped']))
@click.option('--seed', type=int, default=0)
@click.option('--output-dir', type=click.Path(file_okay=False))
@click.option('--oracle-library', is_flag=True)
@handle_errors
def sweep_ridge_command(runspec, alphas, modes, seed, output_dir, oracle_library):
    """Sensitivity of the selected support to the ridge regularisation."""
    spec = load_runspec(runspec)
    directory = _output_dir(spec, output_dir)
    modes = list(modes) or spec.sweep.get('modes') or ['individual', 'grouped']
    _, summary = sweep_ridge(spec, directory, list(alphas) or spec.ridge_alphas, modes, seed, oracle_library)
    click.echo(json.dumps(summary, indent=2))


if __name__ == '__main__':
    cli()
