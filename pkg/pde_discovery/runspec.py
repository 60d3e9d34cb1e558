"""RunSpec files: YAML study descriptions validated against ``runspec_schema.yml``.

Validation errors carry the line of the offending YAML node. Experiments come
either from the ``experiments`` list or from a named preset in
``case_lookup.json``.
"""
import json
import logging
from dataclasses import dataclass, field
from typing import List, Optional

import yaml
from jsonschema import Draft7Validator

from pde_discovery.config import PdeDiscoveryConfig, load_config_yaml
from pde_discovery.discovery.config import DiscoveryConfig
from pde_discovery.exceptions import ConfigurationError, ValidationError
from pde_discovery.synthetic.generators import (add_noise, burgers_delta, burgers_ic_variants, default_grid,
                                                kdv_solitons, ks_numerical, ks_regime, subsample)

logger = logging.getLogger(__name__)

DEFAULT_OUTPUT_DIR = 'pde_discovery_output'
DEFAULT_RIDGE_ALPHAS = (1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2)


@dataclass
class RunSpec:
    experiments: List[dict]
    discovery: DiscoveryConfig
    seeds: List[int] = field(default_factory=lambda: [0])
    output_dir: str = DEFAULT_OUTPUT_DIR
    format: str = 'csv'
    case: Optional[str] = None
    sweep: dict = field(default_factory=dict)
    path: Optional[str] = None

    @property
    def ridge_alphas(self):
        return list(self.sweep.get('ridge_alphas', DEFAULT_RIDGE_ALPHAS))


def load_schema():
    return load_config_yaml(PdeDiscoveryConfig.RUNSPEC_SCHEMA_FILE)


def load_cases():
    with open(PdeDiscoveryConfig.CASE_LOOKUP_FILE) as f:
        return json.load(f)


def _node_at(node, path):
    for key in path:
        if isinstance(node, yaml.MappingNode):
            children = {k.value: v for k, v in node.value}
            if str(key) not in children:
                break
            node = children[str(key)]
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            node = node.value[key]
        else:
            break
    return node


def _key_line(node, key):
    if isinstance(node, yaml.MappingNode):
        for k, _ in node.value:
            if k.value == key:
                return k.start_mark.line + 1
    return node.start_mark.line + 1


def _error_line(root, error):
    node = _node_at(root, list(error.absolute_path))
    if error.validator == 'additionalProperties' and isinstance(error.instance, dict):
        allowed = set(error.schema.get('properties', {}))
        extra = sorted(set(error.instance) - allowed)
        if extra:
            return _key_line(node, extra[0])
    return node.start_mark.line + 1


def _error_order(error):
    """Sort key: schema_version errors first, then by error path."""
    path = list(error.absolute_path)
    parts = [(0, part, '') if isinstance(part, int) else (1, 0, str(part)) for part in path]
    return path[:1] != ['schema_version'], parts


def parse_runspec(text, path=None):
    try:
        root = yaml.compose(text)
        raw = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, 'problem_mark', None)
        raise ValidationError('Invalid YAML: %s' % getattr(e, 'problem', e),
                              line=None if mark is None else mark.line + 1, path=path)
    if not isinstance(raw, dict):
        raise ValidationError('A RunSpec must be a mapping', line=1, path=path)
    errors = sorted(Draft7Validator(load_schema()).iter_errors(raw), key=_error_order)
    if errors:
        error = errors[0]
        location = '/'.join(str(p) for p in error.absolute_path) or '<root>'
        raise ValidationError('%s: %s' % (location, error.message), line=_error_line(root, error), path=path)
    experiments = raw.get('experiments')
    case = raw.get('case')
    if experiments is None:
        if case is None:
            raise ValidationError('RunSpec needs either experiments or a case', line=1, path=path)
        cases = load_cases()
        if case not in cases:
            raise ValidationError('Unknown case %s, expected one of %s' % (case, ', '.join(sorted(cases))),
                                  line=_key_line(root, 'case'), path=path)
        experiments = cases[case]['experiments']
    names = [entry['name'] for entry in experiments]
    if len(set(names)) != len(names):
        raise ValidationError('Experiment names must be unique', line=_key_line(root, 'experiments'), path=path)
    try:
        discovery = DiscoveryConfig.from_dict(raw.get('discovery') or {})
    except ConfigurationError as e:
        raise ValidationError(e.message, line=_key_line(root, 'discovery'), path=path)
    return RunSpec(experiments=[dict(entry) for entry in experiments], discovery=discovery,
                   seeds=list(raw.get('seeds', [0])), output_dir=raw.get('output_dir', DEFAULT_OUTPUT_DIR),
                   format=raw.get('format', 'csv'), case=case, sweep=dict(raw.get('sweep') or {}), path=path)


def load_runspec(path):
    try:
        with open(path) as f:
            text = f.read()
    except OSError as e:
        raise ValidationError('Cannot read RunSpec: %s' % e, path=path)
    return parse_runspec(text, path)


def _require(params, key, entry):
    if key not in params:
        raise ValidationError('Experiment %s needs parameter %s' % (entry['name'], key))
    return params[key]


def _field(entry, cache):
    generator = entry['generator']
    name = entry['name']
    params = dict(entry.get('params') or {})
    grid = dict(entry.get('grid') or {})
    if generator == 'ks':
        key = json.dumps([params, grid], sort_keys=True)
        if key not in cache:
            cache[key] = ks_numerical(domain_length=params.get('domain_length'), nx=grid.get('nx'),
                                      dt=params.get('dt'), n_steps=grid.get('n_steps'))
        trajectory = cache[key]
        if 'regime' in entry:
            return ks_regime(trajectory, entry['regime'], name=name)
        return trajectory.replace(name=name)
    x, t = default_grid(generator, grid.get('nx'), grid.get('nt'))
    if generator == 'burgers_delta':
        return burgers_delta(_require(params, 'nu', entry), x, t, params.get('amplitude'), name=name)
    if generator in ('burgers_periodic', 'burgers_step'):
        nu = _require(params, 'nu', entry)
        extra = {k: v for k, v in params.items() if k != 'nu'}
        return burgers_ic_variants(nu, generator.split('_', 1)[1], x, t, name=name, **extra)
    if generator == 'kdv_single':
        return kdv_solitons('single', params.get('c'), x, t, params.get('x0'), name=name)
    speeds = (params['c1'], params['c2']) if 'c1' in params and 'c2' in params else None
    offsets = (params.get('x1', 0.0), params.get('x2', 0.0)) if 'x1' in params or 'x2' in params else None
    return kdv_solitons('double', speeds, x, t, offsets, name=name)


def build_experiment(entry, cache=None):
    """Generate, add noise to and sample one experiment entry."""
    cache = {} if cache is None else cache
    experiment = _field(entry, cache)
    experiment = add_noise(experiment, entry.get('noise', 0.0), entry.get('noise_seed', 0))
    sampling = entry.get('sampling')
    if sampling:
        shape = sampling.get('shape')
        experiment = subsample(experiment, sampling.get('n'), sampling['strategy'], sampling.get('seed', 0),
                               None if shape is None else tuple(shape))
    logger.info('Built experiment %s (%s, %d samples, noise %s)', experiment.name, experiment.generator,
                experiment.n, experiment.noise_level)
    return experiment


def build_experiments(entries):
    cache = {}
    return [build_experiment(entry, cache) for entry in entries]
