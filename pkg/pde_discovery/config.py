import os

import yaml


def load_config_yaml(file_path):
    """Load a YAML mapping, returning an empty dict when no file is given."""
    if file_path is None:
        return {}
    with open(file_path, 'r') as f:
        return yaml.safe_load(f) or {}


class PdeDiscoveryConfig:
    # Thread count is the only value read from the environment.
    THREADS = int(os.environ.get('PDE_DISCOVERY_THREADS', 1))
    DEBUG = False
    LOG_DIR_NAME = 'logs'
    DATASET_DIR_NAME = 'datasets'
    RESULTS_DIR_NAME = 'results'
    REPORT_DIR_NAME = 'report'
    MANIFEST_FILE = 'manifest.json'
    CASE_LOOKUP_FILE = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'case_lookup.json')
    RUNSPEC_SCHEMA_FILE = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'runspec_schema.yml')
    SCHEMA_VERSION = 1
