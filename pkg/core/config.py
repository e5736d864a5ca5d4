"""
Configuration loader module for LogiGuide.
Handles loading of the YAML settings file and merging it over the built-in defaults.
"""

import copy
import logging
import os

import yaml

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_PATH = 'config.yaml'

DEFAULTS = {
    'limits': {
        'fdnf_atoms': 16,
        'worlds': 1_000_000,
    },
    'calculus': {
        'epsilon': 1e-6,
        'score_cap': 3.0,
        'me_tolerance': 1e-9,
        'transition_tolerance': 1e-12,
    },
    'sampler': {
        'steps': 500,
        't_min': 1e-3,
        'w': 1.0,
        'w_not': 1.0,
        'guidance_scaling': 'formula',
        'estimator_draws': 64,
        'estimator_lag': 0.25,
    },
    'verify': {
        'n_formulas': 500,
        'n_probes': 100,
        'n_ops': [1, 4],
        'neg_prob': 0.05,
        'tolerances': {
            'continuous': {
                'posterior': 1e-10,
                'score': 1e-8,
                'finite-difference': 1e-4,
                'coefficient': 1e-12,
            },
            'discrete': {
                'posterior': 1e-9,
                'transition': 1e-9,
            },
        },
    },
    'logging': {
        'level': 'INFO',
        'file': 'logs/logiguide.log',
    },
}


def merge_config(base, override):
    """
    Recursively merge ``override`` into a copy of ``base``.

    Args:
        base (dict): Default values
        override (dict): User values; nested dicts merge, everything else replaces

    Returns:
        dict: Merged configuration
    """
    merged = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = merge_config(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def load_config(config_path=None):
    """
    Load configuration from a YAML file, merged over the defaults.

    A missing file at the default path falls back to the defaults; a missing
    file that was asked for explicitly is an error.

    Args:
        config_path (str, optional): Path to the YAML configuration file

    Returns:
        dict: Configuration dictionary

    Raises:
        FileNotFoundError: If an explicitly given configuration file doesn't exist
        yaml.YAMLError: If configuration file is invalid YAML
    """
    explicit = config_path is not None
    config_path = config_path or DEFAULT_CONFIG_PATH

    if not os.path.exists(config_path):
        if explicit:
            raise FileNotFoundError(f"Configuration file not found: {config_path}")
        logger.debug(f"No configuration at {config_path}, using defaults")
        return copy.deepcopy(DEFAULTS)

    try:
        with open(config_path, 'r', encoding='utf-8') as f:
            user = yaml.safe_load(f) or {}

        if not isinstance(user, dict):
            raise yaml.YAMLError(f"Top level of {config_path} must be a mapping")

        logger.info(f"Successfully loaded configuration from {config_path}")
        return merge_config(DEFAULTS, user)

    except yaml.YAMLError as e:
        logger.error(f"Error parsing YAML configuration: {str(e)}")
        raise
