"""Matrix-completion state estimation for distribution feeders."""

import json

from . import _gridmc
from ._gridmc import confidence_interval, singular_values, truncation_error, version

__all__ = [
    "confidence_interval",
    "default_config",
    "run_experiment",
    "singular_values",
    "truncation_error",
    "version",
]


def default_config(seed=1):
    """Desk-scale experiment configuration as a dict."""
    return json.loads(_gridmc.default_config(seed))


def run_experiment(config, out_dir=None, schedule_seed=None):
    """Run an experiment; returns the results payload as a dict.

    When ``out_dir`` is given, results.json, trace.csv and spectrum.csv are
    written there as well.
    """
    payload = _gridmc.run_experiment(json.dumps(config), out_dir, schedule_seed)
    return json.loads(payload)
