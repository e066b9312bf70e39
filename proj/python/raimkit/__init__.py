"""Python front end for the raimkit C++ core.

Settings use the same dotted keys as the command line config files, for
example ``{"model.variant": "raim2", "train.epochs": 5}``.
"""

import json

from . import _raimkit
from ._raimkit import (
    CompatibilityError,
    ConfigError,
    DataError,
    DomainError,
    FormatError,
    NumericalError,
    RaimkitError,
    ShapeError,
    accuracy,
    auc_pr,
    auc_roc,
    cohen_kappa,
)

__all__ = [
    "CompatibilityError",
    "ConfigError",
    "DataError",
    "DomainError",
    "FormatError",
    "NumericalError",
    "RaimkitError",
    "ShapeError",
    "accuracy",
    "auc_pr",
    "auc_roc",
    "cohen_kappa",
    "evaluate",
    "generate",
    "gradcheck",
    "ingest",
    "predict",
    "resolved_config",
    "train",
]


def _settings(settings):
    out = {}
    for key, value in (settings or {}).items():
        if isinstance(value, bool):
            value = "true" if value else "false"
        out[str(key)] = str(value)
    return out


def resolved_config(settings=None):
    """Every config key with its resolved value, as ``key = value`` text."""
    return _raimkit.resolved_config(_settings(settings))


def generate(out, settings=None, force=False):
    """Writes a synthetic cohort to ``out`` and returns its summary."""
    return json.loads(_raimkit.generate(str(out), _settings(settings), force))


def ingest(episodes, out, settings=None):
    """Windows the episodes under ``episodes`` into a dataset directory."""
    return json.loads(_raimkit.ingest(str(episodes), str(out), _settings(settings)))


def train(dataset, out, settings=None):
    """Trains one variant and writes ``out/model.ckpt``.

    A diverged run keeps the last completed epoch and sets ``diverged``.
    """
    return json.loads(_raimkit.train(str(dataset), str(out), _settings(settings)))


def evaluate(checkpoint, dataset=""):
    """Final-step metrics on the checkpoint's held-out split."""
    return json.loads(_raimkit.evaluate(str(checkpoint), str(dataset)))


def predict(checkpoint, episode):
    """Per-step predictions with the attention payload, one dict per step."""
    return [json.loads(line) for line in _raimkit.predict(str(checkpoint), str(episode))]


def gradcheck(tolerance=1e-4, seed=1, inject=""):
    """Runs the finite-difference suite; ``inject`` flips one op's backward rule."""
    return json.loads(_raimkit.gradcheck(tolerance, seed, inject))
