"""Multimodal ECG fusion with explanation trust checks.

Thin Python layer over the native core. Pipeline functions take the
configuration as a dict (or None for defaults); unknown keys raise
ConfigError.
"""

import json

from ._core import (
    ConfigError,
    MissingPrerequisite,
    NumericalFailure,
    bandpass,
    cohens_d,
    dice_iou_at_k,
    discrete_mi,
    dwt_denoise,
    fft_features,
    kl_divergence,
    simplex_lattice,
    soft_threshold,
    stage_order,
    synth_ecg,
    windowed_nmi,
)
from . import _core

__version__ = "0.1.0"

CLASS_NAMES = ("Normal", "STEMI", "HistoryMI", "AbnormalHB")


def _dump(config):
    return json.dumps(config if config is not None else {})


def default_config():
    """The full default run configuration as a dict."""
    return json.loads(_core.default_config_json())


def validate_config(config):
    """Return `config` with every default filled in, or raise ConfigError."""
    return json.loads(_core.normalize_config_json(_dump(config)))


def gen(config=None, seed=None, out=None):
    """Generate the synthetic corpus; returns the output directory."""
    return _core.gen(_dump(config), seed, out)


def run(stages="all", config=None, seed=None, out=None):
    """Run pipeline stages ("all", one name, or a list) in pipeline order."""
    if stages == "all":
        stages = stage_order()
    elif isinstance(stages, str):
        stages = [stages]
    return _core.run(list(stages), _dump(config), seed, out)


def report(config=None, seed=None, out=None):
    """Write report/summary.{json,csv,txt}; returns the parsed summary."""
    out_dir = _core.report(_dump(config), seed, out)
    with open(f"{out_dir}/report/summary.json", encoding="utf-8") as fh:
        return json.load(fh)


__all__ = [
    "CLASS_NAMES",
    "ConfigError",
    "MissingPrerequisite",
    "NumericalFailure",
    "bandpass",
    "cohens_d",
    "default_config",
    "dice_iou_at_k",
    "discrete_mi",
    "dwt_denoise",
    "fft_features",
    "gen",
    "kl_divergence",
    "report",
    "run",
    "simplex_lattice",
    "soft_threshold",
    "stage_order",
    "synth_ecg",
    "validate_config",
    "windowed_nmi",
]
