"""Camera pulse oximetry toolkit: spatio-temporal maps from facial video,
Butterworth DC/AC decomposition, ratio-of-ratios and regression baselines,
and dual-branch convolutional SpO2 estimators with a shared training harness.
"""

from . import baselines, config, filters, harness, io, models, stmap, synth, tensornet
from .errors import OximapError

__version__ = "0.1.0"

__all__ = [
    "OximapError",
    "__version__",
    "baselines",
    "config",
    "filters",
    "harness",
    "io",
    "models",
    "stmap",
    "synth",
    "tensornet",
]
