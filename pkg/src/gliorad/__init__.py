"""Conventional-radiomics survival prognosis for multi-center glioblastoma MRI.

The package is a library first: volumes and preprocessing, 107-feature
radiomics extraction, tabular harmonization and imbalance handling,
penalized linear survival models, repeated-CV feature selection, and the
repeated-split statistical evaluation protocol, plus a synthetic cohort
generator that makes the whole pipeline runnable end to end without data.
``python -m gliorad`` exposes the pipeline stages as subcommands.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    ConfigError,
    ConvergenceError,
    DegenerateInputError,
    FormatError,
    GlioradError,
    LeakageError,
    UnsupportedGeometryError,
    UsageError,
)
from .volume import CropBox, SegmentationSet, Volume, crop_to_brain_fov, load_volume, resample, save_volume  # noqa: F401
