"""Semi-supervised radio signal identification at desk scale."""

from .synth import MODULATIONS, Dataset, DatasetConfig, build_dataset

__version__ = "0.1.0"

__all__ = ["MODULATIONS", "Dataset", "DatasetConfig", "build_dataset", "__version__"]
