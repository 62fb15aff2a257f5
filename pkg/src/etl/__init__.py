"""ETL module: synthetic phantoms, dataset manifests, irregular masks."""

from .loader import DatasetLoader, SplitTensors

__all__ = ['DatasetLoader', 'SplitTensors']
