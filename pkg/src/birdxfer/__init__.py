"""Transfer learning on precomputed birdcall embeddings with pseudo multi-labels."""

from birdxfer.errors import ConfigError, DataError, TrainingError

__all__ = ["ConfigError", "DataError", "TrainingError"]
__version__ = "0.1.0"
