"""Physics-informed underwater image quality assessment toolkit."""

from .errors import (EstimatorError, IncompatibleCheckpoint, InvalidArgument, NotFound,
                     PiguiqaError, TrainingDiverged, UndefinedCorrelation, VerificationFailed)

__version__ = "0.1.0"
