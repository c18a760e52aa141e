"""Exception hierarchy shared across the toolkit.

Every error carries a short machine-parsable ``code`` so the CLI can print a
single ``code: message`` line.
"""


class PiguiqaError(Exception):
    code = "error"


class InvalidArgument(PiguiqaError, ValueError):
    code = "invalid-argument"


class NotFound(PiguiqaError, LookupError):
    code = "not-found"


class EstimatorError(PiguiqaError):
    code = "estimator-error"

    def __init__(self, method, message):
        super().__init__(f"{method}: {message}")
        self.method = method


class UndefinedCorrelation(PiguiqaError, ArithmeticError):
    code = "undefined-correlation"


class TrainingDiverged(PiguiqaError):
    code = "training-diverged"

    def __init__(self, message, last_good=None):
        super().__init__(message)
        self.last_good = last_good


class IncompatibleCheckpoint(PiguiqaError):
    code = "incompatible-checkpoint"


class VerificationFailed(PiguiqaError):
    code = "verification-failed"
