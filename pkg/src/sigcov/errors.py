"""Exception types raised across the package."""


class InvalidInputError(ValueError):
    pass


class OracleScaleExceeded(ValueError):
    """The brute-force oracle refuses inputs beyond its enumeration guards."""


class IllConditionedKernelError(RuntimeError):
    pass


class TrainingDivergedError(RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
