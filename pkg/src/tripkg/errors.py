"""Exception hierarchy shared across the pipeline.

Each category carries the process exit code the CLI reports for it.
"""


class TripKGError(Exception):
    exit_code = 1


class ConfigError(TripKGError, ValueError):
    exit_code = 2


class DataError(TripKGError, ValueError):
    exit_code = 3


class RuntimeFailure(TripKGError, RuntimeError):
    exit_code = 4


class DecompositionError(RuntimeFailure):
    def __init__(self, method, message):
        super().__init__(f"{method}: {message}")
        self.method = method


class DivergenceError(RuntimeFailure):
    def __init__(self, epoch, message="non-finite parameter"):
        super().__init__(f"training diverged at epoch {epoch}: {message}")
        self.epoch = epoch


class MissingStageError(TripKGError):
    exit_code = 5

    def __init__(self, stage, path):
        super().__init__(f"missing artifact {path}: run {stage} first")
        self.stage = stage
        self.path = path
