"""
Exception hierarchy shared by every package; exit codes are what main.py returns
"""

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class PipelineError(Exception):
    exit_code = EXIT_CONFIG


class ConfigError(PipelineError):
    """Bad configuration key/value, invalid network flags or CLI usage"""
    exit_code = EXIT_CONFIG


class DataError(PipelineError):
    """Unusable input data: bad manifest rows, empty folds, too-small classes"""
    exit_code = EXIT_DATA


class NumericError(PipelineError):
    """NaN/inf losses, failed gradient checks, golden report mismatches"""
    exit_code = EXIT_NUMERIC


class ShapeError(PipelineError, ValueError):
    """Operand or input extents do not fit the operation"""
    exit_code = EXIT_DATA


class CheckpointError(PipelineError):
    exit_code = EXIT_DATA
    code = "checkpoint"


class CheckpointVersionError(CheckpointError):
    code = "version"


class CheckpointCorruptError(CheckpointError):
    code = "corrupt-length"


class CheckpointFingerprintError(CheckpointError):
    code = "fingerprint"
