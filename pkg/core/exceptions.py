"""
Error hierarchy shared by every module.

Library code raises these and never exits; the command-line entry point maps
``exit_code`` to the process status.
"""


class LrsegError(ValueError):
    exit_code = 3


class DataError(LrsegError):
    """Malformed, inconsistent or insufficient input data (exit 3)."""
    exit_code = 3


class NumericError(LrsegError):
    """Non-finite values produced during fitting or scoring (exit 4)."""
    exit_code = 4


# Container / file formats
class BadMagic(DataError):
    pass

class DimMismatch(DataError):
    pass

class TruncatedFile(DataError):
    pass

class MalformedMetadata(DataError):
    pass

class LengthMismatch(DataError):
    pass

class BadFormat(DataError):
    pass

class IllegalLabelValue(DataError):
    pass

class ShapeMismatch(DataError):
    pass

class ZeroNormRow(DataError):
    pass


# Estimators
class TooFewPoints(DataError):
    pass

class EmptyBatch(DataError):
    pass

class EmptyData(DataError):
    pass

class KTooLarge(DataError):
    pass

class EmptyReferenceSet(DataError):
    pass

class ZeroQueryVector(DataError):
    pass

class KindMismatch(DataError):
    pass


# Pipeline / evaluation / CLI
class MissingDecision(DataError):
    pass

class MissingGroundTruth(DataError):
    pass

class UnknownScenario(DataError):
    pass


# Extractor
class ModelLoadError(DataError):
    pass

class ImageDecodeError(DataError):
    pass


class NonFiniteValue(NumericError):
    pass
