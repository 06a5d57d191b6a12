"""Exception types raised across the package."""


class CcsrpError(Exception):
    """Base class for all package errors."""


class ShapeMismatch(CcsrpError, ValueError):
    pass


class IncompatibleShapes(ShapeMismatch):
    pass


class NonFiniteActivation(CcsrpError, FloatingPointError):
    pass


class StaleTrace(CcsrpError, RuntimeError):
    pass


class MaskMismatch(CcsrpError, ValueError):
    pass


class SegmentLengthMismatch(MaskMismatch):
    pass


class EmptyLayer(CcsrpError, ValueError):
    pass


class ConfigInvalid(CcsrpError, ValueError):
    pass


class EmptyDataset(CcsrpError, ValueError):
    pass


class UnevaluatedIndividual(CcsrpError, ValueError):
    pass


class BadMagic(CcsrpError, ValueError):
    pass


class CountMismatch(CcsrpError, ValueError):
    pass


class TruncatedFile(CcsrpError, ValueError):
    pass


class MissingEntry(CcsrpError, FileNotFoundError):
    pass
