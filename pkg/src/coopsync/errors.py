"""Exception types raised by coopsync."""


class CoopSyncError(ValueError):
    """Base class for all coopsync errors."""


class InvalidDimensions(CoopSyncError):
    pass


class InvalidParameter(CoopSyncError):
    pass


class InvalidCovariance(CoopSyncError):
    pass


class SingularDesign(CoopSyncError):
    """Training matrix is rank deficient (X^H X not invertible)."""


class NumericalDegeneracy(CoopSyncError):
    """A matrix that must be inverted is singular or badly conditioned."""


class PolicyDegeneracy(NumericalDegeneracy):
    pass


class UnsupportedDraw(CoopSyncError):
    pass


class SearchRefused(CoopSyncError):
    pass
