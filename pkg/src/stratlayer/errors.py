"""Exception types shared across the solvers and the command line runner."""


class ConfigError(ValueError):
    """Invalid grid, parameter or run configuration."""


class CompatibilityError(ValueError):
    """The layer-integrated horizontal divergence does not vanish."""


class DivergenceError(RuntimeError):
    """Picard iteration stopped contracting.

    The partial :class:`ContractionReport` is attached as ``report``.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class SnapshotError(IOError):
    """Corrupt snapshot file or snapshot incompatible with the requested grid."""
