"""Exception hierarchy shared by all modules.

Every fault carries a short machine-readable ``code`` so the CLI can report
it with module context.
"""


class PulseMechError(Exception):
    """Base class for physics and data faults raised by this package."""

    code = "fault"

    def __init__(self, message, *, code=None, details=None):
        super().__init__(message)
        if code is not None:
            self.code = code
        self.details = details or {}


class UnphysicalStateError(PulseMechError, ValueError):
    code = "unphysical-state"


class RegimeError(PulseMechError, ValueError):
    code = "regime"


class FitError(PulseMechError, RuntimeError):
    code = "fit"


class HistogramError(PulseMechError, ValueError):
    code = "histogram"


class ReconstructionError(PulseMechError, ValueError):
    code = "reconstruction"


class SymmetryError(PulseMechError, ValueError):
    code = "symmetry"


class CoverageError(PulseMechError, ValueError):
    code = "coverage"


class DarkModeError(PulseMechError, ValueError):
    code = "dark-mode"


class NonlinearityError(PulseMechError, ValueError):
    code = "nonlinear"


class ExtremaError(PulseMechError, ValueError):
    code = "too-few-extrema"
