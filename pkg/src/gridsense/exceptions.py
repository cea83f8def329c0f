"""Exception hierarchy.

The CLI maps each family onto an exit code: structural/schema problems to 2,
numerical failures to 3.
"""


class GridSenseError(Exception):
    """Base class for all package errors."""


class StructuralError(GridSenseError):
    """Network topology or data model is inconsistent."""


class SchemaError(StructuralError):
    """Feeder file does not follow the expected JSON layout.

    ``path`` is a JSON-pointer-like location of the offending value.
    """

    def __init__(self, message, path=""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class AssemblyError(StructuralError):
    """Admittance assembly failed, e.g. a singular branch impedance block."""


class NumericalError(GridSenseError):
    """A linear solve or iteration failed."""


class LoadflowNotConverged(NumericalError):
    def __init__(self, message, trace=None):
        self.trace = list(trace or [])
        super().__init__(message)


class SingularSystemError(NumericalError):
    """The sensitivity system matrix could not be factorized."""


class OracleError(NumericalError):
    """A perturbed load flow diverged inside the finite-difference oracle."""
