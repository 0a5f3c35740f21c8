"""Exception hierarchy shared by all modules."""


class PseudoparError(Exception):
    """Base class; ``invariant`` names the check that failed."""

    invariant = "generic"


class InvalidMeshSpec(PseudoparError, ValueError):
    invariant = "mesh-spec"


class SnapError(PseudoparError, ValueError):
    invariant = "grid-snap"


class GeometryError(PseudoparError, ValueError):
    invariant = "geometry"


class ParseError(PseudoparError, ValueError):
    invariant = "parse"

    def __init__(self, message, line=None, offset=None):
        self.line = line
        self.offset = offset
        where = ""
        if line is not None:
            where = f"line {line}: "
        elif offset is not None:
            where = f"offset {offset}: "
        super().__init__(where + message)


class SolverDiverged(PseudoparError, RuntimeError):
    invariant = "cg-convergence"

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class PreconditionerError(PseudoparError, ValueError):
    invariant = "jacobi-diagonal"


class IncompatibleSource(PseudoparError, ValueError):
    invariant = "flux-compatibility"


class SingularConstantsMatrix(PseudoparError, ArithmeticError):
    invariant = "constants-matrix"


class CoefficientError(PseudoparError, KeyError):
    invariant = "coefficient-map"

    def __str__(self):
        return str(self.args[0]) if self.args else "missing coefficient"


class InvalidField(PseudoparError, ValueError):
    invariant = "finite-field"


class StaleField(PseudoparError, ValueError):
    invariant = "solved-field"


class ContractionFailure(PseudoparError, RuntimeError):
    invariant = "picard-contraction"


class ConfigError(PseudoparError, ValueError):
    invariant = "config"


class EvalError(PseudoparError, ArithmeticError):
    invariant = "expression-eval"


class StiffnessWarning(UserWarning):
    """Explicit scheme run beyond its stability bound."""
