"""Exception hierarchy."""


class FNError(Exception):
    """Base class for all errors raised by fnhydro."""


class ExprSyntaxError(FNError):
    def __init__(self, message: str, position: int, source: str = ""):
        self.position = position
        self.source = source
        pointer = ""
        if source:
            pointer = f"\n  {source}\n  {' ' * position}^"
        super().__init__(f"{message} at position {position}{pointer}")


class UnknownIdentifierError(ExprSyntaxError):
    pass


class ArityError(ExprSyntaxError):
    pass


class EvaluationError(FNError):
    """Evaluation produced a non-finite number."""

    def __init__(self, message: str, subexpression: str = ""):
        self.subexpression = subexpression
        super().__init__(message)


class DomainError(EvaluationError):
    """An operation was applied outside its domain (log, sqrt, division)."""


class DerivativeOrderError(FNError):
    """More derivatives were requested than a field can supply."""


class DimensionError(FNError, ValueError):
    pass


class NotClosedError(FNError):
    def __init__(self, message: str, residual: float):
        self.residual = residual
        super().__init__(f"{message} (residual {residual:.3e})")


class TorsionError(FNError):
    """A construction requiring a torsion-free operator got one with torsion."""

    def __init__(self, message: str, residual: float):
        self.residual = residual
        super().__init__(f"{message} (residual {residual:.3e})")


class SeedConditionError(NotClosedError):
    """The seed a_0 violates d d_N a_0 = 0."""


class ChainInconsistencyError(NotClosedError):
    """M_k^* da_0 failed to be closed although N is torsion-free."""


class QuadratureError(FNError):
    pass


class StepSizeError(FNError):
    """Adaptive integrator step size fell below its floor."""


class DegenerateSpanError(FNError):
    pass


class CommutationError(FNError):
    """Operators that were required to commute do not."""


class CFLError(FNError):
    def __init__(self, cfl: float, limit: float):
        self.cfl = cfl
        self.limit = limit
        super().__init__(f"CFL number {cfl:.4g} exceeds limit {limit:.4g}")


class BlowupError(FNError):
    """The solution left the smooth regime (gradient catastrophe)."""

    def __init__(self, message: str, frame_index: int, last_frame=None, time=None):
        self.frame_index = frame_index
        self.last_frame = last_frame
        self.time = time
        super().__init__(f"{message} (last valid frame {frame_index})")


class ManifestError(FNError):
    pass
