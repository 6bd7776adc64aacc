"""Exception hierarchy shared across the package."""


class ShapeOpError(Exception):
    """Base class for all errors raised by shapeop."""


class ConfigError(ShapeOpError):
    """Invalid user input: config schema violations, bad CLI arguments."""


class DomainError(ShapeOpError):
    """Point outside the reference domain, or unsupported domain name."""


class AtlasError(ShapeOpError):
    """Atlas violates its admissibility conditions (c_gamma >= 1, det <= 0, ...)."""


class PullbackError(ShapeOpError):
    """Coefficient/rhs transformation failed (non-positive Jacobian determinant, non-SPD data)."""


class TransportError(ShapeOpError):
    """Pointwise inversion of the deformation field did not converge."""


class FemError(ShapeOpError):
    """Mesh or solve failure: inverted triangles, indefinite systems, residual too large."""


class FrameError(ShapeOpError):
    """Frame algebra failure: unresolvable members, mismatched truncations."""


class SurrogateError(ShapeOpError):
    """Surrogate construction or training failure."""


class BenchError(ShapeOpError):
    """A benchmark stage failed; the stage name is recorded in the report."""
