"""Exception types shared across the package."""


class ParastepError(ValueError):
    """Base class for all errors raised by parastep."""


class GridError(ParastepError):
    """A mesh/grid precondition was violated (off-lattice node, bad spec, ...)."""


class NonlinearityError(ParastepError):
    """An operator descriptor is malformed (F(0) != 0, bad ellipticity, ...)."""


class SchemeError(ParastepError):
    """A scheme could not be built or applied (non-representable operator, ...)."""


class SolverConvergenceError(ParastepError):
    """The implicit solver failed to reach the residual tolerance."""


class EnvelopeError(ParastepError):
    """Envelope/contact-set preconditions violated."""


class DiagnosticsError(ParastepError):
    """A diagnostic routine was called with unusable inputs."""


class ConfigError(ParastepError):
    """Malformed configuration file or option set."""
