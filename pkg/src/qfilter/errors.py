"""Exception hierarchy shared across the package."""


class QFilterError(Exception):
    """Base class for all errors raised by qfilter."""


# quantum states and measurements
class InvalidStateError(QFilterError, ValueError):
    """A matrix or Bloch vector does not describe a physical state."""


class DimensionError(QFilterError, ValueError):
    """An operand has the wrong matrix dimension."""


class ContractError(QFilterError, ValueError):
    """An operator violates a required property (e.g. unitarity)."""


class ZeroProbabilityError(QFilterError, ValueError):
    """A measurement branch has (numerically) zero probability."""


class IncompleteProjectorsError(QFilterError, ValueError):
    """A projector set does not resolve the identity."""


class UnknownObservableError(QFilterError, ValueError):
    pass


# models
class DegenerateModelError(QFilterError, ValueError):
    """A density is requested where the model only defines a point mass."""


# estimation and filtering
class InsufficientHistoryError(QFilterError, ValueError):
    pass


class NoNeighborError(QFilterError, ArithmeticError):
    """Kernel weights of the conditioning window underflowed."""


class ZeroNormalizerError(QFilterError, ArithmeticError):
    """The posterior normalizer vanished on the grid."""


class NoninformativePointError(QFilterError, ArithmeticError):
    """T'(x) is ~0, so the filtering equation cannot be solved at x."""


class DensitySaturationError(QFilterError, ArithmeticError):
    """The predictive density estimate hit its floor."""


class ConfigError(QFilterError, ValueError):
    """Invalid scenario configuration; ``path`` names the offending key."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path
