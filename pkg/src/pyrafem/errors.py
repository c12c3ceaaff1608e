"""Exception types raised by pyrafem."""


class PyrafemError(ValueError):
    """Base class for all errors raised by this package."""


class DivergentIntegralError(PyrafemError):
    """An integrand has a non-integrable pole at the apex of the pyramid."""


class SingularEvaluationError(PyrafemError):
    """A rational function was evaluated at its pole."""


class DegenerateElementError(PyrafemError):
    """An affine pyramid has a (numerically) vanishing Jacobian determinant."""


class InvalidOrderError(PyrafemError):
    pass


class DegreeError(PyrafemError):
    """The exterior derivative was requested on a 3-form."""


class DegreeTooHighError(PyrafemError):
    pass


class NotInSpaceError(PyrafemError):
    pass


class DimensionMismatchError(PyrafemError):
    pass


class SingularSystemError(PyrafemError):
    pass


class NonconformingMeshError(PyrafemError):
    pass


class IndefiniteSystemError(PyrafemError):
    pass


class ConvergenceError(PyrafemError):
    pass
