class ValidationError(ValueError):
    """Invalid parameters or configuration; raised before any computation."""


class NumericalError(RuntimeError):
    """A solver or optimizer failed to reach its stated accuracy."""


class DegenerateEquilibria(ValueError):
    """At rho = 1 the mean-field flow has a continuum of equilibria."""
