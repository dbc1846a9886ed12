"""Exception types shared across the package."""


class InputError(ValueError):
    """Malformed or dimensionally inconsistent input."""


class BuilderError(InputError):
    """Invalid use of the cone-program builder."""


class BudgetError(ValueError):
    """The safety budget cannot accommodate the reach-set bound.

    Raised when the distance between the safe and unsafe sets does not
    exceed ``beta_max``: even the zero-growth bound overshoots.
    """
