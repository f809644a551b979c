"""Exception taxonomy shared by all qtraj modules."""


class QTrajError(Exception):
    """Base class for every error raised by qtraj."""


class DimensionError(QTrajError, ValueError):
    """Operand shapes are inconsistent."""


class DimensionLimitError(DimensionError):
    """A tensor product would exceed the configured maximum dimension."""


class InvalidStateError(QTrajError, ValueError):
    """A matrix fails the density-matrix (or POVM element) checks."""


class NonHermitianError(QTrajError, ValueError):
    """A generator or observable is not Hermitian within tolerance."""


class NotICError(QTrajError, ValueError):
    """An operator set does not span the full operator space."""


class ExpansionError(QTrajError, ArithmeticError):
    """A channel could not be expanded in a causal-break basis."""


class BudgetExceededError(QTrajError, RuntimeError):
    """A trajectory enumeration exceeded the configured budget."""


class UndefinedConditionalError(QTrajError, ValueError):
    """Conditioning on a history with (numerically) zero probability."""


class NonUnitalError(QTrajError, ValueError):
    """A scaling-unitary decomposition was requested for a non-unital map."""


class NonHermiticityPreservingError(QTrajError, ValueError):
    """The channel's Gell-Mann matrix has a non-negligible imaginary part."""


class FormulaApplicabilityError(QTrajError, ValueError):
    """A closed-form expression disagrees with the direct computation."""


class ConfigError(QTrajError, ValueError):
    """An experiment configuration failed validation.

    Attributes:
        violations: list of ``(json_pointer, message)`` pairs, one per problem.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        lines = [f"{path or '/'}: {msg}" for path, msg in self.violations]
        super().__init__("invalid configuration:\n  " + "\n  ".join(lines))
