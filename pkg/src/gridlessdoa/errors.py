"""Exception hierarchy shared across the package.

Exit-code mapping used by the CLI: InputError -> 2, NotConverged -> 3,
HypothesisViolation -> 4.
"""


class GridlessError(Exception):
    """Base class for all package errors."""


class InputError(GridlessError):
    """Invalid user input (files, shapes, parameter ranges)."""


class ParseError(InputError):
    def __init__(self, message, path=None, line=None):
        loc = ""
        if path is not None:
            loc = f"{path}"
            if line is not None:
                loc += f":{line}"
            loc += ": "
        super().__init__(f"{loc}{message}")
        self.path = path
        self.line = line


class DimensionTooSmall(InputError):
    """Virtual lattice does not contain the physical array."""


class NonLatticePosition(InputError):
    """Antenna position is not a point of the virtual lattice."""


class DimensionMismatch(InputError):
    """Array/vector sizes are inconsistent."""


class SizeMismatch(DimensionMismatch):
    """Operand sizes differ (matrix corners, frequency-set cardinality)."""


class InvalidTau(InputError):
    """Regularization weight outside (0, 1)."""


class InvalidN(InputError):
    """Measurement count too small for the tau-bound formulas."""


class HypothesisViolation(GridlessError):
    """A rank/uniqueness hypothesis required by the decomposition fails."""


class NotPSD(HypothesisViolation):
    """Matrix is not positive semidefinite within tolerance."""


class RankConditionViolated(HypothesisViolation):
    """Corner-rank equality or r < max(dims) fails; decomposition not unique."""


class RankDeficientStack(HypothesisViolation):
    """Shift-invariance stack lost rank; decomposition hypotheses violated."""


class PairingDegeneracy(HypothesisViolation):
    """Joint diagonalization failed to align the per-axis shift operators."""


class SingularFisher(HypothesisViolation):
    """Fisher information matrix is singular (degenerate scene)."""


class EigenFailure(GridlessError):
    """Eigendecomposition backend did not converge."""


class NotConverged(GridlessError):
    """Iterative solver exhausted its budget; best iterate is attached."""

    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution
