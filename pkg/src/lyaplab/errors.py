"""Exception types shared across the package.

Every numerical precondition that can fail at runtime gets its own named
error so callers (and the CLI) can distinguish "your input is outside the
theory's hypotheses" from genuine bugs.
"""


class LyaplabError(Exception):
    """Base class for all package-specific errors."""


# --- matrix_lab ---------------------------------------------------------


class EigenNotSimple(LyaplabError):
    """Two eigenvalues lie within the isolation-gap tolerance of the seed."""


class EigenComplex(LyaplabError):
    """The eigenvalue nearest the seed has a nonreal part beyond tolerance."""


class SingularRestriction(LyaplabError):
    """The restricted resolvent (Id - A/eta) on the complement is too
    ill-conditioned to invert reliably."""


# --- field_calculus -----------------------------------------------------


class RankMismatch(LyaplabError):
    """Operands have incompatible dimension, degree or variance."""


class InverseIterationDiverged(LyaplabError):
    """Newton preimage solve for a torus map failed to converge."""


# --- perturbation_families ----------------------------------------------


class TangentMismatch(LyaplabError):
    """Finite-difference extraction of the family tangents disagrees with
    the declared generators (broken composition rule)."""


# --- splitting_engine ---------------------------------------------------


class NoDomination(LyaplabError):
    """Requested bundle grouping violates the modulus-gap threshold."""


class PowerIterationStalled(LyaplabError):
    """Bundle power iteration did not converge within the iteration cap."""


class NormalizationSingular(LyaplabError):
    """pair(omega_F, V) dropped below tolerance somewhere: transversality
    of the computed bundle with ker omega_F was lost."""


class InvarianceResidualHigh(LyaplabError):
    """The splitting handed in is not invariant enough for the requested
    operation."""


# --- derivatives ----------------------------------------------------------


class NeedsSmoothOmega(LyaplabError):
    """The selected route requires a differentiable omega_F representation."""


class NeedsSmoothV(LyaplabError):
    """The selected route requires a differentiable V_E representation."""


class SeriesTooLong(LyaplabError):
    """The geometric series for V' needs more terms than the hard cap
    (domination ratio too close to 1)."""


# --- regularity_lab -----------------------------------------------------


class TooFewBlocks(LyaplabError):
    """Not enough occupied dyadic blocks to fit a regularity slope."""


class BudgetExceeded(LyaplabError):
    """Requested construction would exceed the declared frequency budget."""


# --- cli ----------------------------------------------------------------


class SpecInvalid(LyaplabError):
    """An experiment spec failed validation; message lists the fields."""
