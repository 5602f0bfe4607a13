"""Exception types shared across the package."""

__all__ = [
    "VarimapError",
    "SingularMetric",
    "DomainExit",
    "EngineDisagreement",
    "NonAffineSourceForm",
    "ConstructionError",
    "ConfigError",
    "UnknownCheck",
]


class VarimapError(Exception):
    """Base class for package errors."""


class SingularMetric(VarimapError):
    """Metric determinant fell below the regularity floor at an evaluation point."""


class DomainExit(VarimapError):
    """A requested evaluation point lies outside the chart domain."""


class EngineDisagreement(VarimapError):
    """Dual-number and finite-difference derivative values differ beyond tolerance."""

    def __init__(self, message, max_rel=None, context=None):
        super().__init__(message)
        self.max_rel = max_rel
        self.context = context


class NonAffineSourceForm(VarimapError):
    """Source form is not affine in the second jet coordinates.

    The order-three total-derivative assembly is only valid for source forms
    affine in phi2 with phi2-independent coefficients; anything else would
    require fourth-order jet data and is rejected.
    """


class ConstructionError(VarimapError):
    """A constructed geometry failed its own postcondition checks."""


class ConfigError(VarimapError):
    """Scenario configuration file is malformed or uses unknown keys."""


class UnknownCheck(VarimapError):
    """A requested check name is not in the check registry."""
