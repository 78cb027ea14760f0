"""Exception types shared across the package."""


class EdgesplitError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(EdgesplitError):
    """A config file is malformed, missing fields, or out of range."""


class MismatchedFleet(EdgesplitError):
    """Policy and fleet disagree on the number of devices."""


class InfeasibleFleet(EdgesplitError):
    """No policy can satisfy the fleet's resource constraints."""


class InfeasiblePolicy(EdgesplitError):
    """A policy violates at least one placement constraint.

    Carries the full constraint report in ``report``.
    """

    def __init__(self, report):
        self.report = report
        lines = ", ".join(
            f"{v.constraint}[dev {v.device}] {v.measured:g} > {v.bound:g}"
            for v in report.violations
        )
        super().__init__(f"policy violates constraints: {lines}")


class DegenerateData(EdgesplitError):
    """A dataset has no usable variation (e.g. a constant feature column)."""


class NumericalFailure(EdgesplitError):
    """A numerical routine failed beyond recovery (e.g. factorization)."""


class EmptyState(EdgesplitError):
    """An operation needs at least one observation but got none."""


class ShapeMismatch(EdgesplitError):
    """Array shapes are inconsistent with the declared layout."""


class EmptyEnsemble(EdgesplitError):
    """An ensemble reduction was asked for zero members."""


class InvalidWorkload(EdgesplitError):
    """A simulation workload is incomplete or inconsistent with the fleet."""


class MissingArtifact(EdgesplitError):
    """A pipeline stage needs an artifact that has not been produced."""
