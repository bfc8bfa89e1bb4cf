"""Exception hierarchy shared by every ordlab module."""


class OrdlabError(Exception):
    """Base class for all library errors."""


class ShapeError(OrdlabError, ValueError):
    """Input rejected because of a shape or domain mismatch."""


class StateError(OrdlabError, RuntimeError):
    """Operation invoked in an invalid object state."""


class IntegrityError(OrdlabError):
    """A serialized artifact failed validation."""


class FormatError(OrdlabError, ValueError):
    """A dataset file does not follow its binary layout."""


class ConfigError(OrdlabError, ValueError):
    """Invalid experiment or component configuration."""


class BudgetExceeded(OrdlabError):
    """A brute-force exploration would exceed the configured run budget."""

    def __init__(self, run_count, budget):
        self.run_count = run_count
        self.budget = budget
        super().__init__(
            f"exploration needs {run_count} runs, budget allows {budget}"
        )


class DegenerateScoreError(OrdlabError, ArithmeticError):
    """A score cannot be computed (e.g. relative delta with zero base loss)."""
