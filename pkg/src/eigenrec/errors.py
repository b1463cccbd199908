"""Exception types shared across the package.

Plain ``ValueError`` is used for ordinary invalid arguments; the classes here
exist so the CLI can map failure modes to distinct exit codes.
"""


class ParseError(ValueError):
    """A persisted file (operator set, dataset, checkpoint) is malformed."""


class IntegrityError(RuntimeError):
    """Cross-file consistency violated, e.g. an operator-set hash mismatch."""


class NumericError(RuntimeError):
    """A numerical routine failed (solver non-convergence, NaN loss)."""
