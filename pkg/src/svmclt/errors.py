"""Error taxonomy used across the package.

Three classes, matched to the CLI exit codes: bad caller input (exit 1),
numerical failure such as solver non-convergence (exit 2), and broken
internal invariants that indicate a bug rather than a user problem.
"""


class InputError(ValueError):
    """The caller supplied invalid data (dimensions, flags, file contents)."""


class NumericError(ArithmeticError):
    """A computation failed numerically (non-convergence, non-finite values)."""


class InternalError(RuntimeError):
    """An internal self-check failed; this is a bug, not a usage error."""
