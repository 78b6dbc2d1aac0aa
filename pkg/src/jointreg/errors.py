"""Exception types raised by the public API.

Every error carries enough context to name the offending input (file,
offset, rule) so batch drivers can report failures without a traceback.
"""

from __future__ import annotations


class JointRegError(Exception):
    """Base class for all errors raised by this package."""


class InputError(JointRegError):
    """An argument violates a documented precondition."""


class FormatError(InputError):
    """A file failed structural validation.

    Parameters
    ----------
    path : str
        File that failed to parse.
    rule : str
        The invariant that was violated.
    offset : int, optional
        Byte offset (binary) or line number (text) where the problem sits.
    """

    def __init__(self, path, rule, offset=None):
        self.path = str(path)
        self.rule = rule
        self.offset = offset
        where = f" at {offset}" if offset is not None else ""
        super().__init__(f"{self.path}{where}: {rule}")


class MeshError(InputError):
    """A surface mesh violates a geometric or topological invariant."""


class DivergenceError(JointRegError):
    """Optimization produced a non-finite objective value."""

    def __init__(self, term, iteration, level):
        self.term = term
        self.iteration = iteration
        self.level = level
        super().__init__(
            f"non-finite value in '{term}' at level {level}, iteration {iteration}"
        )
