"""Exception hierarchy. The CLI maps InputError to exit code 2 and
NumericalError to exit code 3."""


class WoundbenchError(Exception):
    """Base class for all woundbench errors."""


class InputError(WoundbenchError, ValueError):
    """Bad user input: malformed files, inconsistent arguments, empty regions."""


class MeshFormatError(InputError):
    """A mesh, camera or mask file could not be parsed."""


class NumericalError(WoundbenchError, RuntimeError):
    """A numerical procedure failed (degenerate geometry, no ICP overlap)."""
