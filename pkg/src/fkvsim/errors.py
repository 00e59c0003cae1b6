"""Shared exception types."""


class FkvError(Exception):
    """Base class for package errors."""


class SingularKernelError(FkvError, ValueError):
    """Kernel evaluated at a point where it is singular (t = 0 unshifted)."""


class GridMismatchError(FkvError, ValueError):
    """Kernel samples and solver configuration disagree on (n, tau)."""


class MeshConformityError(FkvError, ValueError):
    """Geometry violates the cracked-mesh construction rules."""


class MovingCrackError(FkvError, ValueError):
    """Operation requires a fixed crack but the schedule releases in (0, T]."""


class ConfigError(FkvError, ValueError):
    """Run configuration failed validation; carries the full error list."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {e}" for e in self.errors))
