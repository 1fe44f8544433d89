"""Exception types shared across the package."""


class SpinBondError(Exception):
    """Base class for all spinbond-specific errors."""


class ConfigError(SpinBondError):
    """Malformed or inconsistent experiment configuration (CLI exit code 2)."""


class StateSpaceCapError(SpinBondError):
    """Exact computation requested on a state space above the configured cap (exit code 3)."""

    def __init__(self, required: int, cap: int, label: str = "state space"):
        self.required = required
        self.cap = cap
        super().__init__(
            f"{label} needs {required} states, above the supported cap of {cap}"
        )


class CensoringError(SpinBondError):
    """Too many replicas hit the simulation horizon before completing."""


class InvariantViolation(SpinBondError):
    """A structural invariant failed during simulation; indicates a bug."""
