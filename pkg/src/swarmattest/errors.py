"""Exception hierarchy shared by every module in the package."""


class SwarmAttestError(Exception):
    """Base class for all package errors."""


class EmptyKey(SwarmAttestError, ValueError):
    pass


class ChainTooShort(SwarmAttestError, ValueError):
    pass


class StaleKey(SwarmAttestError):
    """A disclosed key index is not newer than the cursor."""


class ForgedKey(SwarmAttestError):
    """A disclosed key does not hash back to the last authenticated key."""


class BeforeSchedule(SwarmAttestError, ValueError):
    pass


class MalformedPacket(SwarmAttestError, ValueError):
    pass


class Infeasible(SwarmAttestError):
    """No cluster assignment satisfies the selection constraints."""

    def __init__(self, constraint, detail=""):
        self.constraint = constraint
        super().__init__(f"infeasible: {constraint} {detail}".strip())


class GenerationFailed(SwarmAttestError):
    pass


class ConfigError(SwarmAttestError, ValueError):
    """Invalid scenario configuration; ``field`` names the offending entry."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class InvariantViolation(SwarmAttestError):
    pass
