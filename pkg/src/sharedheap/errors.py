"""Exception hierarchy for the shared heap."""


class SharedHeapError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(SharedHeapError):
    pass


class UsageError(SharedHeapError):
    pass


class AllocationError(SharedHeapError):
    """An object could not be allocated (too large, or the server heap is full)."""


class ProtocolFault(SharedHeapError):
    """A cell received a message that violates the GOM/LOM protocol."""


class DeadlockError(SharedHeapError):
    """The event queue drained while some client tasks were still blocked."""

    def __init__(self, blocked):
        self.blocked = dict(blocked)
        detail = ", ".join(f"client {c} awaiting {w}" for c, w in sorted(self.blocked.items()))
        super().__init__(f"deadlock: {detail}")


class NilReferenceError(SharedHeapError):
    def __init__(self, msg="nil reference followed"):
        super().__init__(msg)


class MetricsError(SharedHeapError):
    pass
