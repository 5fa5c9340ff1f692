class InvGuardError(Exception):
    """Base class for all toolkit errors."""


class MalformedTrace(InvGuardError):
    """Trace input is corrupt or truncated."""


class AbiMismatch(InvGuardError):
    """Calldata does not fit the declared argument encoding."""


class ProviderUnavailable(InvGuardError):
    pass


class CorruptCache(InvGuardError):
    pass


class EmptyCorpus(InvGuardError):
    pass


class TrackerDesync(InvGuardError):
    """Taint stack diverged from the concrete stack (unmodelled opcode arity)."""


class ConfigMissing(InvGuardError):
    """A category was requested but its configuration section is absent."""


class StateCorrupt(InvGuardError):
    """Guard state references a location the manifest does not know."""


class ConfigError(InvGuardError):
    pass
