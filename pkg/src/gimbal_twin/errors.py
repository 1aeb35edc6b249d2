"""Exception hierarchy shared across the simulator."""


class GimbalTwinError(Exception):
    """Base class for all package errors."""


class ConfigError(GimbalTwinError):
    """Scenario configuration is malformed or inconsistent."""


class SimulationFault(GimbalTwinError):
    """Numerical state left its valid envelope (non-finite or rate cap exceeded)."""


class NotPowered(GimbalTwinError):
    """The sensor node was asked to do work while not in the ACTIVE state."""


class AlignmentError(GimbalTwinError):
    """Too few time-aligned samples to compute a metric."""


class DegenerateAttitude(GimbalTwinError):
    """Measured specific force too small to resolve roll and pitch."""


class CodecError(GimbalTwinError):
    """Base class for frame decode failures."""


class CrcMismatch(CodecError):
    pass


class UnknownOpcode(CodecError):
    pass


class TruncatedFrame(CodecError):
    pass


class MalformedPayload(CodecError):
    pass
