"""Exception hierarchy shared by every simulator component."""


class SimulationError(Exception):
    """Base class for all simulator errors."""


class ConfigError(SimulationError):
    """A configuration file or value could not be parsed.

    ``key`` names the offending entry when one is known.
    """

    def __init__(self, message: str, key: str | None = None) -> None:
        super().__init__(message)
        self.key = key


class IllegalCommand(SimulationError):
    """A DRAM command was issued in a state that does not permit it.

    This always indicates a scheduler bug; the message carries the bank
    state so the offending trace can be reconstructed.
    """


class OutOfRange(SimulationError):
    """A physical address lies outside the DRAM window."""


class MalformedInstruction(SimulationError):
    """A PuM instruction word failed to decode."""


class OperandBankMismatch(SimulationError):
    """RowClone operands live in different banks."""


class BufferUnderflow(SimulationError):
    """Fewer than 32 random bits are buffered."""


class UnmappedOffset(SimulationError):
    """An MMIO access hit an offset with no register behind it."""


class ProtocolViolation(SimulationError):
    """The start/ack/finish handshake was driven out of order."""


class CharacterizationFailure(SimulationError):
    """Subarray characterization found no usable row group in a bank."""


class NoTrngCells(SimulationError):
    """Fewer than four cells fail within the requested probability band."""


class InvalidSize(SimulationError):
    """alloc_align size is not a positive multiple of the row size."""


class OutOfSubarrayCapacity(SimulationError):
    """The subarray bound to an allocation ID has no free row pairs left."""


class UnknownBankState(SimulationError):
    """alloc_align was called before the subarray tables were built."""


class GranularityViolation(SimulationError):
    """A RowClone request does not cover whole DRAM rows."""


class NotCoLocated(SimulationError):
    """RowClone operands do not share a subarray."""


class UnmappedAddress(SimulationError):
    """A virtual address has no page-table entry."""


class MissingInitializer(SimulationError):
    """No zero row is registered for a destination page's subarray."""


class CalibrationInfeasible(SimulationError):
    """No nonnegative set of constants reproduces the calibration targets."""
