"""Error types. Every error carries a machine-readable payload for the CLI."""


class MdpError(Exception):
    code = "error"

    def __init__(self, message, **details):
        super().__init__(message)
        self.details = details

    def to_dict(self):
        out = {"error": self.code, "message": str(self)}
        for name, value in self.details.items():
            out[name] = value if isinstance(value, (int, float, bool, type(None), list, dict)) else str(value)
        return out


class KeyFormatError(MdpError):
    """A state key does not belong to the model's family."""
    code = "malformed-key"


class InfiniteBranchingError(MdpError):
    code = "infinite-branching"


class UnsupportedOperation(MdpError):
    code = "unsupported-operation"


class UnreachableState(MdpError):
    code = "unreachable-state"


class ContractViolation(MdpError):
    """A strategy kernel produced something its class does not allow."""
    code = "contract-violation"


class ValidationError(MdpError):
    code = "validation-error"


class ScheduleError(MdpError):
    code = "schedule-failure"
