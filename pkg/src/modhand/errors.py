"""Exception types shared across the package."""


class ModhandError(Exception):
    """Base class for package errors."""


class ConfigError(ModhandError):
    """Malformed config file; message carries file and line number."""


class OverConstrainedError(ModhandError):
    """Cable displacements admit no finger pose within the joint limits.

    `constraint` names the violated constraint: "flexor", "extensor",
    or "flexor+extensor".
    """

    def __init__(self, constraint: str, detail: str = ""):
        self.constraint = constraint
        msg = f"over-constrained cable displacements ({constraint})"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class EncodeError(ModhandError):
    """Message cannot be serialized to a wire frame."""


class TransportError(ModhandError):
    """Byte channel to a peer is closed or failed mid-operation."""


class MissingRoleError(ModhandError):
    """A grasp requires a finger role the hand configuration lacks."""

    def __init__(self, role: str):
        self.role = role
        super().__init__(f"grasp requires missing or inactive role: {role}")


class SessionFormatError(ModhandError):
    """Session record file is corrupt or has an unsupported version."""

    def __init__(self, message: str, frame_index: int | None = None):
        self.frame_index = frame_index
        super().__init__(message)
