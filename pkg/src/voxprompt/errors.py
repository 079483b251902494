"""Exception hierarchy shared across the package."""


class VoxPromptError(Exception):
    """Base class for all voxprompt errors."""


# --- binary codecs ---

class BadMagic(VoxPromptError):
    """Byte stream does not start with the expected magic."""


class UnsupportedVersion(VoxPromptError):
    """Recognized container but unsupported format version."""


class BadHeader(VoxPromptError):
    """Header is malformed or declares something we cannot represent."""


class TruncatedPayload(VoxPromptError):
    """Payload length disagrees with the dimensions in the header."""


class UnsupportedDescr(VoxPromptError):
    """NPY descr outside the supported set (|u1, <i2, <f4)."""


class FortranOrderUnsupported(VoxPromptError):
    """NPY arrays must be stored in C order."""


# --- geometry / inputs ---

class ShapeMismatch(VoxPromptError):
    """Operands do not share the required shape."""


class ClickOutOfBounds(VoxPromptError):
    """Click center lies outside the volume."""


class InvalidBBox(VoxPromptError):
    """Bounding box is empty or not contained in the volume."""


class WrongLength(VoxPromptError):
    """Sequence has an unexpected number of elements."""


class EmptyClassList(VoxPromptError):
    """At least one class is required."""


# --- external segmenter ---

class ChildLaunchFailed(VoxPromptError):
    """The child process could not be started."""


class ChildTimeout(VoxPromptError):
    """The child process exceeded its time limit."""


class ChildExitNonzero(VoxPromptError):
    """The child process exited with a nonzero status."""


class ProtocolError(VoxPromptError):
    """The child produced a malformed or out-of-contract response."""
