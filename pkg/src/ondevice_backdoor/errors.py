"""Exception hierarchy shared by all pipeline stages."""


class BackdoorToolkitError(Exception):
    """Base class for every error raised by this package."""


# -- package scanning -------------------------------------------------------

class NotAnElf(BackdoorToolkitError):
    pass


class MissingRodata(BackdoorToolkitError):
    pass


class NotAnApk(BackdoorToolkitError):
    pass


class CorruptArchive(BackdoorToolkitError):
    pass


class UnreadableLabelFile(BackdoorToolkitError):
    pass


# -- model formats / analysis ----------------------------------------------

class UnsupportedFormat(BackdoorToolkitError):
    pass


class UnsupportedOperator(BackdoorToolkitError):
    def __init__(self, names):
        self.names = sorted(set(names))
        super().__init__("unsupported operator(s): " + ", ".join(self.names))


class ShapeMismatch(BackdoorToolkitError):
    pass


class SignatureMismatch(BackdoorToolkitError):
    pass


class ExportUnsupported(BackdoorToolkitError):
    def __init__(self, operator):
        self.operator = operator
        super().__init__(f"cannot export operator {operator!r}")


class UnfilledParameters(BackdoorToolkitError):
    pass


# -- generator / attack -----------------------------------------------------

class EmptySecret(BackdoorToolkitError):
    pass


class DivergedTraining(BackdoorToolkitError):
    pass


class PatchTooLarge(BackdoorToolkitError):
    pass


class InsufficientEligibleSamples(BackdoorToolkitError):
    pass


class ProvenanceMismatch(UserWarning):
    """Warning category: generator or secret differ from training provenance."""


# -- evaluation --------------------------------------------------------------

class EmptyTestset(BackdoorToolkitError):
    pass


class EmptyPool(BackdoorToolkitError):
    pass


class WindowTooLarge(BackdoorToolkitError):
    pass


class ImageTooSmallForScales(BackdoorToolkitError):
    pass


class InconsistentSchema(BackdoorToolkitError):
    pass


# -- orchestration -----------------------------------------------------------

class ConfigInvalid(BackdoorToolkitError):
    def __init__(self, messages):
        if isinstance(messages, str):
            messages = [messages]
        self.messages = list(messages)
        super().__init__("; ".join(self.messages))


class MissingUpstreamArtifact(BackdoorToolkitError):
    pass
