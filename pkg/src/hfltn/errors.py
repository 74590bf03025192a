"""Exception hierarchy shared by all modules."""


class HfltnError(Exception):
    """Base class for every error raised by this package."""


# ring arithmetic / sharing
class MagnitudeExceeded(HfltnError, ValueError):
    pass


class InvalidShareCount(HfltnError, ValueError):
    pass


class IncompleteShareSet(HfltnError, ValueError):
    pass


class DimMismatch(HfltnError, ValueError):
    pass


# peer exchange
class ShareCountMismatch(HfltnError, ValueError):
    pass


# aggregation
class DuplicateContributor(HfltnError, ValueError):
    pass


class EmptyRound(HfltnError, ValueError):
    pass


class NonFiniteInput(HfltnError, ValueError):
    pass


class UntrainedModel(HfltnError, RuntimeError):
    pass


# scheduling
class EmptyRoster(HfltnError, ValueError):
    pass


# trainer
class EmptyDataset(HfltnError, ValueError):
    pass


class DivergedLoss(HfltnError, ArithmeticError):
    pass


class LayoutMismatch(HfltnError, ValueError):
    pass


# datagen
class TooFewRecords(HfltnError, ValueError):
    pass


# wire format
class WireError(HfltnError, ValueError):
    """Any failure decoding an HFLS message."""


class BadMagic(WireError):
    pass


class BadVersion(WireError):
    pass


class CrcMismatch(WireError):
    pass


class Truncated(WireError):
    pass


class ChannelViolation(HfltnError, RuntimeError):
    """A message was sent over a channel kind the topology does not allow."""


class ConfigInvalid(HfltnError, ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key
