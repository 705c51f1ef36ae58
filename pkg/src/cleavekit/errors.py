"""Exception hierarchy shared by all cleavekit modules.

Validation problems derive from ``ValidationError`` (CLI exit code 1),
transport and file problems from ``ProtocolError`` (CLI exit code 2).
"""


class CleavekitError(Exception):
    pass


class ValidationError(CleavekitError, ValueError):
    pass


class ProtocolError(CleavekitError):
    pass


class TooFewSamples(ValidationError):
    pass


class NumericalUnderflow(CleavekitError, ArithmeticError):
    pass


class NoClients(ValidationError):
    pass


class IncompleteModes(ValidationError):
    pass


class InvalidConfig(ValidationError):
    pass


class MissingSubLabel(ValidationError):
    pass


class DegenerateCohort(ValidationError):
    pass


class ZeroArea(ValidationError):
    pass


class AnchorMissing(ValidationError):
    pass


class NoPnfFound(ValidationError):
    pass


class ConnectionLost(ProtocolError, ConnectionError):
    pass


class VersionMismatch(ProtocolError):
    pass
