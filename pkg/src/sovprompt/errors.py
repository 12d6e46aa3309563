"""Exception hierarchy shared across the package."""


class SovError(Exception):
    """Base class for all package errors."""


class ConfigError(SovError):
    """Invalid configuration value (epsilon, thresholds, style, endpoint)."""


class SchemaError(SovError):
    """Input data violates a documented schema or domain invariant."""


class FaceOutOfBounds(SovError):
    pass


class UnknownFaceId(ConfigError):
    """A question refers to a face id that was not rendered."""


class InconsistentInputs(SovError):
    pass


class TransportError(SovError):
    """Any failure talking to the model endpoint."""


class AuthError(TransportError):
    pass


class RateLimited(TransportError):
    pass


class Timeout(TransportError):
    pass


class MalformedResponse(TransportError):
    pass


class UnscriptedRequest(TransportError):
    """The mock endpoint has no canned answer for a request."""
