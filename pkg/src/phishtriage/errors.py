"""Exception types raised across the toolkit."""


class PhishTriageError(Exception):
    """Base class for all toolkit errors."""


class EmptyInput(PhishTriageError, ValueError):
    pass


class UnreadableFile(PhishTriageError, OSError):
    pass


class UnknownColumn(PhishTriageError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class EmptyEmail(PhishTriageError, ValueError):
    pass


class VerdictError(PhishTriageError, ValueError):
    """A model response could not be turned into a verdict."""


class MalformedPayload(VerdictError):
    pass


class SchemaViolation(VerdictError):
    pass


class UnknownRisk(VerdictError):
    pass


class MissingLabel(PhishTriageError, ValueError):
    pass


class EmptyCounts(PhishTriageError, ValueError):
    pass


class ClientError(PhishTriageError):
    """Failure talking to a chat-completions endpoint."""


class TransportError(ClientError):
    pass


class AuthError(ClientError):
    pass


class RateLimited(ClientError):
    pass


class Timeout(ClientError):
    pass


class ProviderUnavailable(PhishTriageError):
    pass


class QuotaExceeded(PhishTriageError):
    pass
