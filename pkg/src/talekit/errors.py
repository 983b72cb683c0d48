"""Exception hierarchy shared by all talekit modules.

Every error carries a stable ``code`` string (its class name) which the REST
layer returns verbatim in the ``{"error": {"code": ...}}`` envelope, so
clients can match on codes instead of messages.
"""

from __future__ import annotations


class TaleKitError(Exception):
    """Base class for all talekit errors."""

    #: HTTP status the API layer maps this error to.
    http_status = 400

    @property
    def code(self) -> str:
        return type(self).__name__


# --- catalog ---------------------------------------------------------------

class UnknownNode(TaleKitError):
    http_status = 404


class UnknownParent(TaleKitError):
    http_status = 404


class DuplicateName(TaleKitError):
    http_status = 409


class InvalidName(TaleKitError):
    pass


class CycleDetected(TaleKitError):
    pass


class KindMismatch(TaleKitError):
    pass


class NotAContainer(TaleKitError):
    pass


# --- providers --------------------------------------------------------------

class UnknownIdentifier(TaleKitError):
    http_status = 404


class ProviderUnavailable(TaleKitError):
    http_status = 503


class DuplicateProvider(TaleKitError):
    http_status = 409


class TransferFailed(TaleKitError):
    http_status = 502


class ChecksumMismatch(TaleKitError):
    http_status = 502


class UnsupportedProtocol(TaleKitError):
    pass


class CyclicDataset(TaleKitError):
    pass


# --- dms --------------------------------------------------------------------

class NoSuchPath(TaleKitError):
    http_status = 404


class StaleHandle(TaleKitError):
    pass


class IoError(TaleKitError):
    http_status = 500


class EvictionImpossible(TaleKitError):
    http_status = 507


# --- tale -------------------------------------------------------------------

class InvalidUrl(TaleKitError):
    pass


class EmptyCommit(TaleKitError):
    pass


class UnknownImage(TaleKitError):
    http_status = 404


class UnknownRecipe(TaleKitError):
    http_status = 404


class UnknownFolder(TaleKitError):
    http_status = 404


class UnknownTale(TaleKitError):
    http_status = 404


class ValidationFailed(TaleKitError):
    pass


class SchemaInvalid(TaleKitError):
    pass


# --- orchestrator -----------------------------------------------------------

class UnknownInstance(TaleKitError):
    http_status = 404


class InvalidState(TaleKitError):
    http_status = 409


class ImageNotReady(TaleKitError):
    http_status = 409


class NoRoute(TaleKitError):
    http_status = 404


class StepFailed(TaleKitError):
    http_status = 500

    def __init__(self, step: int, message: str = ""):
        super().__init__(message or f"launch step {step} failed")
        self.step = step


# --- auth -------------------------------------------------------------------

class BadCredentials(TaleKitError):
    http_status = 401


class UnknownIssuer(TaleKitError):
    http_status = 401


class Unauthorized(TaleKitError):
    http_status = 401


class AccessDenied(TaleKitError):
    """Raised by the engine facade when ``authorize`` returns a deny."""

    http_status = 403

    def __init__(self, reason: str, message: str = ""):
        super().__init__(message or f"access denied: {reason}")
        self.reason = reason


class ScopeEscalation(TaleKitError):
    http_status = 403


class InvalidToken(TaleKitError):
    http_status = 401


class UnknownToken(TaleKitError):
    http_status = 401


# --- api / jobs / storage ----------------------------------------------------

class JobTerminal(TaleKitError):
    http_status = 409


class UnknownJob(TaleKitError):
    http_status = 404


class PortInUse(TaleKitError):
    pass


class ConfigInvalid(TaleKitError):
    pass


class JournalCorrupt(TaleKitError):
    http_status = 500
