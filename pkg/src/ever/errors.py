"""Exception hierarchy shared across the package."""


class EverError(Exception):
    """Base class for all package errors."""


class ConfigError(EverError):
    """Invalid configuration: bad mode/task combination, missing paths, bad flags."""


class ContractViolation(EverError):
    """A caller broke an operation precondition (e.g. empty check list)."""


class RegistryError(EverError):
    """Unknown prompt template id."""


class RenderError(EverError):
    """A template placeholder was left unbound."""

    def __init__(self, template_id: str, placeholder: str):
        super().__init__(f"template {template_id!r} is missing variable {placeholder!r}")
        self.template_id = template_id
        self.placeholder = placeholder


class BackendError(EverError):
    """A backend call failed for good (after any retries)."""


class FixtureMissError(BackendError):
    """A scripted backend had no fixture for the request; a test-configuration bug."""


class RetrievalError(EverError):
    """Evidence acquisition failed for good."""


class QuotaError(RetrievalError):
    """The search provider rejected the request for quota/authorization reasons."""


class TraceError(EverError):
    """A trace file is malformed, has a wrong schema version, or lacks a manifest."""
