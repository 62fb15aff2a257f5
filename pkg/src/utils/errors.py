"""Exception hierarchy shared by every stage.

Each class carries the process exit code the CLI reports for it.
"""


class AttributionError(Exception):
    """Base error for the toolkit."""

    exit_code = 4


class ConfigurationError(AttributionError):
    """Invalid or inconsistent configuration."""

    exit_code = 2


class DependencyError(AttributionError):
    """A stage was run before the stages it depends on."""

    exit_code = 3


class ContractError(AttributionError):
    """A caller violated an operation's precondition (shapes, labels, ranges)."""

    exit_code = 4


class PersistenceError(AttributionError):
    """Reading or writing an artifact failed."""

    exit_code = 4


class RuntimeFailure(AttributionError):
    """A run finished in a state that breaks a documented invariant."""

    exit_code = 4
