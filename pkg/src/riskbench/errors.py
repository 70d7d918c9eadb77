"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericError -> 4. Plain ValueError signals a programming-contract
violation and is not expected to escape to the CLI.
"""


class ConfigError(ValueError):
    """Bad or inconsistent run configuration."""


class DataError(ValueError):
    """Malformed or contract-violating input data."""


class NumericError(RuntimeError):
    """Training or evaluation produced a non-finite or impossible value."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
