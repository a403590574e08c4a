"""Exception hierarchy. Every error carries a stable ``code`` string."""

from __future__ import annotations


class P4nfvError(Exception):
    def __init__(self, code: str, message: str = "", **detail):
        super().__init__(f"{code}: {message}" if message else code)
        self.code = code
        self.message = message
        self.detail = detail


class DefinitionError(P4nfvError):
    """Raised while parsing a function-definition document."""


class RepoError(P4nfvError):
    pass


class ComposeError(P4nfvError):
    pass


class SwitchError(P4nfvError):
    pass


class StoreError(P4nfvError):
    pass


class OrchestratorError(P4nfvError):
    pass


class ScenarioError(P4nfvError):
    def __init__(self, code: str, message: str = "", line: int | None = None, **detail):
        super().__init__(code, message, line=line, **detail)
        self.line = line
