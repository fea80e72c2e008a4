"""Exception hierarchy shared by every module."""

from __future__ import annotations


class AutolevelsError(Exception):
    """Base class for all package errors."""


class ConfigError(AutolevelsError):
    """Bad configuration: unknown parameter, wrong units, missing channel."""


class LoadError(ConfigError):
    """A model or scenario document failed validation."""

    def __init__(self, message: str, path: str | None = None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class UsageError(AutolevelsError):
    """An operation was called outside its precondition."""


class SimulationFault(AutolevelsError):
    """A non-finite signal (or similar hard fault) appeared during a run."""

    def __init__(self, message: str, block: str | None = None,
                 node: str | None = None, tick: int | None = None):
        self.block = block
        self.node = node
        self.tick = tick
        where = []
        if tick is not None:
            where.append(f"tick {tick}")
        if node:
            where.append(f"node {node}")
        if block:
            where.append(f"block {block}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)
