"""CLI context object for disn."""

from __future__ import annotations

import json
from pathlib import Path
from typing import TYPE_CHECKING

import click

from disn.config import load_config

if TYPE_CHECKING:
    from disn.config import RunConfig


def path_override(key: str, path: Path | None) -> str | None:
    """Dotted override setting a path key, or None when no path is given."""
    if path is None:
        return None
    return f"{key}={json.dumps(str(path))}"


class Context:
    """CLI context object holding configuration and settings."""

    def __init__(self) -> None:
        self.config: RunConfig | None = None
        self.config_path: Path | None = None
        self.overrides: list[str] = []
        self.verbose: int = 0
        self.quiet: bool = False
        self.no_color: bool = False

    def load_config(
        self,
        config_path: Path | None = None,
        overrides: list[str] | tuple[str, ...] = (),
    ) -> RunConfig:
        """Load configuration, caching the result."""
        if self.config is None:
            self.config = load_config(config_path, overrides)
            self.config_path = config_path
            self.overrides = list(overrides)
        return self.config

    def require_config(self) -> RunConfig:
        """Require that config is loaded, raise error if not.

        Returns:
            RunConfig object.

        Raises:
            ClickException: If config is not loaded.
        """
        if self.config is None:  # pragma: no cover
            raise click.ClickException("Configuration not loaded")
        return self.config

    def command_config(self, *extra: str | None) -> RunConfig:
        """Configuration with command-level overrides applied after the global ones.

        Args:
            extra: Further ``key=value`` overrides; None entries are skipped.

        Returns:
            Validated RunConfig (the cached one when nothing is added).
        """
        config = self.require_config()
        added = [override for override in extra if override is not None]
        if not added:
            return config
        return load_config(self.config_path, [*self.overrides, *added])
