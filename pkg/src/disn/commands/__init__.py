"""CLI commands for disn."""
