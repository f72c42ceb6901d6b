"""CLI tests for disn."""
