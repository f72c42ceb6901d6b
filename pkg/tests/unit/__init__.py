"""Unit tests for disn."""
