"""Tests for disn."""
