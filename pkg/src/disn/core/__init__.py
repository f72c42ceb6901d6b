"""Core numerical logic for disn."""
