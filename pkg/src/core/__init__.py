"""Core business logic modules."""
