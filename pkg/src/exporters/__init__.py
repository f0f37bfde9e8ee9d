"""Export modules for registration artifacts."""
