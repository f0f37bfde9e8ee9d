"""Simulated sensor publishers."""
