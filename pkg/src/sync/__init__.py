"""Approximate-time synchronization of channel streams."""
