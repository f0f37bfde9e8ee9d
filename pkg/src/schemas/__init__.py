"""Pydantic schemas for devices, events, masks and status."""
