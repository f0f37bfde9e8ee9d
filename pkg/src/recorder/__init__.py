"""Episode recording, replay and dropout auditing."""
