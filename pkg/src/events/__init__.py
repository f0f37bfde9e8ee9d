"""Hot-plug event sources and the event bus."""
