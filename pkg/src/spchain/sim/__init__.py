"""Discrete-event simulation of a sharded deployment."""
from .world import World, run

__all__ = ["World", "run"]
