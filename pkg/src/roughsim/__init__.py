"""Interface roughening toolkit: network evolution, ground states, classics."""

__version__ = "0.1.0"
