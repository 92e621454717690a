"""User-, task- and UUT-centered actor-critic agents for Metaverse edge computing."""

__version__ = "0.1.0"
