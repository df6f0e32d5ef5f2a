"""Grid-world simulator and two-agent dialogue protocol for assisted object navigation."""

__version__ = "0.1.0"
