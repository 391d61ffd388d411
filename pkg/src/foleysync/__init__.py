"""foleysync: onset-driven sound effect synthesis for silent video."""

__version__ = "0.1.0"
