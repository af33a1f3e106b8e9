"""Exception taxonomy shared across the engine.

CLI exit codes map onto these: ConfigError -> 1, NumericError -> 2,
OSError/IOError -> 3.
"""


class SplatpaintError(Exception):
    """Base class for engine errors."""


class ConfigError(SplatpaintError):
    """Invalid configuration, spec file, or argument combination."""


class DegenerateSceneError(ConfigError):
    """Scene cannot support the requested operation (e.g. no gaussian seen from two views)."""


class NumericError(SplatpaintError):
    """Non-finite or singular quantity encountered during computation."""
