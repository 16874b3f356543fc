"""Exception types shared across the package."""


class UnetSharpError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(UnetSharpError, ValueError):
    """Tensor extents do not satisfy an operation's contract."""


class ConfigError(UnetSharpError, ValueError):
    """Invalid architecture/training configuration or config file."""


class DataError(UnetSharpError, ValueError):
    """Dataset ingestion failure (missing files, mismatched pairs)."""


class CheckpointError(UnetSharpError, ValueError):
    """Corrupt or structurally invalid checkpoint file."""
