"""Exception hierarchy shared across the package.

The CLI maps these onto distinct exit codes: configuration problems,
I/O problems, and data/shape problems each fail differently.
"""


class InputError(ValueError):
    """Invalid argument, shape, or value passed to a library operation."""


class ConfigError(InputError):
    """Invalid or inconsistent run/sampling/search configuration."""


class DataError(InputError):
    """Dataset content problem: unparseable file, wrong shape, missing source."""


class ConstantStreamError(InputError):
    """Stream carries a single repeated value and is unsuitable for HSIC."""
