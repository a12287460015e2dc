"""Exception hierarchy shared by all domlab modules."""


class DomlabError(Exception):
    """Base class for all errors raised by domlab."""


class ConfigurationError(DomlabError):
    """Invalid configuration: unknown map name, bad knob value, malformed config file."""


class NumericalError(DomlabError):
    """A numerical procedure failed: Newton divergence, overflow, degenerate frames."""


class ResolutionError(NumericalError):
    """A quantity exists but cannot be resolved at the requested numerical resolution,
    e.g. a singular-value gap too small to separate the splitting."""


class ResourceError(ConfigurationError):
    """A requested resolution would exceed the configured memory/cell budget."""
