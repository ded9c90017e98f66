"""Exception types raised across the package."""


class HeliosError(Exception):
    """Base class for all package errors."""


class NonConvergence(HeliosError):
    pass


class DegenerateOrbit(HeliosError):
    pass


class EpisodeFinished(HeliosError):
    pass


class ShapeMismatch(HeliosError, ValueError):
    pass


class VersionMismatch(HeliosError):
    pass


class ParseError(HeliosError, ValueError):
    pass


class LengthMismatch(HeliosError, ValueError):
    pass


class StaleBuffer(HeliosError):
    pass


class EmptyCampaign(HeliosError, ValueError):
    pass


class ConfigError(HeliosError, ValueError):
    pass
