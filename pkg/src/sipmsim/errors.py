class SipmSimError(Exception):
    """Base class for analysis errors raised by this package."""


class ConfigError(SipmSimError, ValueError):
    """Invalid experiment configuration; ``field`` names the offending key."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class DegenerateSpectrum(SipmSimError):
    """Fewer than two photon peaks: gamma and visibility are undefined."""


class UndefinedR(SipmSimError):
    """Noise reduction factor with a zero shot-noise denominator."""


class InvalidParameters(SipmSimError, ValueError):
    """Model parameters put <k> below the dark-count floor."""


class FitFailed(SipmSimError):
    """Fit could not be carried out or did not converge; ``best`` holds the best attempt."""

    def __init__(self, message: str, best=None):
        self.best = best
        super().__init__(message)
