"""Exception hierarchy.

Every error carries an ``exit_code`` so the command-line front end can map
failures onto its documented exit statuses without a lookup table.
"""


class AudioTrojanError(Exception):
    exit_code = 2


class InvalidInputError(AudioTrojanError, ValueError):
    """An argument violates an operation's precondition."""


class AudioFormatError(AudioTrojanError):
    """A WAV file is malformed or truncated."""


class UnsupportedCodecError(AudioFormatError):
    """A WAV file is well formed but uses an encoding we do not read."""


class ConfigurationError(AudioTrojanError, ValueError):
    """Parameters are individually valid but cannot be used together."""

    exit_code = 1


class CapacityError(AudioTrojanError):
    """Not enough samples to fill a requested poisoned subset."""


class DataError(AudioTrojanError):
    """A manifest, embedding or prediction file has bad contents."""


class IncompletePredictionsError(DataError):
    def __init__(self, missing):
        self.missing = sorted(missing)
        shown = ", ".join(self.missing[:10])
        more = "" if len(self.missing) <= 10 else f" (+{len(self.missing) - 10} more)"
        super().__init__(f"predictions missing for {len(self.missing)} id(s): {shown}{more}")


class InvalidVariantError(AudioTrojanError, ValueError):
    exit_code = 1


class BackendError(AudioTrojanError):
    """An external voice-conversion command failed."""

    exit_code = 3
