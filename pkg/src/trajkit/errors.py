class TrajkitError(Exception):
    pass


class InvalidParameter(TrajkitError, ValueError):
    pass


class DimensionMismatch(TrajkitError, ValueError):
    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class LengthMismatch(DimensionMismatch):
    pass


class ShapeMismatch(DimensionMismatch):
    pass


class UnknownView(TrajkitError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "unknown view"


class InvalidIndexMap(TrajkitError, ValueError):
    pass


class RemoteError(TrajkitError):
    def __init__(self, message, attempts=0):
        super().__init__(f"{message} (after {attempts} attempts)")
        self.attempts = attempts


class NoObjectsFound(TrajkitError):
    pass
