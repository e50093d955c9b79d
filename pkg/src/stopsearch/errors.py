"""Error types shared across the package."""


class ParameterError(ValueError):
    """A spec or config field is out of its documented range."""


class ConstructionError(ValueError):
    """An instance cannot be built from the given fields."""


class UnsupportedOperationError(RuntimeError):
    """The operation is not defined for this input kind."""


class EnumerationSizeError(ValueError):
    """Exhaustive search would exceed the enumeration guard."""


class StreamCollisionError(RuntimeError):
    """A fresh evaluation batch reused an optimization stream."""


class DegenerateFitError(RuntimeError):
    """A probe or fit has no informative points to work with."""


class ConfigError(ValueError):
    """One or more config lines failed to parse or validate."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))
