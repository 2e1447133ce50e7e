"""Exception hierarchy shared by every windsr module."""


class WindSRError(Exception):
    """Base class for all package errors."""


class ConfigError(WindSRError, ValueError):
    pass


class ShapeError(WindSRError, ValueError):
    pass


class DomainError(WindSRError, ValueError):
    pass


class DegenerateRangeError(DomainError):
    """Raised when a modality has max == min and cannot be min-max scaled."""


class IngestionError(WindSRError, KeyError):
    def __str__(self):
        # KeyError repr-quotes its message; keep it readable.
        return str(self.args[0]) if self.args else ""


class RangeError(WindSRError, IndexError):
    pass


class SizeError(WindSRError, ValueError):
    pass


class TrainingDivergenceError(WindSRError, RuntimeError):
    pass


class DecodeError(WindSRError, ValueError):
    pass


class PlanError(WindSRError, ValueError):
    pass
