"""Exception and warning types raised across the package."""


class WqteError(Exception):
    """Base class for all errors raised by ``wqte``."""

    code = "wqte-error"


class DataValidationError(WqteError):
    """A dataset violates the observed-data invariants."""

    code = "invalid-data"

    def __init__(self, violations):
        self.violations = list(violations)
        head = "; ".join(str(v) for v in self.violations[:5])
        more = "" if len(self.violations) <= 5 else f" (+{len(self.violations) - 5} more)"
        super().__init__(f"dataset failed validation: {head}{more}")


class GridError(WqteError):
    code = "degenerate-grid"


class ConfigurationError(WqteError):
    code = "configuration"


class ParameterError(WqteError):
    code = "parameter"


class SingularDesignError(WqteError):
    code = "singular-design"


class SeparationError(WqteError):
    code = "separation"

    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column


class NothingToFitError(WqteError):
    code = "nothing-to-fit"


class PositivityError(WqteError):
    code = "positivity"


class EmptyArmError(WqteError):
    code = "empty-arm"


class SingularityError(WqteError):
    code = "singular-sigma"


class DegenerateResampleError(WqteError):
    code = "degenerate-resample"


class DegenerateBandError(WqteError):
    code = "degenerate-band"


class DomainError(WqteError):
    code = "domain"


class IngestError(WqteError):
    """Malformed or inconsistent CSV input."""

    code = "ingest"

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class MappingError(IngestError):
    code = "mapping"


class WqteWarning(UserWarning):
    pass


class UnstableDensityWarning(WqteWarning):
    pass


class StratumShortfallWarning(WqteWarning):
    pass


class FewReplicatesWarning(WqteWarning):
    pass
