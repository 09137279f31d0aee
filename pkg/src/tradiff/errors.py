"""Exception hierarchy shared by all tradiff modules."""


class TradiffError(Exception):
    """Base class for all library errors."""


class DomainError(TradiffError, ValueError):
    """An operation was called with values outside its mathematical domain."""


class ConfigError(TradiffError, ValueError):
    """Invalid or incomplete configuration (schemas, run configs, column maps)."""


class FormatError(TradiffError):
    """A dump file does not conform to the interchange format."""


class CorruptDumpError(FormatError):
    """A dump file has the right magic but inconsistent or truncated content."""


class MappingError(TradiffError):
    """Word/subword reconciliation failed for one or more words."""


class ContractError(TradiffError):
    """Two pipeline artifacts that must agree (lengths, columns) do not."""


class NumericalError(TradiffError):
    """A model fit failed numerically (rank deficiency, non-convergence)."""


class FoldError(TradiffError):
    """Cross-validation fold structure is unusable (empty/overlapping folds)."""
