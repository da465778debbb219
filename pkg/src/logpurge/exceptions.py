"""Exception hierarchy. Every error carries the pipeline phase it came from."""


class LogPurgeError(Exception):
    phase = "core"


# core / ingest
class EmptyDataset(LogPurgeError):
    pass


class NonFiniteTimestamp(LogPurgeError):
    pass


class NonMonotoneTimestamps(LogPurgeError):
    pass


class UnparseableTimestamp(LogPurgeError):
    phase = "parse"


class EmptyMessage(LogPurgeError):
    phase = "parse"


class UnsortedInput(LogPurgeError):
    phase = "window"


class InvalidConfig(LogPurgeError, ValueError):
    phase = "config"


# embed
class ProviderUnreachable(LogPurgeError):
    phase = "embed"


class DimensionMismatch(LogPurgeError):
    phase = "embed"


class PartialFailure(LogPurgeError):
    phase = "embed"

    def __init__(self, message, failed_indices):
        super().__init__(message)
        self.failed_indices = list(failed_indices)


# regions / numerics
class TooFewPoints(LogPurgeError, ValueError):
    phase = "regions"


class RegionTooSmall(LogPurgeError, ValueError):
    phase = "regions"


class ClusterTooSmall(LogPurgeError, ValueError):
    phase = "pluto"


class InfiniteDominance(LogPurgeError, ValueError):
    phase = "pluto"


class AllInfinite(LogPurgeError, ValueError):
    phase = "pluto"


class DegenerateRow(LogPurgeError, ValueError):
    phase = "projection"


# evaluator
class ContextBudgetExceeded(LogPurgeError):
    phase = "evaluate"


class BackendUnreachable(LogPurgeError):
    phase = "evaluate"


class UnparseableResponse(LogPurgeError):
    phase = "evaluate"


# detector / metrics
class EmptyTrainingSet(LogPurgeError, ValueError):
    phase = "detect"


class NoLabels(LogPurgeError, ValueError):
    phase = "eval"


class EmptySelection(LogPurgeError, ValueError):
    phase = "eval"


class NoNormals(LogPurgeError, ValueError):
    phase = "eval"


# engine
class NoLowRegions(LogPurgeError):
    phase = "stage1"


class PartitionMismatch(LogPurgeError, ValueError):
    phase = "stage1"
