"""Exception hierarchy.

Every error raised on bad input derives from :class:`DataError` so the CLI can
map it to exit code 2; anything else is treated as internal.
"""


class VSCError(Exception):
    """Base class for all package errors."""


class DataError(VSCError):
    """Input data or configuration is invalid."""


# corpus
class MalformedDocument(DataError):
    pass


class MissingExpansion(DataError):
    pass


class MissingTitle(DataError):
    pass


class EmptyCorpus(DataError):
    pass


class InvalidConfig(DataError):
    pass


# embed / index
class BadHeader(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class DuplicateKey(DataError):
    pass


class MissingEmbedding(DataError):
    def __init__(self, key: str):
        super().__init__(f"no embedding for string {key!r}")
        self.key = key


class MissingTitleEmbedding(DataError):
    def __init__(self, oid: str):
        super().__init__(f"title of value set {oid!r} has no embedding")
        self.oid = oid


# pool / split
class EmptyRetrieval(DataError):
    pass


class EmptyPools(DataError):
    pass


class InvalidRatios(DataError):
    pass


# model
class InvalidDims(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class EmptySplit(DataError):
    pass


class NonFiniteLoss(VSCError):
    pass


# eval
class DegenerateLabels(DataError):
    pass


class EmptyInput(DataError):
    pass


class MissingManifestRow(DataError):
    pass


# theory
class InfeasibleTarget(DataError):
    pass


# persistence
class IntegrityError(DataError):
    pass


class VersionError(DataError):
    def __init__(self, found: int, expected: int):
        super().__init__(f"artifact format version {found} is not supported (expected {expected})")
        self.found = found
        self.expected = expected


class KindMismatch(DataError):
    pass


class ConfigErrors(DataError):
    """Aggregates every problem found while validating a config file."""

    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = list(errors)
