class FragstoreError(Exception):
    pass


class QuorumUnreachable(FragstoreError):
    """The fault plan leaves fewer live servers than the quorum size."""


class InvariantViolation(FragstoreError):
    pass


class BadParams(FragstoreError, ValueError):
    pass


class BadConfig(FragstoreError, ValueError):
    pass


class UnknownFile(FragstoreError, KeyError):
    pass


class FileDeleted(FragstoreError):
    pass


class DuplicatePath(FragstoreError):
    pass


class BrokenChain(FragstoreError):
    """A followed link reached a block that was never written."""


class HistoryIncomplete(FragstoreError):
    pass


class ScaleExceeded(FragstoreError):
    pass
