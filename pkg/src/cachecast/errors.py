"""Exception hierarchy shared by every cachecast module."""


class CachecastError(Exception):
    """Base class for all errors raised by cachecast."""


class MalformedLine(CachecastError):
    def __init__(self, line_no: int, reason: str = ""):
        self.line_no = line_no
        self.reason = reason
        msg = f"malformed trace line {line_no}"
        if reason:
            msg += f": {reason}"
        super().__init__(msg)


class EmptyTrace(CachecastError):
    def __init__(self, msg: str = "trace contains no records"):
        super().__init__(msg)


class HorizonTooLarge(CachecastError):
    pass


class EmptySplit(CachecastError):
    pass


class ShapeMismatch(CachecastError):
    pass


class LengthMismatch(CachecastError):
    pass


class EmptyVector(CachecastError):
    pass


class MissingForwardTrace(CachecastError):
    pass


class InvalidSpec(CachecastError):
    pass


class HeuristicModelNotTrainable(CachecastError):
    def __init__(self, kind: str = ""):
        super().__init__(f"heuristic models are not trainable ({kind})" if kind
                         else "heuristic models are not trainable")


class NonFiniteLoss(CachecastError):
    def __init__(self, epoch: int, detail: str = ""):
        self.epoch = epoch
        super().__init__(f"non-finite loss at epoch {epoch}" + (f": {detail}" if detail else ""))


class CorruptCheckpoint(CachecastError):
    pass


class VersionMismatch(CachecastError):
    pass


class ZeroCapacity(CachecastError):
    def __init__(self):
        super().__init__("cache capacity must be at least 1 block")


class MissingPrediction(CachecastError):
    def __init__(self, block_id: int, window: int):
        self.block_id = block_id
        self.window = window
        super().__init__(f"no prediction for block {block_id} in window {window}")


class ConfigError(CachecastError):
    pass


class StageError(CachecastError):
    """A module error re-raised with the pipeline stage it came from."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
