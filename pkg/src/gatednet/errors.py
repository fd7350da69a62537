"""Error types shared across file parsing and model integrity checks."""


class ParseError(ValueError):
    """A file is malformed. Carries the byte offset where parsing failed."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class IntegrityError(ValueError):
    """A file parsed cleanly but its contents are inconsistent."""
