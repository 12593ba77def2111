"""Exception types shared across the package."""

from __future__ import annotations


class ValidationError(ValueError):
    """A domain object or argument violates its contract."""


class SceneFormatError(ValidationError):
    """A scene (or other structured) file failed to parse or validate.

    ``path`` locates the offending field, e.g. ``instances[2].size[0]``.
    """

    def __init__(self, message: str, path: str = "") -> None:
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class MaskedRowError(ValueError):
    """A softmax row (or assembled mask row) has no unmasked entry."""

    def __init__(self, row: int, message: str | None = None) -> None:
        self.row = row
        super().__init__(message or f"row {row} is fully masked; softmax undefined")
