"""Exception hierarchy shared across the package.

Grouped so the CLI can map failures onto exit codes: configuration
problems (exit 1), data/file problems (exit 2), and non-finite losses
during training (exit 3).
"""

from __future__ import annotations


class RefineKitError(Exception):
    """Base class for all package errors."""


class ConfigError(RefineKitError):
    """Invalid configuration value or malformed run-config file."""


# --- data / file errors -------------------------------------------------


class StoreError(RefineKitError):
    """Base class for embedding-store failures."""


class BadMagicError(StoreError):
    def __init__(self, path: str, found: bytes):
        super().__init__(f"{path}: bad magic at offset 0: {found!r}")
        self.found = found


class TruncatedFileError(StoreError):
    def __init__(self, path: str, offset: int, detail: str = ""):
        msg = f"{path}: truncated at byte offset {offset}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
        self.offset = offset


class NonFiniteValueError(StoreError):
    def __init__(self, where: str, row: int):
        super().__init__(f"{where}: non-finite value in row {row}")
        self.row = row


class DuplicateIdError(StoreError):
    def __init__(self, where: str, row: int, id_: str):
        super().__init__(f"{where}: duplicate id {id_!r} at row {row}")
        self.row = row
        self.id = id_


class ChecksumMismatchError(StoreError):
    def __init__(self, path: str, expected: int, actual: int):
        super().__init__(
            f"{path}: data checksum mismatch (trailer {expected:#010x}, computed {actual:#010x})"
        )


class StoreFormatError(StoreError):
    """Structurally invalid file contents (bad dtype code, bad trailer...)."""


class VersionMismatchError(StoreError):
    def __init__(self, path: str, expected: int, found: int):
        super().__init__(f"{path}: unsupported format version {found} (expected {expected})")
        self.found = found


class UnmatchedIdError(StoreError):
    def __init__(self, detail: str, ids: list[str]):
        shown = ", ".join(repr(i) for i in ids[:8])
        if len(ids) > 8:
            shown += f", ... ({len(ids)} total)"
        super().__init__(f"{detail}: {shown}")
        self.ids = ids


class DimensionMismatchError(RefineKitError):
    """Feature dimensions disagree between tables, heads, or configs."""


class ShapeMismatchError(RefineKitError):
    """Array arguments have incompatible shapes."""


class LabelMismatchError(RefineKitError):
    """A ground-truth label does not name any known class."""


class EmptySetError(RefineKitError):
    """A metric was asked to reduce over zero samples."""


class InsufficientDataError(RefineKitError):
    """Fewer samples than the operation requires."""


# --- numerical errors ---------------------------------------------------


class ZeroNormError(RefineKitError):
    def __init__(self, row: int, norm: float):
        super().__init__(f"row {row} has L2 norm {norm:.3e} (< 1e-12), cannot normalize")
        self.row = row


class MissingMomentsError(ConfigError):
    """Moment-matched prior requested without mean/std vectors."""


class NegativeBetaError(ConfigError):
    """Scaled-Gaussian prior requires beta >= 0."""


class NonFiniteLossError(RefineKitError):
    def __init__(self, step: int, detail: str = ""):
        msg = f"non-finite loss at optimization step {step}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
        self.step = step


class ConvergenceFailureError(RefineKitError):
    def __init__(self, component: int, iterations: int, residual: float):
        super().__init__(
            f"power iteration for component {component} did not converge "
            f"after {iterations} iterations (last step {residual:.3e})"
        )
        self.component = component
