"""Exception hierarchy for the csegg harness.

Every error raised by the library derives from :class:`CseggError` so the
CLI can map failures to stable machine-readable codes (the exception class
name is the code).
"""

from __future__ import annotations


class CseggError(Exception):
    """Base class for all harness errors."""

    @property
    def code(self) -> str:
        return type(self).__name__


# --- data model / ingest ---------------------------------------------------

class GraphUnrepairable(CseggError):
    """A scene graph has no valid objects left after repair."""


class FormatError(CseggError):
    """A dataset or manifest file is malformed."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f" [{path}" + (f":{line}" if line is not None else "") + "]"
        super().__init__(message + where)


class VocabError(CseggError):
    """A class name is not present in the active vocabulary."""


class EmptyDataset(CseggError):
    """The dataset contains no scene graphs."""


# --- scenario construction ---------------------------------------------------

class InsufficientClasses(CseggError):
    """The vocabulary is too small for the requested scenario."""


class EmptyGeneralizationSet(CseggError):
    """No images qualify for the standalone generalization test set."""


# --- sampling ----------------------------------------------------------------

class EmptyUniverse(CseggError):
    """The triplet universe holds no labels."""


class EmptyBuffer(CseggError):
    """A replay buffer operation was applied to an empty buffer."""


# --- metrics -----------------------------------------------------------------

class EmptyTestSet(CseggError):
    """A recall metric was requested on an empty test set."""


class MissingCell(CseggError):
    """A recall-matrix cell required by a metric is not populated."""


class MissingBaseline(CseggError):
    """FWT was requested without per-task scratch baselines."""


class NoLocalizedBoxes(CseggError):
    """No ground-truth box of the image was localized (image skipped)."""


# --- providers / generation ----------------------------------------------------

class ProviderUnavailable(CseggError):
    """An embedding or generation provider could not be reached.

    Carries retry metadata so callers can report what was attempted.
    """

    def __init__(self, message: str, attempts: int = 1, backoff_s: tuple[float, ...] = ()):
        self.attempts = attempts
        self.backoff_s = backoff_s
        super().__init__(f"{message} (attempts={attempts}, backoff={list(backoff_s)})")


class DimensionMismatch(CseggError):
    """An embedding provider returned vectors of inconsistent dimension."""


class GeneratorUnavailable(ProviderUnavailable):
    """The image generation provider could not be reached."""


class PartialGeneration(CseggError):
    """The generator produced fewer images than requested."""

    def __init__(self, message: str, produced: list):
        self.produced = produced
        super().__init__(message)


class NoEligibleClusters(CseggError):
    """No context cluster passed the size filter."""


class PredictorUnavailable(CseggError):
    """A predictor checkpoint could not be resolved or invoked."""


# --- baselines ------------------------------------------------------------------

class LengthMismatch(CseggError):
    """Parameter-vector operands have different lengths."""


class NoFreeParameters(CseggError):
    """A prune step was requested but every parameter is already owned."""


# --- runner / cli -----------------------------------------------------------------

class PredictorFailure(CseggError):
    """An external predictor invocation failed; the run is checkpointed."""


class UnknownPredictor(CseggError):
    """The requested built-in predictor name does not exist."""


class ConfigError(CseggError):
    """A run configuration is invalid; message lists the offending fields."""
