"""Exception types raised across the toolkit.

Every error is a subclass of :class:`ToolkitError`, so callers can catch
one base type at pipeline boundaries while tests assert the precise
condition.
"""


class ToolkitError(Exception):
    """Base class for all toolkit errors."""


# ---------------------------------------------------------------- corpus I/O

class EmptyInput(ToolkitError):
    """Input stream contained no usable records."""


class DuplicateId(ToolkitError):
    """The same utterance identifier appeared more than once."""


class DimensionMismatch(ToolkitError):
    """Vector dimensionalities disagree."""


class NonFiniteValue(ToolkitError):
    """An embedding coordinate is NaN/Inf or not a number at all."""


class BadHeader(ToolkitError):
    """Manifest CSV header does not start with the required columns."""


class BadEnumValue(ToolkitError):
    """A manifest field holds a value outside its allowed set."""


class BadLabel(ToolkitError):
    """Trial label is neither 'target' nor 'nontarget'."""


class NonFiniteScore(ToolkitError):
    """A trial score is not a finite real number."""


class ArityError(ToolkitError):
    """A line has the wrong number of whitespace-separated fields."""


class ZeroVector(ToolkitError):
    """An operation requiring a nonzero vector received a zero vector."""


# ------------------------------------------------------------------- metrics

class UnknownId(ToolkitError):
    """An identifier could not be resolved against the available data."""


class MissingLabel(ToolkitError):
    """A trial that must be labeled carries no label."""


class NoTargets(ToolkitError):
    """A scored trial set contains no target trials."""


class NoNontargets(ToolkitError):
    """A scored trial set contains no nontarget trials."""


class ScoreTrialMismatch(ToolkitError):
    """Scores do not cover the trial list (or cover it ambiguously)."""


# ---------------------------------------------------------------- clustering

class KTooLarge(ToolkitError):
    """Requested more clusters than there are points."""


class ZeroCentroid(ToolkitError):
    """A cluster centroid has zero norm, so cosine is undefined."""


class CoverageMismatch(ToolkitError):
    """Cluster assignments do not cover exactly the embedding set."""


class InvalidSweep(ToolkitError):
    """Sweep grid is empty or not strictly increasing."""


class TooFewPoints(ToolkitError):
    """Elbow detection needs at least three sweep entries."""


class FlatCurve(ToolkitError):
    """All sweep values are equal; no elbow exists."""


class DomainMismatch(ToolkitError):
    """Two labelings are defined over different utterance sets."""


class RefresherCoverageMismatch(ToolkitError):
    """An embedding refresher dropped or added utterance ids."""


# ---------------------------------------------------------- trial generation

class InsufficientSpeakers(ToolkitError):
    """Trial generation needs at least two labeled speakers."""


class EmptyCasePool(ToolkitError):
    """A requested trial case has no candidate pairs at all."""


class ConfigInvalid(ToolkitError):
    """A configuration value violates its documented constraints."""
