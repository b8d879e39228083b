"""
Enums for domain values to ensure type safety and stable JSON serialization
"""
from enum import Enum


class ColumnKind(str, Enum):
    """Measurement type of a dataset column"""
    CONTINUOUS = "continuous"
    CATEGORICAL = "categorical"


class EvidenceCategory(str, Enum):
    """A-priori external evidence that a covariate modifies the treatment effect"""
    NONE = "none"
    LOW = "low"
    MODERATE = "moderate"
    HIGH = "high"


class ExpectedDirection(str, Enum):
    """Pre-declared direction of effect modification"""
    POSITIVE = "positive"
    NEGATIVE = "negative"
    UNSPECIFIED = "unspecified"


class VerbalCategory(str, Enum):
    """Verbal summary of the evidence against homogeneity"""
    LOW = "low"
    MODERATE = "moderate"
    NOTEWORTHY = "noteworthy"
    STRONG = "strong"
    VERY_STRONG = "very strong"

    @property
    def rank(self) -> int:
        return list(VerbalCategory).index(self)


class DirectionMatch(str, Enum):
    """Agreement between the observed and the pre-declared direction"""
    MATCH = "match"
    MISMATCH = "mismatch"
    UNSPECIFIED = "unspecified"


class CredibilityNote(str, Enum):
    """Credibility of a data-driven finding in light of a-priori evidence"""
    HIGH_CREDIBILITY = "high credibility"
    NOTABLE = "notable"
    LOW_CREDIBILITY = "low credibility"
    UNSUPPORTED = "unsupported"


class AssociationMethod(str, Enum):
    """Pairwise association measure used for a covariate pair"""
    PEARSON = "pearson"
    ETA = "eta"
    CRAMERS_V = "cramers_v"


class LearnerKind(str, Enum):
    """Base learner family"""
    LASSO = "lasso"
    TREE = "tree"
    FOREST = "forest"
    BOOSTING = "boosting"
    STACKED = "stacked"


class TaskKind(str, Enum):
    """Supervised learning task"""
    REGRESSION = "regression"
    PROBABILITY = "probability"


class PropensityKind(str, Enum):
    """How the propensity score enters the pseudo-outcome"""
    KNOWN = "known"
    ESTIMATED = "estimated"


class FigureKind(str, Enum):
    """Rendering template of a figure"""
    BARS = "bars"
    INTERVALS = "intervals"
    CURVES = "curves"
    HEATMAP = "heatmap"
    DENDROGRAM = "dendrogram"
    BOXES = "boxes"
