from abc import ABC, abstractmethod
from typing import Any, Union

import numpy as np

from app.models.dataset import FeatureMatrix
from app.models.enums import LearnerKind, TaskKind

# probability predictions are kept off 0 and 1
PROBABILITY_BOUNDS = (0.01, 0.99)

Features = Union[FeatureMatrix, np.ndarray]


def as_features(features: Features) -> FeatureMatrix:
    if isinstance(features, FeatureMatrix):
        return features
    return FeatureMatrix.from_array(features)


def check_finite(X: np.ndarray, y: np.ndarray) -> None:
    if not np.all(np.isfinite(X)):
        raise ValueError("features contain missing or non-finite values")
    if not np.all(np.isfinite(y)):
        raise ValueError("response contains missing or non-finite values")


class Model(ABC):
    """Fitted learner; predictions are a pure function of the features"""
    kind: LearnerKind

    def __init__(self, task: TaskKind = TaskKind.REGRESSION):
        self.task = task

    @abstractmethod
    def _predict(self, X: FeatureMatrix) -> np.ndarray:
        ...

    def predict(self, features: Features) -> np.ndarray:
        raw = np.asarray(self._predict(as_features(features)), dtype=float)
        if self.task == TaskKind.PROBABILITY:
            return np.clip(raw, *PROBABILITY_BOUNDS)
        return raw

    def params(self) -> dict[str, Any]:
        return {}

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind.value, "task": self.task.value, **self.params()}
