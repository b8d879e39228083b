"""
Tabular data model.

Columns hold float64 arrays: continuous values, or level indices for categorical
columns, with NaN marking a missing cell. All objects are immutable values; every
transformation returns a new object.
"""
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
import pandas as pd

from app.core.errors import DataError
from app.models.enums import ColumnKind

TREATMENT_LEVELS = ("0", "1")


@dataclass(frozen=True)
class Column:
    name: str
    kind: ColumnKind
    values: np.ndarray
    levels: tuple[str, ...] = ()

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 1:
            raise DataError(f"column {self.name} must be one-dimensional")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "levels", tuple(str(level) for level in self.levels))

        observed = values[~np.isnan(values)]
        if self.kind == ColumnKind.CATEGORICAL:
            if observed.size and (
                np.any(observed != np.floor(observed))
                or observed.min() < 0
                or observed.max() >= len(self.levels)
            ):
                raise DataError(f"column {self.name} has level indices outside its levels")
        else:
            if self.levels:
                raise DataError(f"continuous column {self.name} cannot carry levels")
            if np.any(~np.isfinite(observed)):
                raise DataError(f"continuous column {self.name} has non-finite values")

    @classmethod
    def continuous(cls, name: str, values: Iterable[Optional[float]]) -> "Column":
        arr = np.array([np.nan if v is None else v for v in values], dtype=float)
        return cls(name=name, kind=ColumnKind.CONTINUOUS, values=arr)

    @classmethod
    def categorical(
        cls, name: str, labels: Iterable[Optional[str]], levels: Optional[Sequence[str]] = None
    ) -> "Column":
        """Build from level labels; levels default to first-appearance order"""
        labels = list(labels)
        if levels is None:
            levels = list(dict.fromkeys(str(v) for v in labels if v is not None))
        index = {level: i for i, level in enumerate(levels)}
        try:
            codes = [np.nan if v is None else index[str(v)] for v in labels]
        except KeyError as e:
            raise DataError(f"column {name} has a value outside its levels: {e}") from e
        return cls(name=name, kind=ColumnKind.CATEGORICAL, values=np.array(codes, dtype=float),
                   levels=tuple(levels))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def is_categorical(self) -> bool:
        return self.kind == ColumnKind.CATEGORICAL

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.values)

    @property
    def n_missing(self) -> int:
        return int(self.missing.sum())

    def codes(self) -> np.ndarray:
        """Integer level indices; only valid for a fully observed categorical column"""
        if self.n_missing:
            raise DataError(f"column {self.name} has missing values")
        return self.values.astype(np.int64)

    def labels(self) -> list[Optional[str]]:
        if not self.is_categorical:
            raise DataError(f"column {self.name} is not categorical")
        return [None if np.isnan(v) else self.levels[int(v)] for v in self.values]

    def level_counts(self) -> np.ndarray:
        observed = self.values[~self.missing].astype(np.int64)
        return np.bincount(observed, minlength=len(self.levels))

    def replace(self, **changes) -> "Column":
        data = {"name": self.name, "kind": self.kind, "values": self.values, "levels": self.levels}
        data.update(changes)
        return Column(**data)

    def take(self, rows: np.ndarray) -> "Column":
        return self.replace(values=self.values[rows])


@dataclass(frozen=True)
class Roles:
    outcome: str
    treatment: str
    covariates: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(self.covariates))
        if len(set(self.covariates)) != len(self.covariates):
            raise DataError("covariate names must be unique")
        if self.outcome == self.treatment:
            raise DataError("outcome and treatment must be different columns")
        overlap = {self.outcome, self.treatment} & set(self.covariates)
        if overlap:
            raise DataError(f"role columns cannot also be covariates: {sorted(overlap)}")


@dataclass(frozen=True)
class Dataset:
    columns: tuple[Column, ...]
    roles: Roles

    def __post_init__(self):
        columns = tuple(self.columns)
        object.__setattr__(self, "columns", columns)
        names = [c.name for c in columns]
        if len(set(names)) != len(names):
            raise DataError("column names must be unique")
        if len({c.n for c in columns}) > 1:
            raise DataError("all columns must have the same number of rows")
        for name in (self.roles.outcome, self.roles.treatment, *self.roles.covariates):
            if name not in names:
                raise DataError(f"role column {name} not found in dataset")

        outcome = self.column(self.roles.outcome)
        if outcome.is_categorical:
            raise DataError(f"outcome {outcome.name} must be continuous")
        if outcome.n_missing:
            raise DataError(f"outcome {outcome.name} has missing values")
        treatment = self.column(self.roles.treatment)
        if not treatment.is_categorical or treatment.levels != TREATMENT_LEVELS:
            raise DataError("treatment not binary: expected categorical levels ('0', '1')")
        if treatment.n_missing:
            raise DataError(f"treatment {treatment.name} has missing values")

    @property
    def n_rows(self) -> int:
        return self.columns[0].n if self.columns else 0

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def __contains__(self, name: str) -> bool:
        return name in self.names

    def column(self, name: str) -> Column:
        for c in self.columns:
            if c.name == name:
                return c
        raise DataError(f"column {name} not found in dataset")

    @property
    def outcome(self) -> np.ndarray:
        return self.column(self.roles.outcome).values

    @property
    def treatment(self) -> np.ndarray:
        return self.column(self.roles.treatment).codes()

    @property
    def covariates(self) -> tuple[str, ...]:
        return self.roles.covariates

    def covariate_columns(self) -> list[Column]:
        return [self.column(name) for name in self.roles.covariates]

    def with_columns(self, columns: Iterable[Column], covariates: Optional[Sequence[str]] = None) -> "Dataset":
        """Replace columns by name (appending new ones), optionally resetting the covariate role"""
        updated = {c.name: c for c in columns}
        merged = [updated.pop(c.name, c) for c in self.columns]
        merged.extend(updated.values())
        roles = self.roles
        if covariates is not None:
            roles = Roles(roles.outcome, roles.treatment, tuple(covariates))
        return Dataset(columns=tuple(merged), roles=roles)

    def drop(self, names: Iterable[str]) -> "Dataset":
        names = set(names)
        protected = names & {self.roles.outcome, self.roles.treatment}
        if protected:
            raise DataError(f"cannot drop role columns {sorted(protected)}")
        return Dataset(
            columns=tuple(c for c in self.columns if c.name not in names),
            roles=Roles(self.roles.outcome, self.roles.treatment,
                        tuple(c for c in self.roles.covariates if c not in names)),
        )

    def take(self, rows: np.ndarray) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(columns=tuple(c.take(rows) for c in self.columns), roles=self.roles)

    def to_frame(self) -> pd.DataFrame:
        """Labels for categorical columns, floats for continuous ones, None for missing"""
        data = {}
        for c in self.columns:
            data[c.name] = c.labels() if c.is_categorical else c.values
        return pd.DataFrame(data, columns=self.names)


@dataclass(frozen=True)
class FeatureMatrix:
    """Numeric view of covariates for the learners (categorical columns as level indices)"""
    values: np.ndarray
    names: tuple[str, ...]
    is_categorical: np.ndarray
    levels: tuple[tuple[str, ...], ...]

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2:
            raise DataError("feature matrix must be two-dimensional")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "is_categorical", np.asarray(self.is_categorical, dtype=bool))
        object.__setattr__(self, "levels", tuple(tuple(lv) for lv in self.levels))
        if not (values.shape[1] == len(self.names) == len(self.is_categorical) == len(self.levels)):
            raise DataError("feature matrix metadata does not match its columns")

    @classmethod
    def from_dataset(cls, ds: Dataset, names: Optional[Sequence[str]] = None) -> "FeatureMatrix":
        names = list(ds.covariates if names is None else names)
        columns = [ds.column(name) for name in names]
        values = np.column_stack([c.values for c in columns]) if columns else np.empty((ds.n_rows, 0))
        return cls(
            values=values,
            names=tuple(names),
            is_categorical=np.array([c.is_categorical for c in columns], dtype=bool),
            levels=tuple(c.levels for c in columns),
        )

    @classmethod
    def from_array(cls, values: np.ndarray, names: Optional[Sequence[str]] = None) -> "FeatureMatrix":
        """All-continuous matrix"""
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        p = values.shape[1]
        names = tuple(names) if names is not None else tuple(f"x{j + 1}" for j in range(p))
        return cls(values=values, names=names, is_categorical=np.zeros(p, dtype=bool),
                   levels=tuple(() for _ in range(p)))

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    @property
    def n_levels(self) -> np.ndarray:
        return np.array([len(lv) for lv in self.levels], dtype=np.int64)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise DataError(f"feature {name} not found") from None

    def take(self, rows: np.ndarray) -> "FeatureMatrix":
        return FeatureMatrix(self.values[rows], self.names, self.is_categorical, self.levels)

    def with_values(self, values: np.ndarray) -> "FeatureMatrix":
        return FeatureMatrix(values, self.names, self.is_categorical, self.levels)

    def one_hot(self) -> tuple[np.ndarray, list[str]]:
        """Continuous columns pass through; L levels become L-1 indicators (first level is reference)"""
        blocks, labels = [], []
        for j, name in enumerate(self.names):
            col = self.values[:, j]
            if self.is_categorical[j]:
                for k, level in enumerate(self.levels[j][1:], start=1):
                    indicator = (col == k).astype(float)
                    indicator[np.isnan(col)] = np.nan
                    blocks.append(indicator)
                    labels.append(f"{name}={level}")
            else:
                blocks.append(col)
                labels.append(name)
        if not blocks:
            return np.empty((self.n_rows, 0)), labels
        return np.column_stack(blocks), labels
