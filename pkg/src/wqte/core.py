"""Observed-data model shared by the estimation, inference and simulation code.

A study unit is the tuple ``(R, S, (R+S)Y, Z, X)``: ``R`` flags an outcome that
was observed initially, ``S`` flags a unit with an initially missing outcome
that was selected for the second (double-sampling) phase.  The outcome is
available exactly when ``R + S == 1``.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, DataValidationError, GridError, PositivityError


@dataclass(frozen=True)
class ObservedRecord:
    """One study unit. ``y`` is ``None`` when the outcome was never ascertained."""

    y: Optional[float]
    z: int
    x: tuple
    r: int
    s: int


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


class Dataset:
    """Column store of observed records.

    Parameters
    ----------
    y : array_like
        Outcomes. Either a ``numpy.ma.MaskedArray`` whose mask marks absent
        outcomes, or a sequence in which ``None`` marks an absent outcome.
    z, r, s : array_like of int
        Treatment, initial-observance and double-sampling indicators.
    x : array_like, shape (n, p)
        Covariates (already numerically encoded).
    column_names : sequence of str, optional
        Covariate labels; defaults to ``x1..xp``.

    Notes
    -----
    Construction only checks shapes. Semantic invariants (``S=1`` implies
    ``R=0``, outcome present iff ``R+S=1``, ...) are reported by
    :func:`validate_dataset` so that invalid inputs can still be described.
    Arrays are read-only after construction.
    """

    __slots__ = ("_y", "_present", "z", "x", "r", "s", "column_names", "_records")

    def __init__(self, y, z, x, r, s, column_names: Optional[Sequence[str]] = None):
        if isinstance(y, np.ma.MaskedArray):
            present = ~np.ma.getmaskarray(y)
            values = np.asarray(y.data, dtype=float)
        else:
            y = list(y) if not isinstance(y, np.ndarray) else y
            if isinstance(y, np.ndarray) and y.dtype != object:
                values = np.asarray(y, dtype=float)
                present = np.ones(values.shape, dtype=bool)
            else:
                present = np.array([v is not None for v in y], dtype=bool)
                values = np.array([np.nan if v is None else float(v) for v in y], dtype=float)
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        n = values.shape[0]
        if x.ndim != 2 or x.shape[0] != n:
            raise ValueError(f"covariates must have shape (n, p) with n={n}, got {x.shape}")
        for name, arr in (("z", z), ("r", r), ("s", s)):
            if np.shape(arr) != (n,):
                raise ValueError(f"{name} must have length {n}, got shape {np.shape(arr)}")
        # absent outcomes carry NaN underneath the mask so a stray read is loud
        values = np.where(present, values, np.nan)
        self._y = _frozen(values, float)
        self._present = _frozen(present, bool)
        self.z = _frozen(z, np.int64)
        self.r = _frozen(r, np.int64)
        self.s = _frozen(s, np.int64)
        self.x = _frozen(x, float)
        if column_names is None:
            column_names = [f"x{j + 1}" for j in range(x.shape[1])]
        if len(column_names) != x.shape[1]:
            raise ValueError("column_names must match the covariate dimension")
        self.column_names = tuple(column_names)
        self._records = None

    @classmethod
    def from_records(cls, records: Iterable[ObservedRecord], column_names=None) -> "Dataset":
        records = list(records)
        if not records:
            raise ValueError("no records")
        p = len(records[0].x)
        if any(len(rec.x) != p for rec in records):
            raise ValueError("records disagree on covariate dimension")
        return cls(
            y=[rec.y for rec in records],
            z=[rec.z for rec in records],
            x=np.array([rec.x for rec in records], dtype=float).reshape(len(records), p),
            r=[rec.r for rec in records],
            s=[rec.s for rec in records],
            column_names=column_names,
        )

    @property
    def n(self) -> int:
        return self._y.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def y(self) -> np.ma.MaskedArray:
        """Outcomes as a masked array; masked entries were never observed."""
        return np.ma.MaskedArray(self._y, mask=~self._present, copy=False)

    @property
    def y_present(self) -> np.ndarray:
        return self._present

    @property
    def observed(self) -> np.ndarray:
        """Mask of units whose outcome enters estimation (``R + S == 1``)."""
        return (self.r + self.s) == 1

    def outcome_values(self) -> np.ndarray:
        """Outcome vector with absent entries zero-filled.

        Only meaningful where :attr:`observed` is true; estimators multiply by
        weights that vanish elsewhere.
        """
        return np.where(self._present, self._y, 0.0)

    @property
    def records(self) -> tuple:
        if self._records is None:
            self._records = tuple(
                ObservedRecord(
                    y=float(self._y[i]) if self._present[i] else None,
                    z=int(self.z[i]),
                    x=tuple(float(v) for v in self.x[i]),
                    r=int(self.r[i]),
                    s=int(self.s[i]),
                )
                for i in range(self.n)
            )
        return self._records

    def __len__(self):
        return self.n

    def __repr__(self):
        return (
            f"Dataset(n={self.n}, p={self.p}, observed={int(self.observed.sum())}, "
            f"double_sampled={int(self.s.sum())})"
        )

    def take(self, index) -> "Dataset":
        index = np.asarray(index)
        return Dataset(
            np.ma.MaskedArray(self._y[index], mask=~self._present[index]),
            self.z[index],
            self.x[index],
            self.r[index],
            self.s[index],
            self.column_names,
        )

    def replace(self, **columns) -> "Dataset":
        """Return a copy with some columns swapped out (``y`` must be masked)."""
        cols = dict(y=self.y, z=self.z, x=self.x, r=self.r, s=self.s, column_names=self.column_names)
        cols.update(columns)
        return Dataset(**cols)


def validate_dataset(d: Dataset) -> list:
    """List every violation of the record and dataset invariants.

    An empty list means the dataset is valid. The report is deterministic:
    violations are ordered by row, then by rule.
    """
    out = []
    if d.n == 0:
        return ["dataset is empty"]
    z, r, s, present = d.z, d.r, d.s, d.y_present
    bad_z = ~np.isin(z, (0, 1))
    bad_r = ~np.isin(r, (0, 1))
    bad_s = ~np.isin(s, (0, 1))
    both = (s == 1) & (r == 1)
    should = ((r + s) == 1) & ~bad_r & ~bad_s
    extra = present & ~should & ~both
    lacking = ~present & should
    nonfinite_y = present & ~np.isfinite(d._y)
    nonfinite_x = ~np.isfinite(d.x).all(axis=1)
    for i in range(d.n):
        if bad_z[i]:
            out.append(f"row {i}: z must be 0 or 1 (got {z[i]})")
        if bad_r[i]:
            out.append(f"row {i}: r must be 0 or 1 (got {r[i]})")
        if bad_s[i]:
            out.append(f"row {i}: s must be 0 or 1 (got {s[i]})")
        if both[i]:
            out.append(f"row {i}: S=1 requires R=0")
        if extra[i]:
            out.append(f"row {i}: y must be absent when r+s=0")
        if lacking[i]:
            out.append(f"row {i}: y must be present when r+s=1")
        if nonfinite_y[i]:
            out.append(f"row {i}: y is not finite")
        if nonfinite_x[i]:
            out.append(f"row {i}: covariates are not finite")
    obs = should & present & ~bad_z
    arms = set(np.unique(z[obs]).tolist())
    for arm in (0, 1):
        if arm not in arms:
            out.append(f"dataset: no observed outcome in treatment arm z={arm}")
    return out


def check_dataset(d: Dataset) -> Dataset:
    """Raise :class:`DataValidationError` unless ``d`` is valid; return ``d``."""
    violations = validate_dataset(d)
    if violations:
        raise DataValidationError(violations)
    return d


@dataclass(frozen=True)
class QuantileGrid:
    """Strictly increasing quantile levels inside ``(0, 1)``."""

    taus: tuple

    def __post_init__(self):
        taus = tuple(float(t) for t in np.atleast_1d(np.asarray(self.taus, dtype=float)))
        if not taus:
            raise GridError("quantile grid is empty")
        if not all(0.0 < t < 1.0 for t in taus):
            raise GridError(f"quantile levels must lie in (0, 1): {taus}")
        if any(b <= a for a, b in zip(taus, taus[1:])):
            raise GridError(f"quantile levels must be strictly increasing without duplicates: {taus}")
        object.__setattr__(self, "taus", taus)

    @classmethod
    def arange(cls, start=0.1, stop=0.9, step=0.1) -> "QuantileGrid":
        """Grid ``start, start+step, ..., stop`` (inclusive), rounded to 10 digits."""
        if step <= 0:
            raise GridError("step must be positive")
        k = int(np.floor((stop - start) / step + 1e-9)) + 1
        return cls(tuple(np.round(start + step * np.arange(k), 10)))

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.taus)

    def __len__(self):
        return len(self.taus)

    def index(self, tau: float) -> int:
        for k, t in enumerate(self.taus):
            if abs(t - tau) < 1e-12:
                return k
        raise GridError(f"tau={tau} is not on the grid {self.taus}")


DEFAULT_GRID = QuantileGrid.arange(0.1, 0.9, 0.1)


@dataclass(frozen=True)
class GSpec:
    """Target-population weight ``g``.

    ``population`` uses ``g(x) = 1`` (population QTE); ``treated`` uses
    ``g(x) = e(x)``, the QTE among the treated.
    """

    kind: str = "population"

    def __post_init__(self):
        if self.kind not in ("population", "treated"):
            raise ConfigurationError(f"unknown g kind {self.kind!r}; use 'population' or 'treated'")

    def evaluate(self, e: np.ndarray) -> np.ndarray:
        e = np.asarray(e, dtype=float)
        g = np.ones_like(e) if self.kind == "population" else e.copy()
        if not (np.all(np.isfinite(g)) and np.all(g > 0)):
            raise PositivityError("g(x) must be finite and strictly positive for every record")
        return g


class EstimatorVariant(enum.Enum):
    """The five weighting schemes compared in the simulation study."""

    FULL = "I-full"
    COMPLETE_CASE = "II-complete-case"
    DS_KNOWN_E = "III-ds-known-e"
    DS_ESTIMATED = "IV-ds-estimated"
    MAR = "V-mar"

    @property
    def short(self) -> str:
        return self.value.split("-", 1)[0]

    @property
    def uses_double_sampling(self) -> bool:
        return self in (EstimatorVariant.DS_KNOWN_E, EstimatorVariant.DS_ESTIMATED)

    @classmethod
    def parse(cls, tag) -> "EstimatorVariant":
        if isinstance(tag, cls):
            return tag
        text = str(tag).strip()
        for v in cls:
            if text in (v.value, v.short, v.name):
                return v
        raise ConfigurationError(f"unknown estimator variant {tag!r}")


def to_jsonable(obj):
    """Recursively convert numpy containers and scalars to plain JSON types."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return _finite_or_none(float(obj))
    if isinstance(obj, float):
        return _finite_or_none(obj)
    if isinstance(obj, enum.Enum):
        return obj.value
    return obj


def _finite_or_none(v):
    return v if np.isfinite(v) else None


def dumps(obj) -> str:
    """Canonical JSON used for every emitted artifact."""
    return json.dumps(to_jsonable(obj), sort_keys=True, indent=2) + "\n"
