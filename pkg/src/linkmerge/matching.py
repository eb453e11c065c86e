"""Grouping of two independent datasets by their contextual variables."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CATEGORICAL = "cat"
NUMERIC = "num"


@dataclass(frozen=True)
class Dataset:
    """Values plus per-row context; ``kinds[j]`` tags context column ``j``.

    Categorical context entries are kept as strings, numeric ones as floats.
    """

    values: np.ndarray
    context: tuple = ()
    kinds: tuple = ()
    names: tuple = ()

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite value in dataset")
        cols = tuple(self.context)
        kinds = tuple(self.kinds)
        if len(kinds) != len(cols):
            raise ValueError("one kind tag per context column is required")
        fixed = []
        for col, kind in zip(cols, kinds):
            if kind == NUMERIC:
                col = np.asarray(col, dtype=float)
            elif kind == CATEGORICAL:
                col = np.asarray([str(c) for c in col], dtype=object)
            else:
                raise ValueError(f"context kind must be {CATEGORICAL!r} or {NUMERIC!r}, got {kind!r}")
            if col.shape != v.shape:
                raise ValueError("values and context must have equal row counts")
            fixed.append(col)
        names = tuple(self.names) or tuple(f"{k}_{j}" for j, k in enumerate(kinds))
        if len(names) != len(kinds):
            raise ValueError("one name per context column is required")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "context", tuple(fixed))
        object.__setattr__(self, "kinds", kinds)
        object.__setattr__(self, "names", names)

    def __len__(self):
        return self.values.size

    @property
    def dim(self) -> int:
        return len(self.kinds)

    def row_keys(self) -> list[tuple]:
        if not self.context:
            return [()] * len(self)
        return list(zip(*(c.tolist() for c in self.context)))

    def numeric_matrix(self) -> np.ndarray:
        if any(k != NUMERIC for k in self.kinds):
            raise ValueError("all context columns must be numeric")
        if not self.context:
            return np.empty((len(self), 0))
        return np.column_stack(self.context)


@dataclass(frozen=True)
class Group:
    x: np.ndarray
    y: np.ndarray

    @property
    def n_z(self) -> int:
        return min(self.x.size, self.y.size)


@dataclass
class GroupMap:
    groups: dict = field(default_factory=dict)
    upsilon: float = 0.0
    dropped_x: dict = field(default_factory=dict)
    dropped_y: dict = field(default_factory=dict)
    empty_centers: list = field(default_factory=list)

    def __len__(self):
        return len(self.groups)

    def __iter__(self):
        return iter(self.groups.items())

    def report(self) -> dict:
        return {
            "groups": [_key_repr(k) for k in self.groups],
            "upsilon": self.upsilon,
            "dropped_x": {_key_repr(k): v for k, v in self.dropped_x.items()},
            "dropped_y": {_key_repr(k): v for k, v in self.dropped_y.items()},
            "empty_centers": [_key_repr(k) for k in self.empty_centers],
        }


def _key_repr(key) -> str:
    if key == ():
        return "all"
    return "|".join(str(k) for k in key)


def _check_schema(dx: Dataset, dy: Dataset):
    if dx.kinds != dy.kinds:
        raise ValueError(f"mismatched context schemas: {dx.kinds} vs {dy.kinds}")


def group_exact(dx: Dataset, dy: Dataset) -> GroupMap:
    """One group per context value present in both datasets (everything when d=0)."""
    _check_schema(dx, dy)
    kx, ky = dx.row_keys(), dy.row_keys()
    rows_x, rows_y = {}, {}
    for i, k in enumerate(kx):
        rows_x.setdefault(k, []).append(i)
    for j, k in enumerate(ky):
        rows_y.setdefault(k, []).append(j)
    common = sorted(set(rows_x) & set(rows_y))
    groups = {k: Group(dx.values[rows_x[k]], dy.values[rows_y[k]]) for k in common}
    dropped_x = {k: len(v) for k, v in sorted(rows_x.items()) if k not in rows_y}
    dropped_y = {k: len(v) for k, v in sorted(rows_y.items()) if k not in rows_x}
    return GroupMap(groups, 0.0, dropped_x, dropped_y)


def _near_mask(ds: Dataset, center, upsilon):
    mask = np.ones(len(ds), dtype=bool)
    sq = np.zeros(len(ds))
    for col, kind, c in zip(ds.context, ds.kinds, center):
        if kind == CATEGORICAL:
            mask &= col == str(c)
        else:
            sq += (col - float(c)) ** 2
    return mask & (np.sqrt(sq) <= upsilon)


def group_near(dx: Dataset, dy: Dataset, centers, upsilon: float) -> GroupMap:
    """Rows within Euclidean distance ``upsilon`` of each center (numeric columns),
    with exact agreement on categorical columns.  Groups may overlap.
    """
    if not upsilon > 0:
        raise ValueError("upsilon must be > 0")
    _check_schema(dx, dy)
    groups, empty = {}, []
    for center in centers:
        center = tuple(center)
        if len(center) != dx.dim:
            raise ValueError("center dimension does not match the context dimension")
        key = tuple(str(c) if k == CATEGORICAL else float(c) for c, k in zip(center, dx.kinds))
        mx, my = _near_mask(dx, center, upsilon), _near_mask(dy, center, upsilon)
        if mx.any() and my.any():
            groups[key] = Group(dx.values[mx], dy.values[my])
        else:
            empty.append(key)
    # rows never reached by any center
    covered_x = np.zeros(len(dx), dtype=bool)
    covered_y = np.zeros(len(dy), dtype=bool)
    for key in groups:
        covered_x |= _near_mask(dx, key, upsilon)
        covered_y |= _near_mask(dy, key, upsilon)
    return GroupMap(
        dict(sorted(groups.items())),
        float(upsilon),
        {("uncovered",): int((~covered_x).sum())},
        {("uncovered",): int((~covered_y).sum())},
        empty,
    )
