"""Balanced panel data model and long-format ingestion.

Every estimator in this package operates on a :class:`PanelDataset`: a
balanced unit-by-period outcome matrix together with each unit's
first-treatment period, a sampling weight, a cluster label, and an optional
binary stratum. Time labels are mapped to integer positions ``t = 1..T``;
calendar spacing never enters any formula, so gaps between labels are
treated as adjacent periods.

Treatment timing is absorbing by construction: a unit first treated at
``g`` is treated at every ``t >= g``. Units treated at or before the first
sample period carry no usable comparison information and are dropped at
load time. Units never treated during the sample window are coded with the
module constant :data:`NEVER`.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import (
    DuplicateCell,
    EmptyComparisonSet,
    InconsistentFirstTreat,
    UnbalancedPanel,
    UnknownGroup,
    ValidationError,
)

NEVER = 0
"""Internal code for units never treated during the sample window."""


def _frozen_array(values, dtype=None):
    arr = np.asarray(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class PanelDataset:
    """Immutable balanced panel.

    Attributes
    ----------
    units : ndarray of shape (n,)
        Original unit labels, sorted.
    periods : tuple
        Original time labels in increasing order; position ``t`` (1-based)
        refers to ``periods[t - 1]``.
    outcome : ndarray of shape (n, T)
        Outcome values, one row per unit, one column per period.
    first_treat : ndarray of shape (n,)
        Integer position of each unit's first treated period, in
        ``2..T``, or :data:`NEVER` (0) for units untreated throughout.
    weight : ndarray of shape (n,)
        Per-unit sampling weights, normalized to mean one so weighted
        averages and variance formulas share a single convention. All
        estimates are invariant to the overall weight scale.
    cluster_id : ndarray of shape (n,)
        Integer cluster codes in ``0..n_clusters - 1``. Defaults to one
        cluster per unit.
    stratum : ndarray of shape (n,) or None
        Optional binary stratum labels (0/1).
    dropped_always_treated : int
        Units removed at load because they were treated at or before the
        first sample period.
    dropped_unbalanced : int
        Units removed at load because they were missing periods.
    """

    units: np.ndarray
    periods: tuple
    outcome: np.ndarray
    first_treat: np.ndarray
    weight: np.ndarray
    cluster_id: np.ndarray
    stratum: np.ndarray | None = None
    dropped_always_treated: int = 0
    dropped_unbalanced: int = 0

    # ------------------------------------------------------------------
    # basic shape
    # ------------------------------------------------------------------

    @property
    def n_units(self) -> int:
        return self.outcome.shape[0]

    @property
    def T(self) -> int:
        return self.outcome.shape[1]

    @property
    def n_clusters(self) -> int:
        return int(self.cluster_id.max()) + 1 if self.n_units else 0

    # ------------------------------------------------------------------
    # groups and indicators
    # ------------------------------------------------------------------

    @property
    def groups(self) -> tuple:
        """Realized first-treatment positions, ascending, never excluded."""
        gs = np.unique(self.first_treat)
        return tuple(int(g) for g in gs if g != NEVER)

    @property
    def has_never(self) -> bool:
        return bool(np.any(self.first_treat == NEVER))

    @property
    def never_mask(self) -> np.ndarray:
        return self.first_treat == NEVER

    @property
    def ever_mask(self) -> np.ndarray:
        return self.first_treat != NEVER

    def group_mask(self, g: int) -> np.ndarray:
        if g == NEVER:
            return self.never_mask
        if g not in self.groups:
            raise UnknownGroup(f"no units are first treated at position {g}")
        return self.first_treat == g

    def treated_at(self, t: int) -> np.ndarray:
        """Indicator of being treated in period ``t`` (1-based position)."""
        self._check_period(t)
        return (self.first_treat != NEVER) & (self.first_treat <= t)

    def not_treated_at(self, t: int) -> np.ndarray:
        return ~self.treated_at(t)

    def _check_period(self, t: int) -> None:
        if not 1 <= t <= self.T:
            raise ValueError(f"period position {t} outside 1..{self.T}")

    # ------------------------------------------------------------------
    # outcomes
    # ------------------------------------------------------------------

    def y(self, t: int) -> np.ndarray:
        """Outcome column for period position ``t``."""
        self._check_period(t)
        return self.outcome[:, t - 1]

    def dy(self, t: int) -> np.ndarray:
        """One-period outcome change ``Y_t - Y_{t-1}`` (needs ``t >= 2``)."""
        if t < 2:
            raise ValueError("one-period changes start at t = 2")
        self._check_period(t)
        return self.outcome[:, t - 1] - self.outcome[:, t - 2]

    # ------------------------------------------------------------------
    # weights
    # ------------------------------------------------------------------

    def weighted_count(self, mask: np.ndarray) -> float:
        return float(self.weight[mask].sum())

    def group_weight(self, g: int) -> float:
        return self.weighted_count(self.group_mask(g))

    # ------------------------------------------------------------------
    # construction helpers
    # ------------------------------------------------------------------

    @staticmethod
    def from_arrays(
        outcome,
        first_treat,
        *,
        weight=None,
        cluster=None,
        stratum=None,
        units=None,
        periods=None,
        dropped_always_treated: int = 0,
        dropped_unbalanced: int = 0,
    ) -> "PanelDataset":
        """Build a dataset from in-memory arrays, applying all invariants.

        ``first_treat`` holds integer positions (0 meaning never treated).
        Weights are normalized to mean one here; cluster labels of any
        hashable type are converted to dense integer codes.
        """
        outcome = np.asarray(outcome, dtype=float)
        if outcome.ndim != 2:
            raise ValidationError("outcome must be a units-by-periods matrix")
        n, T = outcome.shape
        if not np.all(np.isfinite(outcome)):
            raise ValidationError("outcome contains NaN or infinite values")

        ft = np.asarray(first_treat, dtype=int)
        if ft.shape != (n,):
            raise ValidationError("first_treat must have one entry per unit")
        if np.any((ft != NEVER) & (ft < 2)):
            raise ValidationError(
                "first_treat positions must be >= 2; units treated at the "
                "first sample period should have been dropped upstream"
            )
        if np.any(ft > T):
            raise ValidationError("first_treat position beyond the last period")

        if weight is None:
            w = np.ones(n, dtype=float)
        else:
            w = np.asarray(weight, dtype=float).copy()
            if w.shape != (n,):
                raise ValidationError("weight must have one entry per unit")
            if np.any(~np.isfinite(w)) or np.any(w < 0):
                raise ValidationError("weights must be finite and nonnegative")
        total = w.sum()
        if total <= 0:
            raise ValidationError("total weight must be strictly positive")
        w = w * (n / total)  # normalize to mean one

        for g in np.unique(ft):
            if g != NEVER and w[ft == g].sum() <= 0:
                raise ValidationError(
                    f"group at position {g} has zero total weight"
                )

        if cluster is None:
            cl = np.arange(n, dtype=int)
        else:
            cl_labels = np.asarray(cluster)
            if cl_labels.shape != (n,):
                raise ValidationError("cluster must have one entry per unit")
            _, cl = np.unique(cl_labels.astype(str), return_inverse=True)
            cl = cl.astype(int)

        if stratum is not None:
            st = np.asarray(stratum)
            if st.shape != (n,):
                raise ValidationError("stratum must have one entry per unit")
            st = st.astype(float)
            if not np.all(np.isin(st, (0.0, 1.0))):
                raise ValidationError("stratum labels must be 0 or 1")
            st = _frozen_array(st.astype(int))
        else:
            st = None

        if units is None:
            units = np.array([f"unit{i + 1}" for i in range(n)])
        else:
            units = np.asarray(units)
            if units.shape != (n,):
                raise ValidationError("units must have one label per unit")
        if periods is None:
            periods = tuple(range(1, T + 1))
        else:
            periods = tuple(periods)
            if len(periods) != T:
                raise ValidationError("periods must have one label per column")

        return PanelDataset(
            units=_frozen_array(units),
            periods=periods,
            outcome=_frozen_array(outcome),
            first_treat=_frozen_array(ft),
            weight=_frozen_array(w),
            cluster_id=_frozen_array(cl),
            stratum=st,
            dropped_always_treated=dropped_always_treated,
            dropped_unbalanced=dropped_unbalanced,
        )

    def subset(self, mask: np.ndarray) -> "PanelDataset":
        """Dataset restricted to the units selected by ``mask``.

        Weights are renormalized to mean one on the subset; every
        estimator is invariant to that rescaling.
        """
        mask = np.asarray(mask, dtype=bool)
        if not mask.any():
            raise ValidationError("subset selects no units")
        return PanelDataset.from_arrays(
            self.outcome[mask],
            self.first_treat[mask],
            weight=self.weight[mask],
            cluster=self.cluster_id[mask],
            stratum=None if self.stratum is None else self.stratum[mask],
            units=self.units[mask],
            periods=self.periods,
        )


@dataclass(frozen=True)
class ValidationReport:
    """Overlap and composition diagnostics for a loaded panel."""

    dropped_always_treated: int
    dropped_unbalanced: int
    realized_groups: Mapping[int, int]
    group_shares: Mapping[int, float]
    warnings: tuple

    def to_dict(self) -> dict:
        return {
            "dropped_always_treated": self.dropped_always_treated,
            "dropped_unbalanced": self.dropped_unbalanced,
            "realized_groups": {str(k): v for k, v in self.realized_groups.items()},
            "group_shares": {str(k): v for k, v in self.group_shares.items()},
            "warnings": list(self.warnings),
        }


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------

_REQUIRED = ("unit", "time", "outcome", "first_treat")


def load_panel(
    data,
    *,
    never_code=0,
    drop_unbalanced: bool = False,
    unit_col: str = "unit",
    time_col: str = "time",
    outcome_col: str = "outcome",
    first_treat_col: str = "first_treat",
    weight_col: str = "weight",
    cluster_col: str = "cluster",
    stratum_col: str = "stratum",
) -> PanelDataset:
    """Load long-format rows into a balanced :class:`PanelDataset`.

    Parameters
    ----------
    data : DataFrame, path, or iterable of mappings
        Long-format rows with columns ``unit``, ``time``, ``outcome`` and
        ``first_treat`` (plus optional ``weight``, ``cluster`` and
        ``stratum``). A string or path is read as CSV.
    never_code :
        Value of ``first_treat`` marking never-treated units. Empty or
        missing values are also read as never treated.
    drop_unbalanced :
        When true, units missing any period are dropped (and counted);
        otherwise an :class:`UnbalancedPanel` error is raised.

    Notes
    -----
    ``first_treat`` must be constant within a unit, as must the optional
    ``weight``, ``cluster`` and ``stratum`` columns (weights are per unit
    and time-constant; time-varying weights are rejected). Units whose
    first treatment falls at or before the first sample period are dropped
    and counted, because no pre-treatment comparison exists for them. A
    ``first_treat`` after the last sample period means the unit is never
    treated within the window.
    """
    if isinstance(data, (str, os.PathLike)):
        df = pd.read_csv(data)
    elif isinstance(data, pd.DataFrame):
        df = data.copy()
    else:
        df = pd.DataFrame(list(data))

    missing = [c for c in (unit_col, time_col, outcome_col, first_treat_col) if c not in df.columns]
    if missing:
        raise ValidationError(f"missing required columns: {', '.join(missing)}")

    dup = df.duplicated([unit_col, time_col])
    if dup.any():
        row = df.loc[dup.idxmax()]
        raise DuplicateCell(
            f"unit {row[unit_col]!r} has duplicate rows for period {row[time_col]!r}"
        )

    # Per-unit columns must be constant across a unit's rows.
    def _per_unit(col, err_cls=ValidationError, what="value"):
        series = df[col]
        key = series.fillna("\x00<na>") if series.isna().any() else series
        counts = key.groupby(df[unit_col]).nunique()
        bad = counts[counts > 1]
        if len(bad):
            raise err_cls(f"unit {bad.index[0]!r} has a non-constant {what} column {col!r}")
        return df.groupby(unit_col, sort=True)[col].first()

    first_treat_by_unit = _per_unit(first_treat_col, InconsistentFirstTreat, "first-treatment")

    try:
        period_labels = sorted(df[time_col].unique())
    except TypeError as exc:
        raise ValidationError(f"time labels are not mutually comparable: {exc}") from None
    T = len(period_labels)
    pos_of = {label: i + 1 for i, label in enumerate(period_labels)}

    # Balance check on the unit-by-period grid.
    counts = df.groupby(unit_col, sort=True)[time_col].nunique()
    unbalanced_units = counts[counts < T].index
    dropped_unbalanced = 0
    if len(unbalanced_units):
        if not drop_unbalanced:
            raise UnbalancedPanel(
                f"unit {unbalanced_units[0]!r} is missing "
                f"{T - counts[unbalanced_units[0]]} of {T} periods"
            )
        dropped_unbalanced = len(unbalanced_units)
        df = df[~df[unit_col].isin(unbalanced_units)]
        first_treat_by_unit = first_treat_by_unit.drop(index=unbalanced_units)
        if df.empty:
            raise UnbalancedPanel("every unit was unbalanced")

    wide = df.pivot(index=unit_col, columns=time_col, values=outcome_col)
    wide = wide.sort_index().reindex(columns=period_labels)
    outcome = wide.to_numpy(dtype=float)
    if np.any(~np.isfinite(outcome)):
        raise ValidationError("outcome contains missing or non-finite values")

    unit_labels = wide.index.to_numpy()
    first_treat_by_unit = first_treat_by_unit.loc[wide.index]

    # Map first-treatment labels onto period positions. searchsorted gives
    # the first period at or after the stated first treatment, matching the
    # ordinal reading of time used throughout.
    ft_pos = np.empty(len(unit_labels), dtype=int)
    label_arr = np.asarray(period_labels)
    for i, raw in enumerate(first_treat_by_unit.to_numpy()):
        if _is_never(raw, never_code):
            ft_pos[i] = NEVER
            continue
        try:
            pos = int(np.searchsorted(label_arr, raw, side="left")) + 1
        except TypeError:
            raise ValidationError(
                f"first_treat value {raw!r} is not comparable to the time labels"
            ) from None
        ft_pos[i] = NEVER if pos > T else pos

    always = ft_pos == 1
    dropped_always = int(always.sum())
    keep = ~always
    if not keep.any():
        raise ValidationError("all units were treated from the first period on")

    def _optional(col, what):
        if col is not None and col in df.columns:
            return _per_unit(col, what=what).loc[wide.index].to_numpy()[keep]
        return None

    weight = _optional(weight_col, "weight")
    cluster = _optional(cluster_col, "cluster")
    stratum = _optional(stratum_col, "stratum")

    return PanelDataset.from_arrays(
        outcome[keep],
        ft_pos[keep],
        weight=weight,
        cluster=cluster,
        stratum=stratum,
        units=unit_labels[keep],
        periods=period_labels,
        dropped_always_treated=dropped_always,
        dropped_unbalanced=dropped_unbalanced,
    )


def _is_never(raw, never_code) -> bool:
    if raw is None or (isinstance(raw, float) and np.isnan(raw)):
        return True
    if isinstance(raw, str) and raw.strip() == "":
        return True
    if raw == never_code:
        return True
    # CSV round-trips often stringify numeric codes.
    try:
        return float(raw) == float(never_code)
    except (TypeError, ValueError):
        return False


def write_panel_csv(ds: PanelDataset, path) -> None:
    """Write a dataset back to the long CSV schema accepted by load_panel."""
    rows = {
        "unit": np.repeat(ds.units, ds.T),
        "time": np.tile(np.asarray(ds.periods), ds.n_units),
        "outcome": ds.outcome.reshape(-1),
    }
    label_arr = np.asarray(ds.periods)
    ft_labels = [
        0 if g == NEVER else label_arr[g - 1] for g in ds.first_treat
    ]
    rows["first_treat"] = np.repeat(np.asarray(ft_labels), ds.T)
    rows["weight"] = np.repeat(ds.weight, ds.T)
    rows["cluster"] = np.repeat(ds.cluster_id, ds.T)
    if ds.stratum is not None:
        rows["stratum"] = np.repeat(ds.stratum, ds.T)
    pd.DataFrame(rows).to_csv(path, index=False)


# ---------------------------------------------------------------------------
# validation and masks
# ---------------------------------------------------------------------------

def validate(ds: PanelDataset, epsilon: float = 0.01) -> ValidationReport:
    """Report group composition and overlap diagnostics.

    The report is advisory: shares at or below ``epsilon`` and the absence
    of a never-treated group produce warnings, never errors, because which
    estimands remain usable depends on what the caller asks for later.
    """
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    warnings_list = []
    total = ds.weight.sum()
    realized = {}
    shares = {}
    for g in ds.groups:
        mask = ds.group_mask(g)
        realized[g] = int(mask.sum())
        shares[g] = float(ds.weight[mask].sum() / total)
    if ds.has_never:
        realized[NEVER] = int(ds.never_mask.sum())
        shares[NEVER] = float(ds.weight[ds.never_mask].sum() / total)
    else:
        warnings_list.append(
            "no never-treated group: comparisons that need one are unavailable"
        )
    for g, share in shares.items():
        if share <= epsilon:
            name = "never-treated" if g == NEVER else f"group {g}"
            warnings_list.append(
                f"{name} weighted share {share:.4f} is at or below epsilon={epsilon}"
            )
    for g, count in realized.items():
        if g != NEVER and count == 1:
            warnings_list.append(
                f"group {g} has a single unit; its variance contribution is zero"
            )
    return ValidationReport(
        dropped_always_treated=ds.dropped_always_treated,
        dropped_unbalanced=ds.dropped_unbalanced,
        realized_groups=realized,
        group_shares=shares,
        warnings=tuple(warnings_list),
    )


def cell_mask(
    ds: PanelDataset,
    *,
    group: int | None = None,
    never: bool = False,
    not_treated_at: int | None = None,
    exclude_group: int | None = None,
    stratum: int | None = None,
) -> np.ndarray:
    """Boolean unit mask for the comparison-set selectors used everywhere.

    Exactly one of ``group``, ``never`` or ``not_treated_at`` selects the
    base set; ``exclude_group`` and ``stratum`` intersect further. "Not
    treated at s" means first treatment after ``s`` or never treated.
    Raises :class:`EmptyComparisonSet` when nothing matches, which signals
    an unidentified cell downstream.
    """
    chosen = (group is not None) + bool(never) + (not_treated_at is not None)
    if chosen != 1:
        raise ValueError("pick exactly one of group, never, not_treated_at")
    if group is not None:
        mask = ds.group_mask(group)
        desc = f"group {group}"
    elif never:
        mask = ds.never_mask.copy()
        desc = "never-treated units"
    else:
        mask = ds.not_treated_at(not_treated_at)
        desc = f"units not treated at period {not_treated_at}"
    if exclude_group is not None:
        mask = mask & ~ds.group_mask(exclude_group)
        desc += f" excluding group {exclude_group}"
    if stratum is not None:
        if ds.stratum is None:
            raise ValidationError("dataset has no stratum column")
        mask = mask & (ds.stratum == stratum)
        desc += f" in stratum {stratum}"
    if not mask.any():
        raise EmptyComparisonSet(f"no units match: {desc}")
    return mask
