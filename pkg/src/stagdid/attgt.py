"""Group-time average treatment effects.

Three comparison strategies produce an ATT estimate for a (group, period)
cell, each valid under a different parallel-trends condition:

``NEVER``
    Long difference from the group's base period, compared against units
    never treated in the sample window.
``NYT``
    Same long difference, compared against units not yet treated at the
    outcome period (never-treated units included, the cell's own group
    excluded).
``NYT_ALL``
    The group's long difference minus a sum of one-period changes among
    units not yet treated at each step. Valid under the weakest condition,
    at the price of a comparison set that shrinks step by step.

Every estimate carries a per-unit influence column: the first-order effect
of each unit's data on the estimate, scaled so the estimate behaves as the
weighted mean of (estimate + influence). All uncertainty reporting, both
analytic and bootstrap, flows through these columns.

Event time is ``e = t - g + 1``, so ``e = 1`` is the first treated period
and ``e = 0`` is the base period ``t = g - 1`` (identically zero for the
long-difference methods and never reported in a cell set).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    EmptyComparisonSet,
    NoIdentifiedCells,
    OmittedCellWarning,
    SmallGroupWarning,
)
from .inference import clustered_covariance
from .panel import NEVER, PanelDataset, cell_mask

METHODS = ("NEVER", "NYT", "NYT_ALL")


@dataclass(frozen=True)
class GroupTimeResult:
    """One ATT(g, t) cell.

    ``influence`` has length n with weighted sample mean zero; ``se`` is
    filled when the cell is produced inside a set (where cluster structure
    is applied) and left as None for direct single-cell calls.
    """

    g: int
    t: int
    e: int
    estimate: float
    influence: np.ndarray
    comparison: str
    method: str
    se: float | None = None

    @property
    def is_post(self) -> bool:
        return self.t >= self.g


@dataclass(frozen=True)
class AttGtSet:
    """An ordered collection of ATT(g, t) cells with their joint covariance.

    ``covariance[j, j]`` is the squared standard error of cell ``j``;
    ordering of ``results`` and covariance rows agree (sorted by (g, t)).
    """

    method: str
    results: tuple
    covariance: np.ndarray
    n_units: int
    n_clusters: int
    warnings: tuple = ()

    def __len__(self) -> int:
        return len(self.results)

    def __iter__(self):
        return iter(self.results)

    @property
    def estimates(self) -> np.ndarray:
        return np.array([r.estimate for r in self.results])

    @property
    def influence_matrix(self) -> np.ndarray:
        """Stacked influence columns, shape (n, k)."""
        return np.column_stack([r.influence for r in self.results])

    def cell(self, g: int, t: int) -> GroupTimeResult:
        for r in self.results:
            if r.g == g and r.t == t:
                return r
        raise KeyError(f"no cell ({g}, {t}) in this set")

    def to_dict(self) -> dict:
        """JSON-ready payload: method, cells, row-major covariance, warnings."""
        return {
            "method": self.method,
            "cells": [
                {
                    "g": int(r.g),
                    "t": int(r.t),
                    "e": int(r.e),
                    "estimate": float(r.estimate),
                    "se": None if r.se is None else float(r.se),
                }
                for r in self.results
            ],
            "covariance": [float(v) for v in self.covariance.reshape(-1)],
            "warnings": list(self.warnings),
        }


# ---------------------------------------------------------------------------
# mean-over-mask linearization
# ---------------------------------------------------------------------------

def _mask_mean(ds: PanelDataset, mask: np.ndarray, x: np.ndarray):
    """Weighted mean of x over mask and its per-unit influence column.

    For m = sum(w*x over mask) / sum(w over mask), the first-order effect
    of unit i is mask_i * (x_i - m) / mean(w*mask), which integrates to
    zero under the mean-one weights.
    """
    n = ds.n_units
    ehat = ds.weight[mask].sum() / n
    m = float((ds.weight[mask] * x[mask]).sum() / (n * ehat))
    phi = np.zeros(n)
    phi[mask] = (x[mask] - m) / ehat
    return m, phi


def _long_diff_cell(ds, g, t, comp_mask, comp_desc, method) -> GroupTimeResult:
    x = ds.y(t) - ds.y(g - 1)
    m_g, phi_g = _mask_mean(ds, ds.group_mask(g), x)
    m_c, phi_c = _mask_mean(ds, comp_mask, x)
    return GroupTimeResult(
        g=g,
        t=t,
        e=t - g + 1,
        estimate=m_g - m_c,
        influence=phi_g - phi_c,
        comparison=comp_desc,
        method=method,
    )


def att_never(ds: PanelDataset, g: int, t: int) -> GroupTimeResult:
    """ATT(g, t) against the never-treated comparison group.

    The estimate is the weighted mean of ``Y_t - Y_{g-1}`` over group g
    minus the same mean over never-treated units. Any ``t`` in the sample
    works: ``t >= g`` is the treatment-effect reading, ``t < g - 1`` is a
    pre-trends diagnostic, and ``t = g - 1`` is identically zero.

    Raises
    ------
    EmptyComparisonSet
        When the panel has no never-treated units.
    UnknownGroup
        When no units are first treated at ``g``.
    """
    comp = cell_mask(ds, never=True)
    return _long_diff_cell(ds, g, t, comp, "never-treated units", "NEVER")


def att_ny(ds: PanelDataset, g: int, t: int) -> GroupTimeResult:
    """ATT(g, t) against units not yet treated at the outcome period.

    Same long difference as :func:`att_never` but compared to units whose
    first treatment comes after ``t`` (or never), excluding group g itself.
    For ``t < g - 1`` the long difference runs backward from the base
    period as written; those diagnostic cells can absorb treatment effects
    of comparison units switching in between ``t`` and ``g - 1``, which is
    exactly what the stronger-assumption methods exist to avoid.
    """
    comp = cell_mask(ds, not_treated_at=t, exclude_group=g)
    desc = f"units not yet treated at period {t}, excluding group {g}"
    return _long_diff_cell(ds, g, t, comp, desc, "NYT")


def att_ny_plus(ds: PanelDataset, g: int, t: int) -> GroupTimeResult:
    """ATT(g, t) built from chained one-period not-yet-treated contrasts.

    estimate = mean(Y_t - Y_{g-1} | group g)
               - sum over s = g..t of mean(Y_s - Y_{s-1} | not treated at s,
                 excluding group g)

    Each step s uses the comparison units still untreated at s, so the
    comparison set may shrink as s grows; the cell is identified only when
    every step has a nonempty set.

    Raises
    ------
    ValueError
        When ``t < g`` (use :func:`att_ny_plus_pre` for pre-period cells).
    EmptyComparisonSet
        Naming the first step ``s`` whose comparison set is empty.
    """
    if t < g:
        raise ValueError(f"t={t} is before first treatment g={g}; see att_ny_plus_pre")
    x = ds.y(t) - ds.y(g - 1)
    m_g, phi = _mask_mean(ds, ds.group_mask(g), x)
    estimate = m_g
    for s in range(g, t + 1):
        try:
            comp = cell_mask(ds, not_treated_at=s, exclude_group=g)
        except EmptyComparisonSet:
            raise EmptyComparisonSet(
                f"cell ({g},{t}): no comparison units remain untreated at step s={s}"
            ) from None
        m_s, phi_s = _mask_mean(ds, comp, ds.dy(s))
        estimate -= m_s
        phi = phi - phi_s
    desc = f"one-period changes among units not yet treated at each s={g}..{t}, excluding group {g}"
    return GroupTimeResult(
        g=g, t=t, e=t - g + 1, estimate=float(estimate),
        influence=phi, comparison=desc, method="NYT_ALL",
    )


def att_ny_plus_pre(ds: PanelDataset, g: int, t: int) -> GroupTimeResult:
    """Pre-period placebo for the chained method: a single local contrast.

    estimate = mean(Y_t - Y_{t-1} | group g)
               - mean(Y_t - Y_{t-1} | not treated at t, excluding group g)

    Defined for ``2 <= t <= g - 1``; zero in expectation when one-period
    trends are parallel at every pre-treatment step.
    """
    if not 2 <= t <= g - 1:
        raise ValueError(f"pre-period cells need 2 <= t <= g-1, got t={t}, g={g}")
    dx = ds.dy(t)
    m_g, phi_g = _mask_mean(ds, ds.group_mask(g), dx)
    comp = cell_mask(ds, not_treated_at=t, exclude_group=g)
    m_c, phi_c = _mask_mean(ds, comp, dx)
    desc = f"one-period change at t={t} among units not yet treated at {t}, excluding group {g}"
    return GroupTimeResult(
        g=g, t=t, e=t - g + 1, estimate=m_g - m_c,
        influence=phi_g - phi_c, comparison=desc, method="NYT_ALL",
    )


def influence(ds: PanelDataset, result: GroupTimeResult) -> np.ndarray:
    """Per-unit influence column of a cell, recomputed from the panel."""
    if result.t >= result.g:
        fn = {"NEVER": att_never, "NYT": att_ny, "NYT_ALL": att_ny_plus}[result.method]
        fresh = fn(ds, result.g, result.t)
    elif result.method == "NYT_ALL":
        fresh = att_ny_plus_pre(ds, result.g, result.t)
    elif result.method == "NEVER":
        fresh = att_never(ds, result.g, result.t)
    else:
        fresh = att_ny(ds, result.g, result.t)
    return fresh.influence


# ---------------------------------------------------------------------------
# full cell sets
# ---------------------------------------------------------------------------

def _cell_plan(ds: PanelDataset, method: str, include_pre: bool):
    """Ordered (g, t, kind) triples the set should attempt, sorted by (g, t)."""
    plan = []
    for g in ds.groups:
        if include_pre:
            if method == "NYT_ALL":
                pre_ts = range(2, g - 1)  # local differences need t >= 2
            else:
                pre_ts = range(1, g - 1)  # long differences reach back to t = 1
            plan.extend((g, t, "pre") for t in pre_ts)
        plan.extend((g, t, "post") for t in range(g, ds.T + 1))
    return sorted(plan, key=lambda c: (c[0], c[1]))


def att_set(ds: PanelDataset, method: str = "NYT", include_pre: bool = False) -> AttGtSet:
    """All identified ATT(g, t) cells for a method, with joint covariance.

    Post cells cover ``t = g..T`` for every realized group. With
    ``include_pre``, diagnostic cells at event times ``e <= -1`` are added:
    long-difference cells ``t = 1..g-2`` for NEVER and NYT, one-period
    cells ``t = 2..g-2`` for NYT_ALL. The base period ``e = 0`` is never
    included (identically zero by construction).

    Cells whose comparison set is empty are skipped with an
    :class:`OmittedCellWarning` rather than failing the set; a group
    containing a single unit triggers a :class:`SmallGroupWarning` since
    its mean contributes no variance. The same messages are recorded on
    the returned set for serialization.

    Raises
    ------
    NoIdentifiedCells
        When every cell was skipped.
    """
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}, got {method!r}")

    notes = []
    for g in ds.groups:
        if int(ds.group_mask(g).sum()) == 1:
            msg = f"group {g} has a single unit; its mean contributes no sampling variance"
            warnings.warn(msg, SmallGroupWarning, stacklevel=2)
            notes.append(msg)

    results = []
    for g, t, kind in _cell_plan(ds, method, include_pre):
        try:
            if kind == "pre" and method == "NYT_ALL":
                res = att_ny_plus_pre(ds, g, t)
            elif method == "NEVER":
                res = att_never(ds, g, t)
            elif method == "NYT":
                res = att_ny(ds, g, t)
            else:
                res = att_ny_plus(ds, g, t)
        except EmptyComparisonSet as exc:
            msg = f"cell ({g},{t}) omitted: {exc}"
            warnings.warn(msg, OmittedCellWarning, stacklevel=2)
            notes.append(msg)
            continue
        results.append(res)

    if not results:
        raise NoIdentifiedCells(
            f"no ATT(g,t) cell is identified with method {method} on this panel"
        )

    phi = np.column_stack([r.influence for r in results])
    cov = clustered_covariance(phi, ds.weight, ds.cluster_id)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    results = tuple(replace(r, se=float(s)) for r, s in zip(results, se))

    return AttGtSet(
        method=method,
        results=results,
        covariance=cov,
        n_units=ds.n_units,
        n_clusters=ds.n_clusters,
        warnings=tuple(notes),
    )
