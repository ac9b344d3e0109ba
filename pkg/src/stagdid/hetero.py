"""Stratum-specific effects and cross-stratum contrasts.

Units carry a binary stratum label (for example a regulatory-quality
flag), and the question is whether treatment effects differ across the
two strata. The treated mean is always taken inside the requested
stratum. What varies is the comparison set: with
``strata_specific_trends`` the comparison units must belong to the same
stratum, without it the comparison pools both strata. The pooled
reading imposes that untreated trends are shared across strata, which
buys precision and costs robustness; running both and contrasting them
is the intended workflow.

All estimates live on the full panel, so influence vectors have length
n and can be differenced across strata for joint inference.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .aggregate import (
    EventStudyCurve,
    EventStudyPoint,
    ScalarSummary,
    _curve_from_results,
    _summary,
    att_simple,
    delta_e_avg,
)
from .attgt import (
    METHODS,
    AttGtSet,
    GroupTimeResult,
    _cell_plan,
    _mask_mean,
)
from .errors import (
    EmptyComparisonSet,
    EmptyTreatedCell,
    NoCommonE,
    NoIdentifiedCells,
)
from .inference import clustered_covariance
from .panel import PanelDataset, cell_mask
from scipy import stats

__all__ = [
    "StrataVariant",
    "att_strata",
    "event_study_strata",
    "diff_curve",
    "summaries_strata",
]


@dataclass(frozen=True)
class StrataVariant:
    """One of the six stratum-aware estimation variants.

    ``base_method`` picks the comparison strategy (NEVER, NYT, NYT_ALL);
    ``strata_specific_trends`` restricts comparison units to the treated
    cell's own stratum when True and pools them when False.
    """

    base_method: str
    strata_specific_trends: bool

    def __post_init__(self):
        if self.base_method not in METHODS:
            raise ValueError(
                f"base_method must be one of {METHODS}, got {self.base_method!r}"
            )

    @property
    def label(self) -> str:
        trends = "specific" if self.strata_specific_trends else "pooled"
        return f"{self.base_method}|{trends}"


def _stratum_col(ds: PanelDataset) -> np.ndarray:
    if ds.stratum is None:
        raise ValueError("dataset has no stratum column")
    return ds.stratum


def _treated_mask(ds: PanelDataset, g: int, c: int) -> np.ndarray:
    st = _stratum_col(ds)
    mask = ds.group_mask(g) & (st == c)
    if ds.weight[mask].sum() <= 0:
        raise EmptyTreatedCell(f"no units of group {g} in stratum {c}")
    return mask


def att_strata(ds: PanelDataset, g: int, t: int, c: int,
               variant: StrataVariant) -> GroupTimeResult:
    """ATT(g, t) for the treated units of stratum ``c``.

    Comparison logic follows the variant's base method; the comparison
    set is intersected with stratum ``c`` exactly when
    ``strata_specific_trends``. Under that flag the result coincides
    with running the base estimator on the stratum-``c`` subpanel.
    """
    treated = _treated_mask(ds, g, c)
    comp_stratum = c if variant.strata_specific_trends else None
    method = variant.base_method
    label = f"{variant.label}|c={c}"

    if method == "NYT_ALL" and t < g:
        if not 2 <= t <= g - 1:
            raise ValueError(
                f"pre-period cells need 2 <= t <= g-1, got t={t}, g={g}"
            )
        dx = ds.dy(t)
        m_g, phi_g = _mask_mean(ds, treated, dx)
        comp = cell_mask(ds, not_treated_at=t, exclude_group=g,
                         stratum=comp_stratum)
        m_c, phi_c = _mask_mean(ds, comp, dx)
        desc = (f"one-period change at t={t} among units not yet treated, "
                f"excluding group {g}")
        return GroupTimeResult(
            g=g, t=t, e=t - g + 1, estimate=m_g - m_c,
            influence=phi_g - phi_c, comparison=desc, method=label,
        )

    if method == "NYT_ALL":
        x = ds.y(t) - ds.y(g - 1)
        m_g, phi = _mask_mean(ds, treated, x)
        estimate = m_g
        for s in range(g, t + 1):
            try:
                comp = cell_mask(ds, not_treated_at=s, exclude_group=g,
                                 stratum=comp_stratum)
            except EmptyComparisonSet:
                raise EmptyComparisonSet(
                    f"cell ({g},{t}) stratum {c}: no comparison units "
                    f"remain untreated at step s={s}"
                ) from None
            m_s, phi_s = _mask_mean(ds, comp, ds.dy(s))
            estimate -= m_s
            phi = phi - phi_s
        desc = (f"one-period changes among units not yet treated at each "
                f"s={g}..{t}, excluding group {g}")
        return GroupTimeResult(
            g=g, t=t, e=t - g + 1, estimate=float(estimate),
            influence=phi, comparison=desc, method=label,
        )

    if method == "NEVER":
        comp = cell_mask(ds, never=True, stratum=comp_stratum)
        desc = "never-treated units"
    else:
        comp = cell_mask(ds, not_treated_at=t, exclude_group=g,
                         stratum=comp_stratum)
        desc = f"units not yet treated at period {t}, excluding group {g}"
    if comp_stratum is not None:
        desc += f" in stratum {c}"

    x = ds.y(t) - ds.y(g - 1)
    m_g, phi_g = _mask_mean(ds, treated, x)
    m_c, phi_c = _mask_mean(ds, comp, x)
    return GroupTimeResult(
        g=g, t=t, e=t - g + 1, estimate=m_g - m_c,
        influence=phi_g - phi_c, comparison=desc, method=label,
    )


def _strata_results(ds, variant, c, include_pre):
    """All estimable cells for one stratum, with omission notes."""
    st = _stratum_col(ds)
    if not np.any(ds.ever_mask & (st == c)):
        raise EmptyTreatedCell(f"no ever-treated units in stratum {c}")
    results, notes = [], []
    for g, t, _kind in _cell_plan(ds, variant.base_method, include_pre):
        try:
            results.append(att_strata(ds, g, t, c, variant))
        except (EmptyComparisonSet, EmptyTreatedCell) as exc:
            notes.append(f"cell ({g},{t}) stratum {c} skipped: {exc}")
    if not results:
        raise NoIdentifiedCells(
            f"no estimable cells in stratum {c} under {variant.label}"
        )
    return results, notes


def event_study_strata(ds: PanelDataset, variant: StrataVariant, c: int,
                       *, include_pre: bool = False,
                       alpha: float = 0.05) -> EventStudyCurve:
    """Event-study curve for stratum ``c`` with within-stratum weights.

    Group shares at each event time are computed among stratum-``c``
    units only, so the curve answers "what happened to treated units in
    this stratum", whichever comparison trend assumption is in force.
    """
    results, notes = _strata_results(ds, variant, c, include_pre)
    weight_mask = (_stratum_col(ds) == c).astype(float)
    return _curve_from_results(
        results,
        ds,
        f"{variant.label}|c={c}",
        weight_mask=weight_mask,
        alpha=alpha,
        notes=notes,
    )


def diff_curve(curve1: EventStudyCurve, curve0: EventStudyCurve) -> EventStudyCurve:
    """Pointwise difference of two stratum curves at their common event times.

    Both curves must come from the same panel (their unit weights and
    cluster assignments are reused); the difference influence is the
    difference of influences, so clustered and bootstrap inference apply
    unchanged.
    """
    e1 = {p.e: j for j, p in enumerate(curve1.points)}
    e0 = {p.e: j for j, p in enumerate(curve0.points)}
    common = sorted(set(e1) & set(e0))
    if not common:
        raise NoCommonE(
            f"curves share no event times: {sorted(e1)} vs {sorted(e0)}"
        )
    cols1 = [e1[e] for e in common]
    cols0 = [e0[e] for e in common]
    phi = curve1.influence[:, cols1] - curve0.influence[:, cols0]
    ests = np.array([
        curve1.points[j1].estimate - curve0.points[j0].estimate
        for j1, j0 in zip(cols1, cols0)
    ])
    cov = clustered_covariance(phi, curve1.unit_weight, curve1.unit_cluster)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    alpha = curve1.alpha
    z = float(stats.norm.ppf(1.0 - alpha / 2.0))
    points = tuple(
        EventStudyPoint(
            e=int(e),
            estimate=float(est),
            se=float(s),
            pointwise_ci=(float(est - z * s), float(est + z * s)),
        )
        for e, est, s in zip(common, ests, se)
    )
    return EventStudyCurve(
        points=points,
        method=f"{curve1.method} minus {curve0.method}",
        weight_table={},
        influence=phi,
        covariance=cov,
        unit_weight=curve1.unit_weight,
        unit_cluster=curve1.unit_cluster,
        alpha=alpha,
        warnings=tuple(curve1.warnings) + tuple(curve0.warnings),
    )


def _stratum_set(ds, variant, c) -> AttGtSet:
    results, notes = _strata_results(ds, variant, c, include_pre=False)
    phi = np.column_stack([r.influence for r in results])
    cov = clustered_covariance(phi, ds.weight, ds.cluster_id)
    return AttGtSet(
        method=f"{variant.label}|c={c}",
        results=tuple(results),
        covariance=cov,
        n_units=ds.n_units,
        n_clusters=ds.n_clusters,
        warnings=tuple(notes),
    )


def summaries_strata(ds: PanelDataset, variant: StrataVariant) -> dict:
    """Stratum-1 minus stratum-0 scalar summaries with joint inference.

    Returns ``ATT_simple_diff`` and ``delta_e_avg_diff``; each carries
    the difference of the per-stratum influence vectors, so its standard
    error accounts for the two summaries sharing comparison units.
    """
    st = _stratum_col(ds)
    out = {}
    pieces = {}
    for c in (1, 0):
        aset = _stratum_set(ds, variant, c)
        simple = att_simple(aset, ds, population_mask=(st == c).astype(float))
        curve = _curve_from_results(
            list(aset.results), ds, aset.method,
            weight_mask=(st == c).astype(float),
        )
        pieces[c] = (simple, delta_e_avg(curve))
    for key, idx in (("ATT_simple_diff", 0), ("delta_e_avg_diff", 1)):
        s1, s0 = pieces[1][idx], pieces[0][idx]
        out[key] = _summary(
            key,
            s1.estimate - s0.estimate,
            s1.influence - s0.influence,
            ds.weight,
            ds.cluster_id,
        )
    return out
