"""Event-study curves and scalar summaries of group-time effects.

Aggregation happens on the estimate vector and its influence columns
together, so every aggregate carries correct uncertainty. Event-time
weights are estimated shares (the weighted share of each group among units
observed at that event time), and their estimation error is propagated
through a product-rule term unless explicitly frozen for debugging.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np
from scipy import stats

from .attgt import AttGtSet, GroupTimeResult, att_ny
from .errors import IneligibleGroup, NoPostCells
from .inference import BootstrapResult, bands, clustered_covariance, se_from_influence
from .panel import PanelDataset


@dataclass(frozen=True)
class EventStudyPoint:
    e: int
    estimate: float
    se: float
    pointwise_ci: tuple | None = None
    simultaneous_band: tuple | None = None


@dataclass(frozen=True)
class EventStudyCurve:
    """Estimates by event time with their joint influence representation.

    ``influence`` has one column per point (same order as ``points``);
    ``unit_weight`` and ``unit_cluster`` are carried along so the curve can
    be bootstrapped or differenced without going back to the dataset.
    ``weight_table`` maps (g, e) to the share that group received at that
    event time.
    """

    points: tuple
    method: str
    weight_table: dict
    influence: np.ndarray
    covariance: np.ndarray
    unit_weight: np.ndarray
    unit_cluster: np.ndarray
    critical_value_sup_t: float | None = None
    alpha: float = 0.05
    warnings: tuple = ()

    @property
    def event_times(self) -> tuple:
        return tuple(p.e for p in self.points)

    @property
    def estimates(self) -> np.ndarray:
        return np.array([p.estimate for p in self.points])

    def point(self, e: int) -> EventStudyPoint:
        for p in self.points:
            if p.e == e:
                return p
        raise KeyError(f"no event time {e} on this curve")

    def to_dict(self) -> dict:
        weights = {}
        for (g, e), w in sorted(self.weight_table.items(), key=lambda kv: (kv[0][1], kv[0][0])):
            weights.setdefault(str(e), {})[str(g)] = float(w)
        return {
            "method": self.method,
            "points": [
                {
                    "e": int(p.e),
                    "estimate": float(p.estimate),
                    "se": float(p.se),
                    "pointwise_ci": None if p.pointwise_ci is None else [float(v) for v in p.pointwise_ci],
                    "simultaneous_band": None
                    if p.simultaneous_band is None
                    else [float(v) for v in p.simultaneous_band],
                }
                for p in self.points
            ],
            "critical_value_sup_t": None
            if self.critical_value_sup_t is None
            else float(self.critical_value_sup_t),
            "alpha": float(self.alpha),
            "weights": weights,
            "warnings": list(self.warnings),
        }

    def write_csv(self, path) -> None:
        """Plot-ready CSV: e, estimate, lo_pw, hi_pw, lo_sim, hi_sim."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["e", "estimate", "lo_pw", "hi_pw", "lo_sim", "hi_sim"])
            for p in self.points:
                lo_pw, hi_pw = p.pointwise_ci if p.pointwise_ci else ("", "")
                lo_sim, hi_sim = p.simultaneous_band if p.simultaneous_band else ("", "")
                writer.writerow([p.e, repr(float(p.estimate)), lo_pw, hi_pw, lo_sim, hi_sim])


@dataclass(frozen=True)
class ScalarSummary:
    """A single aggregated effect with its influence column."""

    name: str
    estimate: float
    se: float
    ci: tuple
    influence: np.ndarray

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "estimate": float(self.estimate),
            "se": float(self.se),
            "ci": [float(self.ci[0]), float(self.ci[1])],
        }


# ---------------------------------------------------------------------------
# event-time weights
# ---------------------------------------------------------------------------

def _eligible_groups(ds: PanelDataset, e: int, *, local: bool = False):
    if e == 0:
        raise ValueError("event time 0 is the base period; weights are undefined there")
    if e >= 1:
        return [g for g in ds.groups if g + e - 1 <= ds.T]
    earliest = 2 if local else 1
    return [g for g in ds.groups if g + e - 1 >= earliest]


def weight_event(ds: PanelDataset, g: int, e: int, *, local: bool = False, mask=None) -> float:
    """Share of group ``g`` among units observable at event time ``e``.

    For ``e >= 1`` the denominator counts units in groups observed for at
    least ``e`` treated periods (g' + e - 1 <= T). For ``e < 0`` it counts
    ever-treated groups with enough pre-periods: the long-difference
    reading needs period ``g + e - 1 >= 1``, the local-difference reading
    (``local=True``) needs ``>= 2``. Never-treated units have no event time
    and never enter these denominators.

    ``mask`` optionally restricts the weighted counts (used for
    within-stratum curves).
    """
    eligible = _eligible_groups(ds, e, local=local)
    if g not in eligible:
        raise IneligibleGroup(
            f"group {g} cannot contribute at event time {e} "
            f"(eligible groups: {eligible or 'none'})"
        )
    w = ds.weight if mask is None else ds.weight * np.asarray(mask, dtype=float)
    num = float(w[ds.group_mask(g)].sum())
    den = float(sum(w[ds.group_mask(g2)].sum() for g2 in eligible))
    if den <= 0:
        raise IneligibleGroup(f"no weight among eligible groups at event time {e}")
    return num / den


def _aggregate_cells(ds, cells, *, weight_mask=None, freeze_weights=False):
    """Convex combination of same-event-time cells with estimated shares.

    Returns (estimate, influence, {g: share}). The influence adds the
    product-rule term for share estimation: each share is a ratio of
    weighted counts, so its contribution is (G_g - share * E) / mean(w*E)
    with E the indicator of belonging to any contributing group (within
    the optional mask).
    """
    n = ds.n_units
    sel = np.ones(n) if weight_mask is None else np.asarray(weight_mask, dtype=float)
    groups = sorted({r.g for r in cells})
    gmasks = {g: ds.group_mask(g).astype(float) * sel for g in groups}
    E = np.zeros(n)
    for g in groups:
        E += gmasks[g]
    ehat = float((ds.weight * E).sum() / n)
    if ehat <= 0:
        raise IneligibleGroup("no weight among contributing groups")

    shares = {g: float((ds.weight * gmasks[g]).sum() / n / ehat) for g in groups}
    estimate = sum(shares[r.g] * r.estimate for r in cells)

    phi = np.zeros(n)
    for r in cells:
        phi = phi + shares[r.g] * r.influence
    if not freeze_weights:
        num = np.zeros(n)
        for r in cells:
            num += r.estimate * gmasks[r.g]
        phi = phi + (num - estimate * E) / ehat

    return float(estimate), phi, shares


def _curve_from_results(
    results,
    ds: PanelDataset,
    method: str,
    *,
    weight_mask=None,
    freeze_weights: bool = False,
    alpha: float = 0.05,
    notes=(),
) -> EventStudyCurve:
    by_e = {}
    for r in results:
        by_e.setdefault(r.e, []).append(r)

    z = float(stats.norm.ppf(1.0 - alpha / 2.0))
    points = []
    columns = []
    weight_table = {}
    for e in sorted(by_e):
        est, phi, shares = _aggregate_cells(
            ds, by_e[e], weight_mask=weight_mask, freeze_weights=freeze_weights
        )
        columns.append(phi)
        points.append((e, est))
        for g, w in shares.items():
            weight_table[(g, e)] = w

    phi_mat = np.column_stack(columns)
    cov = clustered_covariance(phi_mat, ds.weight, ds.cluster_id)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    final_points = tuple(
        EventStudyPoint(
            e=int(e),
            estimate=est,
            se=float(s),
            pointwise_ci=(est - z * s, est + z * s),
        )
        for (e, est), s in zip(points, se)
    )
    return EventStudyCurve(
        points=final_points,
        method=method,
        weight_table=weight_table,
        influence=phi_mat,
        covariance=cov,
        unit_weight=ds.weight,
        unit_cluster=ds.cluster_id,
        alpha=alpha,
        warnings=tuple(notes),
    )


def event_study(att_set: AttGtSet, ds: PanelDataset, *, freeze_weights: bool = False,
                alpha: float = 0.05) -> EventStudyCurve:
    """Event-study curve: share-weighted average of cells at each event time.

    For each event time present in the set, the estimate is
    sum_g w(g; e) * ATT(g, g + e - 1) with weights renormalized over the
    groups actually contributing at that e (a group can drop out when its
    cell was unidentified). Pointwise intervals are filled from the
    analytic clustered standard errors; simultaneous bands are left for
    :func:`apply_bands` after a bootstrap.

    ``freeze_weights`` drops the weight-estimation influence term, treating
    shares as known constants; useful to isolate the two uncertainty
    sources, not recommended for reporting.
    """
    if len(att_set) == 0:
        raise NoPostCells("cannot aggregate an empty cell set")
    return _curve_from_results(
        att_set.results,
        ds,
        att_set.method,
        freeze_weights=freeze_weights,
        alpha=alpha,
        notes=att_set.warnings,
    )


def apply_bands(curve: EventStudyCurve, boot: BootstrapResult) -> EventStudyCurve:
    """Fill a curve's intervals from a bootstrap over its influence columns.

    Standard errors are replaced with the bootstrap's robust values so the
    pointwise intervals and the simultaneous band are consistent with each
    other; the sup-t critical value lands on ``critical_value_sup_t``.
    """
    if boot.se.shape[0] != len(curve.points):
        raise ValueError(
            f"bootstrap has {boot.se.shape[0]} columns for {len(curve.points)} points"
        )
    bb = bands(curve.estimates, boot)
    new_points = tuple(
        replace(
            p,
            se=float(bb.se[j]),
            pointwise_ci=(float(bb.lo_pointwise[j]), float(bb.hi_pointwise[j])),
            simultaneous_band=(float(bb.lo_simultaneous[j]), float(bb.hi_simultaneous[j])),
        )
        for j, p in enumerate(curve.points)
    )
    return replace(
        curve,
        points=new_points,
        critical_value_sup_t=boot.critical_value_sup_t,
        alpha=boot.alpha,
    )


# ---------------------------------------------------------------------------
# scalar summaries
# ---------------------------------------------------------------------------

def _summary(name, estimate, phi, ds_weight, ds_cluster, alpha=0.05) -> ScalarSummary:
    se = float(se_from_influence(phi, ds_weight, ds_cluster)[0])
    z = float(stats.norm.ppf(1.0 - alpha / 2.0))
    return ScalarSummary(
        name=name,
        estimate=float(estimate),
        se=se,
        ci=(estimate - z * se, estimate + z * se),
        influence=phi,
    )


def att_simple(att_set: AttGtSet, ds: PanelDataset, *, population_mask=None) -> ScalarSummary:
    """Average post-treatment effect weighted by group shares.

    Each post cell (t >= g) enters with weight proportional to its group's
    weighted share among ever-treated units, so groups observed longer
    count once per observed period. ``population_mask`` restricts the share
    computation (used for within-stratum summaries).
    """
    post = [r for r in att_set.results if r.t >= r.g]
    if not post:
        raise NoPostCells("the set has no post-treatment cells to average")

    n = ds.n_units
    sel = np.ones(n) if population_mask is None else np.asarray(population_mask, dtype=float)
    ever = ds.ever_mask.astype(float) * sel
    ehat = float((ds.weight * ever).sum() / n)
    if ehat <= 0:
        raise NoPostCells("no ever-treated weight in the requested population")

    groups = sorted({r.g for r in post})
    gmask = {g: ds.group_mask(g).astype(float) * sel for g in groups}
    p_hat = {g: float((ds.weight * gmask[g]).sum() / n / ehat) for g in groups}

    denom = sum(p_hat[r.g] for r in post)
    estimate = sum(p_hat[r.g] * r.estimate for r in post) / denom

    # Influence: cells enter through their own influence and through the
    # estimated shares; (est_cell - estimate) multiplies the share term so
    # a constant shift of all cells shifts the summary one-for-one.
    phi = np.zeros(n)
    share_coef = {g: 0.0 for g in groups}
    for r in post:
        phi += p_hat[r.g] * r.influence
        share_coef[r.g] += r.estimate - estimate
    for g in groups:
        phi_share = (gmask[g] - p_hat[g] * ever) / ehat
        phi += share_coef[g] * phi_share
    phi /= denom

    return _summary("ATT_simple", estimate, phi, ds.weight, ds.cluster_id)


def delta_e_avg(curve: EventStudyCurve) -> ScalarSummary:
    """Unweighted average of the curve over the positive event times present."""
    idx = [j for j, p in enumerate(curve.points) if p.e >= 1]
    if not idx:
        raise NoPostCells("the curve has no positive event times")
    estimate = float(np.mean([curve.points[j].estimate for j in idx]))
    phi = curve.influence[:, idx].mean(axis=1)
    return _summary("delta_e_avg", estimate, phi, curve.unit_weight, curve.unit_cluster)


def delta_s(ds: PanelDataset) -> ScalarSummary:
    """Share-weighted average of each group's instantaneous effect.

    Aggregates the not-yet-treated estimate at t = g over all realized
    groups with first-treated-period shares; coincides exactly with the
    e = 1 point of the not-yet-treated event-study curve whenever both are
    defined.
    """
    cells = [att_ny(ds, g, g) for g in ds.groups]
    estimate, phi, _ = _aggregate_cells(ds, cells)
    return _summary("delta_S", estimate, phi, ds.weight, ds.cluster_id)
