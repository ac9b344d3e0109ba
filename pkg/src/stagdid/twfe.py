"""Two-way fixed-effects OLS baselines.

These regressions are the conventional practice the design-based
estimators in this package are meant to replace. They are provided for
comparison and labeled a descriptive baseline everywhere: with staggered
timing and heterogeneous dynamics the static coefficient mixes effects
with possibly negative weights, and dynamic lead coefficients pick up
post-treatment effects from other cohorts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import CollinearDesign, ValidationError
from .panel import NEVER, PanelDataset

DESCRIPTIVE_LABEL = "descriptive baseline"

_DEMEAN_TOL = 1e-10


@dataclass(frozen=True)
class TwfeFit:
    """Weighted two-way fixed-effects regression output."""

    coefficients: dict
    vcov_cluster: np.ndarray
    coef_names: tuple
    omitted: tuple
    residuals: np.ndarray  # (n, T)
    nobs: int
    label: str = DESCRIPTIVE_LABEL

    def coef(self, name: str) -> float:
        return self.coefficients[name]

    def se(self, name: str) -> float:
        j = self.coef_names.index(name)
        return float(np.sqrt(max(self.vcov_cluster[j, j], 0.0)))

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "coefficients": {
                name: {"estimate": float(self.coefficients[name]), "se": self.se(name)}
                for name in self.coef_names
            },
            "omitted_event_times": [int(e) for e in self.omitted],
            "nobs": int(self.nobs),
        }


def _weighted_demean(values, codes_list, weights):
    """Iterated weighted demeaning over several factor codings.

    values is (N, k); each codes entry is an integer array of length N.
    Alternates subtracting weighted group means until the update is below
    tolerance. Converges because each pass is a projection.
    """
    out = values.astype(float).copy()
    for _ in range(200):
        delta = 0.0
        for codes in codes_list:
            wsum = np.bincount(codes, weights=weights)
            safe = np.where(wsum > 0, wsum, 1.0)  # zero-weight levels get mean 0
            for j in range(out.shape[1]):
                means = np.bincount(codes, weights=weights * out[:, j]) / safe
                adj = means[codes]
                out[:, j] -= adj
                delta = max(delta, float(np.abs(adj).max()))
        if delta < _DEMEAN_TOL:
            break
    return out


def _event_time_support(ds: PanelDataset):
    es = set()
    for g in ds.groups:
        es.update(t - g + 1 for t in range(1, ds.T + 1))
    return es


def _fit(ds, xcols, fixed_effects):
    n, T = ds.n_units, ds.T
    N = n * T
    y = ds.outcome.reshape(N, 1)
    w = np.repeat(ds.weight, T)

    unit_codes = np.repeat(np.arange(n), T)
    if fixed_effects == "group":
        # one intercept per first-treatment cohort (never treated included)
        _, gcodes = np.unique(ds.first_treat, return_inverse=True)
        unit_codes = np.repeat(gcodes, T)
    elif fixed_effects != "unit":
        raise ValueError("fixed_effects must be 'unit' or 'group'")
    time_codes = np.tile(np.arange(T), n)

    X = np.column_stack(xcols)
    # absorb both fixed effects from the outcome and every regressor
    Zy = _weighted_demean(y, [unit_codes, time_codes], w)
    ZX = _weighted_demean(X, [unit_codes, time_codes], w)

    XtWX = ZX.T @ (ZX * w[:, None])
    rank = np.linalg.matrix_rank(XtWX, hermitian=True)
    if rank < X.shape[1]:
        raise CollinearDesign(
            "design is collinear after absorbing the two-way effects; with no "
            "never-treated group the full set of event-time indicators is not "
            "identified and a second lead (the most negative) must be omitted "
            "in addition to e=0"
        )
    beta = np.linalg.solve(XtWX, ZX.T @ (Zy[:, 0] * w))
    resid = Zy[:, 0] - ZX @ beta

    # cluster sandwich, no small-sample factors: with one cluster per unit this
    # is exactly the heteroskedasticity-robust estimator
    scores = ZX * (w * resid)[:, None]
    cl = np.repeat(ds.cluster_id, T)
    csum = np.zeros((int(cl.max()) + 1, X.shape[1]))
    np.add.at(csum, cl, scores)
    bread = np.linalg.inv(XtWX)
    vcov = bread @ (csum.T @ csum) @ bread

    return beta, vcov, resid.reshape(n, T), N


def twfe_static(ds: PanelDataset, interact_stratum: bool = False, *,
                fixed_effects: str = "unit") -> TwfeFit:
    """Static regression of the outcome on a treated-now indicator.

    Outcome on unit (or cohort) and period effects plus D_it, optionally
    interacted with the stratum label. Weighted by the unit weights,
    cluster-robust at the dataset's cluster ids.
    """
    n, T = ds.n_units, ds.T
    D = (np.repeat(ds.first_treat, T) != NEVER) & (
        np.repeat(ds.first_treat, T) <= np.tile(np.arange(1, T + 1), n)
    )
    xcols = [D.astype(float)]
    names = ["beta_fe"]
    if interact_stratum:
        if ds.stratum is None:
            raise ValidationError("interact_stratum requires a stratum column")
        xcols.append(D.astype(float) * np.repeat(ds.stratum, T))
        names.append("beta_fe:stratum")

    beta, vcov, resid, N = _fit(ds, xcols, fixed_effects)
    return TwfeFit(
        coefficients=dict(zip(names, map(float, beta))),
        vcov_cluster=vcov,
        coef_names=tuple(names),
        omitted=(0,),
        residuals=resid,
        nobs=N,
    )


def twfe_dynamic(ds: PanelDataset, leads: int, lags: int, omit=None,
                 interact_stratum: bool = False, *,
                 fixed_effects: str = "unit") -> TwfeFit:
    """Event-study regression with lead and lag indicators.

    Includes dummies 1{t - g + 1 = e} for e in -leads..-1 and 1..lags
    (never-treated units carry no dummies). e = 0 is always omitted as the
    reference; without a never-treated group a second omission is needed
    and the most negative requested lead is dropped by default. Pass
    ``omit`` to control omissions explicitly (0 is enforced regardless).
    """
    support = _event_time_support(ds)
    if leads < 0 or lags < 1:
        raise ValueError("need leads >= 0 and lags >= 1")
    requested = list(range(-leads, 0)) + list(range(1, lags + 1))
    missing = [e for e in requested if e not in support]
    if missing:
        raise ValueError(
            f"event times {missing} are outside the data support "
            f"{sorted(support)}"
        )

    omitted = {0}
    if omit is not None:
        omitted |= {int(e) for e in omit}
    elif not ds.has_never and requested:
        omitted.add(min(requested))

    included = [e for e in requested if e not in omitted]
    if not included:
        raise ValueError("every requested event time is omitted")

    n, T = ds.n_units, ds.T
    ft = np.repeat(ds.first_treat, T)
    tt = np.tile(np.arange(1, T + 1), n)
    ever = ft != NEVER
    etime = np.where(ever, tt - ft + 1, 10 ** 6)  # sentinel never matches

    xcols = [(etime == e).astype(float) for e in included]
    names = [f"beta_e[{e}]" for e in included]
    if interact_stratum:
        if ds.stratum is None:
            raise ValidationError("interact_stratum requires a stratum column")
        strat = np.repeat(ds.stratum, T).astype(float)
        xcols += [(etime == e).astype(float) * strat for e in included]
        names += [f"beta_e[{e}]:stratum" for e in included]

    beta, vcov, resid, N = _fit(ds, xcols, fixed_effects)
    return TwfeFit(
        coefficients=dict(zip(names, map(float, beta))),
        vcov_cluster=vcov,
        coef_names=tuple(names),
        omitted=tuple(sorted(omitted)),
        residuals=resid,
        nobs=N,
    )


def wald_joint(fit: TwfeFit, names) -> dict:
    """Joint chi-squared test that the named coefficients are all zero."""
    names = list(names)
    idx = [fit.coef_names.index(name) for name in names]
    if not idx:
        raise ValueError("no coefficients selected")
    b = np.array([fit.coefficients[name] for name in names])
    V = fit.vcov_cluster[np.ix_(idx, idx)]
    try:
        stat = float(b @ np.linalg.solve(V, b))
    except np.linalg.LinAlgError:
        raise CollinearDesign("singular covariance block in the joint test") from None
    df = len(idx)
    return {"stat": stat, "df": df, "p_value": float(stats.chi2.sf(stat, df))}
