"""Linear moment systems and closed-form two-step GMM.

Instead of computing each group-time effect from its own pair of sample
means, this module writes down every restriction a parallel-trends
condition implies as one stacked system of affine moments

    g_j(W_i; alpha) = I_j(W_i) * (y_j(W_i) - c_j' alpha)

with I_j a unit indicator, y_j an outcome combination, and c_j a sparse
coefficient row. Two parallel-trends flavors are supported:

``NOT_YET``
    One counterfactual increment delta_s per post period; every group
    still untreated at s (and the never-treated group) contributes a
    moment equating its observed one-period change at s to delta_s.
    Overidentification appears exactly where several comparison groups
    are available for the same step.
``ALL_GROUPS``
    A common trend lambda_t across all groups and all periods; every
    group's pre-treatment changes and the never-treated group's changes
    in all periods identify the same lambda_t, giving many more testable
    restrictions (including about periods before anyone is treated).

Estimation is two linear solves (no optimizer): an identity-weighted first
step, then efficient reweighting by the inverse of the estimated moment
covariance. Surplus restrictions yield the overidentification J statistic,
which is the direct test of the assumed trend condition.

Moment sets frequently contain exact redundancies (the group shares sum to
one; two steps can carry identical comparison sets) which would make the
moment covariance exactly singular. ``build_moments`` removes them by rank
inspection before estimation and records what was dropped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg, stats

from .attgt import AttGtSet, GroupTimeResult
from .errors import (
    JustIdentified,
    NoIdentifiedCells,
    RankDeficientJacobian,
    SingularSigma,
    TooManyMoments,
)
from .inference import cluster_sums
from .panel import PanelDataset

PTAS = ("NOT_YET", "ALL_GROUPS")

_RANK_TOL = 1e-9


@dataclass(frozen=True)
class MomentSpec:
    """One affine moment: indicator * (outcome - coef' alpha)."""

    label: str
    kind: str  # "pre_level" | "post_level" | "share" | "pta"
    indicator: np.ndarray
    outcome: np.ndarray
    coef: dict
    g: int | None = None
    t: int | None = None
    s: int | None = None

    def describe(self) -> dict:
        out = {"label": self.label, "kind": self.kind, "coef": dict(self.coef)}
        for key in ("g", "t", "s"):
            val = getattr(self, key)
            if val is not None:
                out[key] = int(val)
        return out


@dataclass(frozen=True)
class GmmModel:
    """A built moment system: parameters, moments, and identification notes."""

    pta: str
    params: tuple
    moments: tuple
    cells: tuple  # identified post (g, t) cells, sorted
    unidentified: tuple
    removed: tuple
    n_units: int

    @property
    def m(self) -> int:
        return len(self.moments)

    @property
    def p(self) -> int:
        return len(self.params)

    @property
    def df(self) -> int:
        return self.m - self.p

    def param_index(self, name: str) -> int:
        return self.params.index(name)

    def to_dict(self) -> dict:
        return {
            "pta": self.pta,
            "m": self.m,
            "p": self.p,
            "df": self.df,
            "params": list(self.params),
            "moments": [sp.describe() for sp in self.moments],
            "cells": [[int(g), int(t)] for g, t in self.cells],
            "unidentified": [[int(g), int(t)] for g, t in self.unidentified],
            "removed": list(self.removed),
        }


@dataclass(frozen=True)
class GmmFit:
    """Two-step GMM output.

    ``Psi_hat`` is the sample Jacobian of the moment means in the
    parameters (constant in alpha because the system is affine);
    ``Sigma_hat`` is the moment covariance at the first-step estimates and
    is the weighting used both for the second step and for J.
    ``influence_alpha`` holds per-unit influence rows for the parameter
    vector, enabling downstream aggregation and bootstrap.
    """

    model: GmmModel
    alpha_hat: np.ndarray
    Sigma_hat: np.ndarray
    Psi_hat: np.ndarray
    vcov_alpha: np.ndarray
    J: float
    df: int
    p_value: float | None
    cond_sigma: float
    ridge: float
    influence_alpha: np.ndarray
    n_units: int
    n_clusters: int

    def param(self, name: str) -> float:
        return float(self.alpha_hat[self.model.param_index(name)])

    def se(self, name: str) -> float:
        j = self.model.param_index(name)
        return float(np.sqrt(max(self.vcov_alpha[j, j], 0.0)))

    def to_dict(self) -> dict:
        ses = np.sqrt(np.clip(np.diag(self.vcov_alpha), 0.0, None))
        return {
            "pta": self.model.pta,
            "estimates": {
                name: {"estimate": float(v), "se": float(s)}
                for name, v, s in zip(self.model.params, self.alpha_hat, ses)
            },
            "J": float(self.J),
            "df": int(self.df),
            "p_value": None if self.p_value is None else float(self.p_value),
            "cond_sigma": float(self.cond_sigma),
            "ridge": float(self.ridge),
        }


# ---------------------------------------------------------------------------
# building the system
# ---------------------------------------------------------------------------

def build_moments(ds: PanelDataset, pta: str, *, allow_big: bool = False) -> GmmModel:
    """Construct the full moment system for a parallel-trends flavor.

    Post cells (g, t) whose counterfactual cannot be chained to any
    untreated comparison are reported in ``unidentified`` and their
    counterfactual parameters are not created. Exact linear redundancies
    among the constructed moments are removed deterministically (first
    occurrence in canonical order wins) and listed in ``removed``;
    parameters left with no referencing moment are pruned.

    Raises
    ------
    NoIdentifiedCells
        When no post cell is identified under the requested flavor.
    TooManyMoments
        When the (reduced) system has more moments than units, unless
        ``allow_big`` is set; estimating such a system needs a ridge.
    """
    if pta not in PTAS:
        raise ValueError(f"pta must be one of {PTAS}, got {pta!r}")
    groups = ds.groups
    if not groups:
        raise NoIdentifiedCells("panel has no treated group")
    T = ds.T
    has_never = ds.has_never

    if pta == "NOT_YET":
        s_max = T if has_never else max(groups) - 1
        s_lo = min(groups)
        delta_ts = tuple(range(s_lo, s_max + 1))
        t_cap = s_max
        lam_ts = ()
    else:
        lam_set = {t for g in groups for t in range(2, g)}
        if has_never:
            lam_set |= set(range(2, T + 1))
        lam_ts = tuple(sorted(lam_set))
        delta_ts = ()
        t_cap = max(lam_ts) if lam_ts else 1

    cells = [(g, t) for g in groups for t in range(g, T + 1) if t <= t_cap]
    unidentified = [(g, t) for g in groups for t in range(g, T + 1) if t > t_cap]
    if not cells:
        raise NoIdentifiedCells(
            f"no post cell is identified under {pta} on this panel "
            "(no usable untreated comparison periods)"
        )

    # -- parameters, canonical order -------------------------------------
    params = [f"alpha1[{g},{t}]" for (g, t) in cells]
    params += [f"mu[{g}]" for g in groups]
    if pta == "NOT_YET":
        params += [f"delta[{s}]" for s in delta_ts]
    else:
        params += [f"lambda[{t}]" for t in lam_ts]
    params += [f"share[{g}]" for g in groups]
    if has_never:
        params.append("share[never]")

    # -- moments, canonical order -----------------------------------------
    ones = np.ones(ds.n_units)
    never = ds.never_mask.astype(float)
    gmask = {g: ds.group_mask(g).astype(float) for g in groups}
    specs = []

    for g in groups:
        specs.append(MomentSpec(
            label=f"pre[{g}]", kind="pre_level", indicator=gmask[g],
            outcome=ds.y(g - 1), coef={f"mu[{g}]": 1.0}, g=g, t=g - 1,
        ))
    for g, t in cells:
        specs.append(MomentSpec(
            label=f"post[{g},{t}]", kind="post_level", indicator=gmask[g],
            outcome=ds.y(t), coef={f"alpha1[{g},{t}]": 1.0}, g=g, t=t,
        ))
    for g in groups:
        specs.append(MomentSpec(
            label=f"share[{g}]", kind="share", indicator=ones,
            outcome=gmask[g], coef={f"share[{g}]": 1.0}, g=g,
        ))
    if has_never:
        specs.append(MomentSpec(
            label="share[never]", kind="share", indicator=ones,
            outcome=never, coef={"share[never]": 1.0},
        ))

    if pta == "NOT_YET":
        for s in delta_ts:
            for gp in groups:
                if gp > s:
                    specs.append(MomentSpec(
                        label=f"trend[{gp},{s}]", kind="pta",
                        indicator=gmask[gp], outcome=ds.dy(s),
                        coef={f"delta[{s}]": 1.0}, g=gp, t=s, s=s,
                    ))
            if has_never:
                specs.append(MomentSpec(
                    label=f"trend[never,{s}]", kind="pta", indicator=never,
                    outcome=ds.dy(s), coef={f"delta[{s}]": 1.0}, t=s, s=s,
                ))
    else:
        for g in groups:
            for t in range(2, g):
                specs.append(MomentSpec(
                    label=f"trend[{g},{t}]", kind="pta", indicator=gmask[g],
                    outcome=ds.dy(t), coef={f"lambda[{t}]": 1.0}, g=g, t=t,
                ))
        if has_never:
            for t in range(2, T + 1):
                specs.append(MomentSpec(
                    label=f"trend[never,{t}]", kind="pta", indicator=never,
                    outcome=ds.dy(t), coef={f"lambda[{t}]": 1.0}, t=t,
                ))

    kept, removed = _remove_redundant(specs, params)

    # Prune parameters that no surviving moment references.
    referenced = set()
    for sp in kept:
        referenced.update(sp.coef)
    pruned_params = tuple(name for name in params if name in referenced)

    model = GmmModel(
        pta=pta,
        params=pruned_params,
        moments=tuple(kept),
        cells=tuple(sorted(cells)),
        unidentified=tuple(sorted(unidentified)),
        removed=tuple(removed),
        n_units=ds.n_units,
    )
    if model.m > ds.n_units and not allow_big:
        raise TooManyMoments(
            f"{model.m} moments against {ds.n_units} units; the moment covariance "
            "cannot be full rank. Reduce the system or explicitly allow it and "
            "estimate with a positive ridge."
        )
    return model


def _remove_redundant(specs, params):
    """Keep-first scan dropping moments that add no new information.

    A moment is redundant when, as a function of the data and parameters,
    it is an affine combination of already-kept moments (constants carry
    no information, so centering makes them invisible). Each moment maps
    to the vector [centered a_j ; centered I_j (x) c_j] with
    a_j = I_j * y_j; Gram-Schmidt residuals below a relative tolerance mark
    exact combinations. Both blocks are scaled by a common per-block factor
    so the decision is invariant to the outcome scale.
    """
    n = len(specs[0].indicator)
    p_index = {name: j for j, name in enumerate(params)}

    a_cols = []
    i_cols = []
    c_rows = []
    for sp in specs:
        a = sp.indicator * sp.outcome
        a_cols.append(a - a.mean())
        i_cols.append(sp.indicator - sp.indicator.mean())
        c = np.zeros(len(params))
        for name, v in sp.coef.items():
            c[p_index[name]] = v
        c_rows.append(c)

    scale_a = max(float(np.linalg.norm(a)) for a in a_cols) or 1.0
    scale_b = max(
        float(np.linalg.norm(i) * np.linalg.norm(c)) for i, c in zip(i_cols, c_rows)
    ) or 1.0

    basis = []
    kept, removed = [], []
    for sp, a, ic, c in zip(specs, a_cols, i_cols, c_rows):
        v = np.concatenate([a / scale_a, np.outer(ic, c).ravel() / scale_b])
        norm0 = float(np.linalg.norm(v))
        if norm0 == 0.0:
            removed.append(sp.label)
            continue
        # modified Gram-Schmidt with one re-orthogonalization pass
        for _ in range(2):
            for q in basis:
                v = v - (q @ v) * q
        resid = float(np.linalg.norm(v))
        if resid > _RANK_TOL * norm0:
            basis.append(v / resid)
            kept.append(sp)
        else:
            removed.append(sp.label)
    return kept, removed


# ---------------------------------------------------------------------------
# estimation
# ---------------------------------------------------------------------------

def _moment_arrays(model: GmmModel):
    I = np.column_stack([sp.indicator for sp in model.moments])
    A = np.column_stack([sp.indicator * sp.outcome for sp in model.moments])
    C = np.zeros((model.m, model.p))
    for j, sp in enumerate(model.moments):
        for name, v in sp.coef.items():
            C[j, model.param_index(name)] = v
    return I, A, C


def estimate_gmm(model: GmmModel, ds: PanelDataset, *, ridge: float = 0.0) -> GmmFit:
    """Closed-form two-step GMM on a built moment system.

    Step one solves the identity-weighted problem by least squares on the
    weighted moment means. Step two estimates the moment covariance from
    cluster-summed per-unit moment values at the first-step solution and
    reweights. ``ridge`` adds tau * trace(Sigma)/m to the diagonal before
    inversion (off by default; any nonzero value is echoed in the fit).

    Raises
    ------
    RankDeficientJacobian
        When the moment means do not pin down all parameters.
    SingularSigma
        When the (possibly ridged) moment covariance cannot be factorized,
        with its condition number in the message.
    TooManyMoments
        When m exceeds the unit count and no positive ridge was given.
    """
    if model.n_units != ds.n_units:
        raise ValueError("model was built on a different dataset")
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    n = ds.n_units
    if model.m > n and ridge <= 0:
        raise TooManyMoments(
            f"{model.m} moments against {n} units; a positive ridge is required"
        )

    I, A, C = _moment_arrays(model)
    w = ds.weight
    abar = A.T @ w / n
    Bbar = (I.T @ w / n)[:, None] * C  # mean of b_j(W) = mean(I_j) * c_j

    alpha_check, _, rank, _ = np.linalg.lstsq(Bbar, abar, rcond=None)
    if rank < model.p:
        raise RankDeficientJacobian(
            f"moment Jacobian has rank {rank} for {model.p} parameters; "
            "the system does not identify all of them"
        )

    # Moment covariance at the first step, cluster-aggregated.
    G1 = A - I * (C @ alpha_check)[None, :]
    S = cluster_sums(G1, w, ds.cluster_id)
    Sigma = S.T @ S / n
    if ridge > 0:
        Sigma = Sigma + ridge * np.trace(Sigma) / model.m * np.eye(model.m)
    cond = float(np.linalg.cond(Sigma))
    try:
        cho = linalg.cho_factor(Sigma)
    except linalg.LinAlgError:
        raise SingularSigma(
            f"moment covariance is singular (condition number {cond:.3e}); "
            "add a ridge or drop moments"
        ) from None
    if not np.isfinite(cond) or cond > 1e13:
        raise SingularSigma(
            f"moment covariance is numerically singular (condition number {cond:.3e}); "
            "add a ridge or drop moments"
        )

    SinvB = linalg.cho_solve(cho, Bbar)
    Sinva = linalg.cho_solve(cho, abar)
    H = Bbar.T @ SinvB
    try:
        Hinv = np.linalg.inv(H)
    except np.linalg.LinAlgError:
        raise RankDeficientJacobian("weighted Jacobian cross-product is singular") from None
    alpha_hat = Hinv @ (Bbar.T @ Sinva)
    vcov_alpha = (Hinv + Hinv.T) / 2.0 / n

    gbar = abar - Bbar @ alpha_hat
    J = float(n * gbar @ linalg.cho_solve(cho, gbar))
    J = max(J, 0.0)
    df = model.df
    p_value = float(stats.chi2.sf(J, df)) if df > 0 else None

    # Per-unit parameter influence: alpha_hat - alpha ~ mean of H^{-1} B' S^{-1} g_i.
    G2 = A - I * (C @ alpha_hat)[None, :]
    influence_alpha = G2 @ (SinvB @ Hinv)

    return GmmFit(
        model=model,
        alpha_hat=alpha_hat,
        Sigma_hat=Sigma,
        Psi_hat=-Bbar,
        vcov_alpha=vcov_alpha,
        J=J,
        df=df,
        p_value=p_value,
        cond_sigma=cond,
        ridge=float(ridge),
        influence_alpha=influence_alpha,
        n_units=n,
        n_clusters=ds.n_clusters,
    )


def att_from_gmm(fit: GmmFit) -> AttGtSet:
    """Group-time effects as a linear map of the fitted parameters.

    Each cell is the treated level minus the counterfactual chained from
    the group's base level: alpha1 - mu - accumulated increments (delta
    under NOT_YET, lambda under ALL_GROUPS). The returned set carries
    influence columns and covariance in the same conventions as the
    plug-in estimators, so any aggregation accepts it.
    """
    model = fit.model
    k = len(model.cells)
    step = "delta" if model.pta == "NOT_YET" else "lambda"
    A_sel = np.zeros((k, model.p))
    for j, (g, t) in enumerate(model.cells):
        A_sel[j, model.param_index(f"alpha1[{g},{t}]")] = 1.0
        A_sel[j, model.param_index(f"mu[{g}]")] = -1.0
        for s in range(g, t + 1):
            A_sel[j, model.param_index(f"{step}[{s}]")] = -1.0

    estimates = A_sel @ fit.alpha_hat
    cov = A_sel @ fit.vcov_alpha @ A_sel.T
    phi = fit.influence_alpha @ A_sel.T
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))

    results = tuple(
        GroupTimeResult(
            g=g,
            t=t,
            e=t - g + 1,
            estimate=float(estimates[j]),
            influence=phi[:, j],
            comparison=f"stacked moment system ({model.pta})",
            method=f"GMM_{model.pta}",
            se=float(se[j]),
        )
        for j, (g, t) in enumerate(model.cells)
    )
    notes = tuple(
        f"cell ({g},{t}) unidentified under {model.pta}" for g, t in model.unidentified
    )
    return AttGtSet(
        method=f"GMM_{model.pta}",
        results=results,
        covariance=cov,
        n_units=fit.n_units,
        n_clusters=fit.n_clusters,
        warnings=notes,
    )


def j_test(fit: GmmFit) -> dict:
    """Overidentification test: J against chi-squared with df surplus moments."""
    if fit.df <= 0:
        raise JustIdentified(
            "the system is just-identified (df = 0); there is nothing to test"
        )
    return {"J": float(fit.J), "df": int(fit.df), "p_value": float(stats.chi2.sf(fit.J, fit.df))}
