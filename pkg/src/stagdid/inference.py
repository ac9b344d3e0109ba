"""Cluster-robust variance and the multiplier bootstrap.

Everything downstream reports uncertainty through one of two routes built
here. The analytic route linearizes an estimate as a weighted mean of
per-unit influence values and sums those within clusters. The bootstrap
route perturbs the summed cluster scores with mean-zero, variance-one
multipliers, which avoids re-estimating on resampled panels and keeps every
draw a cheap matrix product.

Both routes share one convention. An estimate th with influence column phi
satisfies th_hat - th ~= (1/n) * sum_i w_i * phi_i with weights normalized
to mean one, so the covariance estimator is

    V_hat = (1/n^2) * sum_c (sum_{i in c} w_i phi_i)(sum_{i in c} w_i phi_i)'

and standard errors are sqrt(diag(V_hat)).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import DegenerateColumn

# Interquartile range of the standard normal; turns bootstrap quartile
# spreads into standard-error estimates robust to heavy tails.
_NORMAL_IQR = 1.3489795003921634

# Asymmetric two-point multiplier: values and probability of the low point,
# chosen so the distribution has mean 0, variance 1, and third moment 1.
_MAMMEN_LO = (1.0 - np.sqrt(5.0)) / 2.0
_MAMMEN_HI = (1.0 + np.sqrt(5.0)) / 2.0
_MAMMEN_P_LO = (1.0 + np.sqrt(5.0)) / (2.0 * np.sqrt(5.0))

WEIGHT_LAWS = ("mammen", "rademacher")


def cluster_sums(influences: np.ndarray, weights: np.ndarray, clusters: np.ndarray) -> np.ndarray:
    """Sum weighted influence rows within clusters.

    Parameters
    ----------
    influences : ndarray of shape (n,) or (n, k)
        Per-unit influence values.
    weights : ndarray of shape (n,)
        Mean-one unit weights.
    clusters : ndarray of shape (n,)
        Dense integer cluster codes.

    Returns
    -------
    ndarray of shape (n_clusters, k)
    """
    phi = np.asarray(influences, dtype=float)
    if phi.ndim == 1:
        phi = phi[:, None]
    scores = phi * np.asarray(weights, dtype=float)[:, None]
    clusters = np.asarray(clusters, dtype=int)
    out = np.zeros((int(clusters.max()) + 1, phi.shape[1]))
    np.add.at(out, clusters, scores)
    return out


def clustered_covariance(influences, weights, clusters) -> np.ndarray:
    """Cluster-robust covariance of estimates with the given influence rows.

    Returns a (k, k) matrix; pass a 1-d column for a scalar estimate and
    read off ``V[0, 0]``.
    """
    n = len(weights)
    sums = cluster_sums(influences, weights, clusters)
    return (sums.T @ sums) / (n * n)


def se_from_influence(influences, weights, clusters) -> np.ndarray:
    """Standard errors from influence rows, clipping tiny negatives to 0."""
    V = clustered_covariance(influences, weights, clusters)
    return np.sqrt(np.clip(np.diag(V), 0.0, None))


@dataclass(frozen=True)
class BootstrapResult:
    """Output of :func:`multiplier_bootstrap`.

    Attributes
    ----------
    draws : ndarray of shape (B, k)
        Centered bootstrap deviations for each estimate.
    se : ndarray of shape (k,)
        Robust standard errors: quartile spread of the draws divided by the
        standard normal interquartile range.
    critical_value_sup_t : float
        The ``1 - alpha`` quantile of ``max_j |draw_j| / se_j`` over the
        non-degenerate columns; half-width multiplier for bands that cover
        all coordinates simultaneously.
    alpha : float
    weight_law : str
        "mammen" or "rademacher".
    seed : int
    B : int
    degenerate : ndarray of shape (k,), bool
        Columns with zero bootstrap spread; excluded from the sup-t max and
        flagged with a :class:`DegenerateColumn` warning.
    """

    draws: np.ndarray
    se: np.ndarray
    critical_value_sup_t: float
    alpha: float
    weight_law: str
    seed: int
    B: int
    degenerate: np.ndarray


def multiplier_bootstrap(
    influences: np.ndarray,
    weights: np.ndarray,
    clusters: np.ndarray,
    *,
    B: int = 1000,
    alpha: float = 0.05,
    weight_law: str = "mammen",
    seed: int = 0,
) -> BootstrapResult:
    """Cluster multiplier bootstrap over a vector of estimates.

    Each draw multiplies every cluster's summed score by an independent
    mean-zero variance-one variable and averages:

        deviation_b = (1/n) * sum_c xi_{b,c} * S_c

    Draw ``b`` uses its own generator seeded with ``(seed, b)``, so any
    single draw can be reproduced in isolation and results cannot depend on
    how draws are scheduled or batched.

    Parameters
    ----------
    influences : (n,) or (n, k) per-unit influence values, sample-mean zero.
    B : number of draws; fewer than 200 is refused because the tail
        quantile behind the simultaneous band becomes meaningless.
    weight_law : "mammen" (asymmetric two-point, default) or "rademacher".
    """
    if B < 200:
        raise ValueError(f"B={B} is too small for tail quantiles; use B >= 200")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if weight_law not in WEIGHT_LAWS:
        raise ValueError(f"weight_law must be one of {WEIGHT_LAWS}, got {weight_law!r}")

    n = len(weights)
    S = cluster_sums(influences, weights, clusters)  # (C, k)
    C, k = S.shape

    draws = np.empty((B, k))
    for b in range(B):
        rng = np.random.default_rng([seed, b])
        u = rng.random(C)
        if weight_law == "mammen":
            xi = np.where(u < _MAMMEN_P_LO, _MAMMEN_LO, _MAMMEN_HI)
        else:
            xi = np.where(u < 0.5, -1.0, 1.0)
        draws[b] = (xi @ S) / n

    q25, q75 = np.percentile(draws, [25.0, 75.0], axis=0)
    se = (q75 - q25) / _NORMAL_IQR

    degenerate = se == 0.0
    if degenerate.any():
        warnings.warn(
            f"{int(degenerate.sum())} of {k} bootstrap columns have zero spread; "
            "they are excluded from the simultaneous critical value",
            DegenerateColumn,
            stacklevel=2,
        )
    if degenerate.all():
        crit = float(stats.norm.ppf(1.0 - alpha / 2.0))
    else:
        sup = (np.abs(draws[:, ~degenerate]) / se[~degenerate]).max(axis=1)
        crit = float(np.quantile(sup, 1.0 - alpha))

    return BootstrapResult(
        draws=draws,
        se=se,
        critical_value_sup_t=crit,
        alpha=alpha,
        weight_law=weight_law,
        seed=seed,
        B=B,
        degenerate=degenerate,
    )


@dataclass(frozen=True)
class Bands:
    """Pointwise and simultaneous confidence bands around estimates."""

    estimate: np.ndarray
    se: np.ndarray
    lo_pointwise: np.ndarray
    hi_pointwise: np.ndarray
    lo_simultaneous: np.ndarray
    hi_simultaneous: np.ndarray
    critical_value_sup_t: float
    alpha: float

    @property
    def pointwise_ci(self):
        return self.lo_pointwise, self.hi_pointwise

    @property
    def simultaneous_band(self):
        return self.lo_simultaneous, self.hi_simultaneous


def bands(estimates: np.ndarray, boot: BootstrapResult) -> Bands:
    """Confidence bands from a bootstrap result.

    Pointwise bands use the normal critical value with bootstrap standard
    errors. Simultaneous bands use the sup-t critical value, floored at the
    normal value so they always contain the pointwise bands even when
    simulation noise pushes the raw quantile slightly below it (possible
    only for k = 1, where the two bands agree in population); the raw
    quantile stays available on the bootstrap result.
    """
    estimates = np.asarray(estimates, dtype=float)
    if estimates.shape != boot.se.shape:
        raise ValueError(
            f"got {estimates.shape[0]} estimates for {boot.se.shape[0]} bootstrap columns"
        )
    z = float(stats.norm.ppf(1.0 - boot.alpha / 2.0))
    half_pw = z * boot.se
    half_sim = max(boot.critical_value_sup_t, z) * boot.se
    return Bands(
        estimate=estimates,
        se=boot.se,
        lo_pointwise=estimates - half_pw,
        hi_pointwise=estimates + half_pw,
        lo_simultaneous=estimates - half_sim,
        hi_simultaneous=estimates + half_sim,
        critical_value_sup_t=boot.critical_value_sup_t,
        alpha=boot.alpha,
    )
