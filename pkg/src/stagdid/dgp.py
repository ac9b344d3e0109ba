"""Synthetic staggered-adoption panels with a known effect surface.

Every Monte Carlo check in the test suite runs against panels produced
here, because the generator knows the true ATT(g,t) table by
construction.  Untreated outcomes follow

    Y_it(0) = b_i + sum_{s<=t} (lam_s + drift_{g_i,s} + c_i * strat_drift)
              + eps_it,

with AR(1) noise eps, and treated outcomes add ``effect_surface(g, e)``
(plus an optional stratum-specific bump and independent treatment
noise).  Trends enter as per-period increments, so a violation placed at
one period moves exactly that period's growth and nothing else.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import InvalidShares
from .panel import NEVER, PanelDataset

__all__ = ["DgpConfig", "simulate", "scenario_config", "SCENARIOS"]


@dataclass(frozen=True)
class DgpConfig:
    """Full description of one synthetic panel design.

    ``group_shares`` maps first-treatment periods (and :data:`NEVER`)
    to population shares; realized counts are deterministic, so two
    draws with the same seed share group assignments exactly.
    ``common_trend`` lists per-period increments ``lam_1..lam_T``;
    ``group_trend_offsets`` adds ``(g, t) -> increment`` deviations used
    to break parallel trends at chosen periods.
    """

    n_units: int
    T: int
    group_shares: Mapping[int, float]
    effect_surface: Callable[[int, int], float] = lambda g, e: 0.0
    base_level_sd: float = 1.0
    common_trend: Sequence[float] | None = None
    group_trend_offsets: Mapping[tuple[int, int], float] = field(
        default_factory=dict
    )
    stratum_share: float = 0.0
    stratum_trend_offset: float = 0.0
    stratum_effect_extra: float = 0.0
    noise_sd: float = 1.0
    noise_rho: float = 0.0
    treatment_noise_sd: float = 0.0
    treatment_noise_corr: float = 0.0
    anticipation: bool = False
    seed: object = 0
    name: str = "custom"

    def with_seed(self, seed) -> "DgpConfig":
        return dataclasses.replace(self, seed=seed)


def _group_counts(shares: Mapping[int, float], n: int) -> dict[int, int]:
    """Deterministic largest-remainder apportionment of n units."""
    items = sorted(shares.items())
    vals = np.array([v for _, v in items], dtype=float)
    if np.any(vals < 0) or abs(vals.sum() - 1.0) > 1e-8:
        raise InvalidShares(
            f"group shares must be nonnegative and sum to 1, got {dict(items)}"
        )
    raw = vals * n
    base = np.floor(raw).astype(int)
    short = n - int(base.sum())
    # hand out the remainder by descending fractional part, group order
    # breaking ties, so the split never depends on dict ordering
    frac_order = sorted(
        range(len(items)), key=lambda i: (-(raw[i] - base[i]), items[i][0])
    )
    for i in frac_order[:short]:
        base[i] += 1
    return {g: int(c) for (g, _), c in zip(items, base)}


def simulate(config: DgpConfig) -> dict:
    """Draw one panel; returns ``{"panel", "truth", "scenario", "config"}``.

    ``truth`` maps each post-treatment ``(g, t)`` cell to its population
    ATT, which equals the effect surface (plus the stratum bump weighted
    by the realized stratum-1 share of the group).
    """
    n, T = config.n_units, config.T
    if T < 2:
        raise ValueError("need at least two periods")
    for g in config.group_shares:
        if g != NEVER and not 2 <= g <= T:
            raise InvalidShares(
                f"first-treatment period {g} outside the sample range 2..{T}"
            )

    counts = _group_counts(config.group_shares, n)
    first_treat = np.concatenate(
        [np.full(c, g, dtype=int) for g, c in sorted(counts.items())]
    )

    stratum = None
    if config.stratum_share > 0:
        stratum = np.zeros(n, dtype=int)
        pos = 0
        for g, c in sorted(counts.items()):
            n1 = int(round(config.stratum_share * c))
            stratum[pos : pos + n1] = 1
            pos += c

    rng = np.random.default_rng(config.seed)
    base = config.base_level_sd * rng.standard_normal(n)

    if config.common_trend is None:
        lam = np.full(T, 0.5)
        lam[0] = 0.0
    else:
        lam = np.asarray(config.common_trend, dtype=float)
        if lam.shape != (T,):
            raise ValueError(f"common_trend must have length T={T}")

    incr = np.tile(lam, (n, 1))
    for (g, t), off in config.group_trend_offsets.items():
        incr[first_treat == g, t - 1] += off
    if stratum is not None and config.stratum_trend_offset:
        incr[stratum == 1, :] += config.stratum_trend_offset

    z = rng.standard_normal((n, T))
    eps = np.empty((n, T))
    eps[:, 0] = config.noise_sd * z[:, 0]
    damp = config.noise_sd * math.sqrt(1.0 - config.noise_rho**2)
    for t in range(1, T):
        eps[:, t] = config.noise_rho * eps[:, t - 1] + damp * z[:, t]

    y0 = base[:, None] + np.cumsum(incr, axis=1) + eps

    ever = first_treat != NEVER
    start_shift = 0 if config.anticipation else 1
    d = np.zeros((n, T), dtype=bool)
    for t in range(1, T + 1):
        d[:, t - 1] = ever & (first_treat <= t + 1 - start_shift)

    effect = np.zeros((n, T))
    for t in range(1, T + 1):
        on = d[:, t - 1]
        if not on.any():
            continue
        for g in np.unique(first_treat[on]):
            m = on & (first_treat == g)
            effect[m, t - 1] = config.effect_surface(int(g), t - int(g) + 1)
    if stratum is not None and config.stratum_effect_extra:
        effect[d & (stratum == 1)[:, None]] += config.stratum_effect_extra

    if config.treatment_noise_sd > 0:
        eta = rng.standard_normal((n, T))
        rho_c = config.treatment_noise_corr
        eta = rho_c * z + math.sqrt(1.0 - rho_c**2) * eta
        treat_noise = config.treatment_noise_sd * eta
    else:
        treat_noise = 0.0

    y = np.where(d, y0 + effect + treat_noise, y0)

    truth: dict[tuple[int, int], float] = {}
    for g in sorted(set(counts) - {NEVER}):
        if counts[g] == 0:
            continue
        bump = 0.0
        if stratum is not None and config.stratum_effect_extra:
            share1 = stratum[first_treat == g].mean()
            bump = config.stratum_effect_extra * float(share1)
        for t in range(g, T + 1):
            truth[(g, t)] = config.effect_surface(g, t - g + 1) + bump

    panel = PanelDataset.from_arrays(y, first_treat, stratum=stratum)
    return {
        "panel": panel,
        "truth": truth,
        "scenario": config.name,
        "config": config,
    }


def _dynamic_effect(g: int, e: int) -> float:
    return float(e)


def _null_effect(g: int, e: int) -> float:
    return 0.0


def _constant_effect(g: int, e: int) -> float:
    return 1.0


def _pitfall_effect(g: int, e: int) -> float:
    # early adopters start positive then decline steeply; late adopters
    # grow modestly -- the static two-way regression mixes these with
    # non-convex weights and lands far from the direct average
    if g == 2:
        return 2.0 - 1.5 * (e - 1)
    return 1.0 + 0.5 * (e - 1)


def _strata_effect(g: int, e: int) -> float:
    return 2.0


SCENARIOS = (
    "null",
    "dynamic",
    "pitfall",
    "early-nonparallel",
    "broken-ny",
    "strata-trends",
)


def scenario_config(name: str, *, n_units: int = 2000, seed=0) -> DgpConfig:
    """Named preset designs used across the simulation checks."""
    shares_34 = {3: 0.35, 4: 0.35, NEVER: 0.30}
    if name == "null":
        return DgpConfig(
            n_units=n_units,
            T=4,
            group_shares=shares_34,
            effect_surface=_null_effect,
            noise_rho=0.3,
            seed=seed,
            name=name,
        )
    if name == "dynamic":
        return DgpConfig(
            n_units=n_units,
            T=4,
            group_shares=shares_34,
            effect_surface=_dynamic_effect,
            noise_rho=0.3,
            seed=seed,
            name=name,
        )
    if name == "pitfall":
        return DgpConfig(
            n_units=n_units,
            T=6,
            group_shares={2: 0.35, 4: 0.35, NEVER: 0.30},
            effect_surface=_pitfall_effect,
            noise_sd=0.5,
            noise_rho=0.3,
            seed=seed,
            name=name,
        )
    if name == "early-nonparallel":
        return DgpConfig(
            n_units=n_units,
            T=4,
            group_shares=shares_34,
            effect_surface=_constant_effect,
            group_trend_offsets={(3, 2): 0.6, (4, 2): -0.6},
            noise_rho=0.3,
            seed=seed,
            name=name,
        )
    if name == "broken-ny":
        return DgpConfig(
            n_units=n_units,
            T=4,
            group_shares=shares_34,
            effect_surface=_null_effect,
            group_trend_offsets={(4, 3): 0.5},
            noise_rho=0.3,
            seed=seed,
            name=name,
        )
    if name == "strata-trends":
        return DgpConfig(
            n_units=n_units,
            T=4,
            group_shares=shares_34,
            effect_surface=_strata_effect,
            stratum_share=0.5,
            stratum_trend_offset=0.5,
            noise_rho=0.3,
            seed=seed,
            name=name,
        )
    raise ValueError(f"unknown scenario {name!r}; choose from {SCENARIOS}")
