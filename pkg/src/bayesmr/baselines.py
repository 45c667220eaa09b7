"""Classical IV estimators: Wald ratio, IVW and bidirectional MR."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .sem import SufficientStats


class WeakInstrumentError(ValueError):
    """The instrument-exposure association is exactly zero."""


@dataclass(frozen=True)
class RatioEstimate:
    variant: int
    estimate: float
    se: float


def _regression(stats: SufficientStats, j: int, col: int):
    """Slope and OLS standard error of column ``col`` on genotype ``j``."""
    var_g = stats.cov[j, j]
    var_v = stats.cov[col, col]
    c = stats.cov[j, col]
    slope = c / var_g
    n = stats.n_obs
    # Residual variance with N - 2 degrees of freedom (cov uses denominator N).
    resid = max(var_v - c * c / var_g, 0.0) * n / max(n - 2, 1)
    se = math.sqrt(resid / (n * var_g)) if n > 0 else math.inf
    return slope, se


def wald_ratio(stats: SufficientStats, j: int, exposure: str = "X") -> RatioEstimate:
    """Per-variant ratio estimate ``Cov(G_j, outcome) / Cov(G_j, exposure)``.

    Parameters
    ----------
    stats : SufficientStats
    j : int
        Variant index.
    exposure : {"X", "Y"}
        Which phenotype plays the exposure role; the other is the outcome.

    The standard error is the first-order delta method, ignoring the
    covariance between the two regressions.
    """
    if not 0 <= j < stats.J:
        raise IndexError(f"variant index {j} out of range for J={stats.J}")
    if exposure not in ("X", "Y"):
        raise ValueError("exposure must be 'X' or 'Y'")
    ix, iy = stats.J, stats.J + 1
    if exposure == "Y":
        ix, iy = iy, ix
    r_x, se_x = _regression(stats, j, ix)
    r_y, se_y = _regression(stats, j, iy)
    if r_x == 0.0:
        raise WeakInstrumentError(
            f"variant {j} has zero association with the exposure {exposure}")
    est = r_y / r_x
    se = math.sqrt(se_y ** 2 / r_x ** 2 + r_y ** 2 * se_x ** 2 / r_x ** 4)
    return RatioEstimate(variant=j, estimate=est, se=se)


def ivw(estimates: Sequence[RatioEstimate]) -> tuple[float, float]:
    """Inverse-variance weighted combination of ratio estimates."""
    estimates = list(estimates)
    if not estimates:
        raise ValueError("ivw needs at least one estimate")
    if len(estimates) == 1:
        return estimates[0].estimate, estimates[0].se
    se = np.array([e.se for e in estimates], dtype=float)
    est = np.array([e.estimate for e in estimates], dtype=float)
    if not np.all(np.isfinite(se) & (se > 0)):
        raise ValueError("ivw needs finite positive standard errors")
    prec = se ** -2.0
    return float(np.sum(est * prec) / np.sum(prec)), float(np.sum(prec) ** -0.5)


def bidirectional_table(stats: SufficientStats, exposure_variants: Sequence[int],
                        outcome_variants: Sequence[int]) -> dict:
    """Forward and reverse IVW estimates from disjoint instrument sets.

    ``exposure_variants`` instrument X for the X->Y estimate and
    ``outcome_variants`` instrument Y for the Y->X estimate.
    """
    ev, ov = list(exposure_variants), list(outcome_variants)
    if set(ev) & set(ov):
        raise ValueError("exposure and outcome variant sets must be disjoint")
    fwd = ivw([wald_ratio(stats, j, "X") for j in ev])
    rev = ivw([wald_ratio(stats, j, "Y") for j in ov])
    return {"forward": fwd[0], "forward_se": fwd[1], "reverse": rev[0], "reverse_se": rev[1]}


TABLE_COLUMNS = ("delta", "beta_iv_x_to_y", "se_iv_x_to_y", "beta_iv_y_to_x",
                 "se_iv_y_to_x", "p_x_to_y")


def format_table(rows: Sequence[dict], sep: str = "\t") -> str:
    """Delimiter-separated table in the bidirectional-MR column order.

    Each row holds ``forward``, ``forward_se``, ``reverse``, ``reverse_se``
    and optionally ``delta`` and ``p_x_to_y``; missing cells are empty.
    """
    buf = io.StringIO()
    buf.write(sep.join(TABLE_COLUMNS) + "\n")
    keys = ("delta", "forward", "forward_se", "reverse", "reverse_se", "p_x_to_y")
    for row in rows:
        cells = []
        for k in keys:
            v = row.get(k)
            cells.append("" if v is None else f"{v:.6g}")
        buf.write(sep.join(cells) + "\n")
    return buf.getvalue()


class IVWEstimator(BaseEstimator):
    """IVW causal-effect estimate with the estimator interface.

    ``fit`` takes an ``(N, J+2)`` array with columns ``G_1..G_J, X, Y``.
    """

    def __init__(self, variants=None):
        self.variants = variants

    def fit(self, X, y=None):
        from .data_io import stats_from_individual

        stats = stats_from_individual(X)
        variants = range(stats.J) if self.variants is None else self.variants
        self.ratio_estimates_ = [wald_ratio(stats, j) for j in variants]
        self.coef_, self.se_ = ivw(self.ratio_estimates_)
        self.n_features_in_ = stats.J + 2
        return self
