"""Evidence for both causal directions and Bayesian model averaging."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Sequence

import numpy as np
from scipy import special, stats as sps

from . import __version__
from .nested import EvidenceResult, SamplerConfig, equal_weight_resample, run
from .priors import Prior, PriorSpec
from .sem import CovarianceBlocks, SufficientStats

logger = logging.getLogger(__name__)

RESULT_SCHEMA = "bayesmr.result"
RESULT_VERSION = 1
QUANTILES = (0.025, 0.25, 0.5, 0.75, 0.975)
# Replacement chains advanced together; one likelihood call serves the batch.
DEFAULT_SAMPLER = SamplerConfig(batch_size=64)


class Direction(str, Enum):
    X_TO_Y = "X_to_Y"
    Y_TO_X = "Y_to_X"

    @property
    def other(self) -> "Direction":
        return Direction.Y_TO_X if self is Direction.X_TO_Y else Direction.X_TO_Y


class MRModel:
    """Likelihood and prior of the SEM for one causal ordering.

    The exposure is column ``J`` of ``stats`` and the outcome column ``J+1``.
    Both callables work on batches of flat parameter vectors laid out as in
    :mod:`bayesmr.priors`.
    """

    def __init__(self, stats: SufficientStats, prior_spec: PriorSpec):
        self.stats = stats
        self.prior_spec = prior_spec
        self.prior: Prior = prior_spec.bind(stats.J, prior_spec.sigma_scales(stats))
        self.blocks = CovarianceBlocks(stats)
        self.sd_g = stats.genotype_spec.sd

    @property
    def dim(self) -> int:
        return self.prior.dim

    def transform(self, u):
        # The model is invariant under (kappa_x, kappa_y) -> (-kappa_x, -kappa_y)
        # and so is the prior, so sampling kappa_x >= 0 leaves the evidence
        # unchanged and removes one mirror mode.
        u = np.array(u, dtype=float, copy=True)
        if u.ndim == 1:
            u[self.prior.i_kx] = 0.5 + 0.5 * u[self.prior.i_kx]
        else:
            u[:, self.prior.i_kx] = 0.5 + 0.5 * u[:, self.prior.i_kx]
        return self.prior.transform(u)

    def unfold(self, theta, rng) -> np.ndarray:
        """Restore the confounding sign symmetry with random joint sign flips."""
        theta = np.array(theta, dtype=float, copy=True)
        flip = rng.random(len(theta)) < 0.5
        theta[flip, self.prior.i_kx] *= -1.0
        theta[flip, self.prior.i_ky] *= -1.0
        return theta

    def to_original(self, theta) -> dict[str, np.ndarray]:
        """Undo the rescaling for a batch of flat parameter vectors."""
        theta = np.atleast_2d(theta)
        p = self.prior
        sx = theta[:, p.i_sx]
        sy = theta[:, p.i_sy]
        return {
            "gamma": theta[:, p.sl_gamma] * (sx[:, None] / self.sd_g),
            "alpha": theta[:, p.sl_alpha] * (sy[:, None] / self.sd_g),
            "beta": theta[:, p.i_beta] * sy / sx,
            "sigma_x": sx,
            "sigma_y": sy,
            "kappa_x": theta[:, p.i_kx] * sx,
            "kappa_y": theta[:, p.i_ky] * sy,
        }

    def loglike(self, theta):
        o = self.to_original(theta)
        return self.blocks.loglike(o["gamma"], o["beta"], o["alpha"], o["sigma_x"],
                                   o["sigma_y"], o["kappa_x"], o["kappa_y"])


@dataclass
class DirectionFit:
    """Posterior for one causal ordering.

    ``beta_samples`` are equal-weight draws of the causal effect on the
    original scale of the direction's own exposure and outcome.
    ``parameter_samples`` holds the matching equal-weight draws of every
    parameter, rescaled (flat vectors) and original scale (dict).
    """

    direction: Direction
    evidence: EvidenceResult
    beta_samples: np.ndarray
    parameter_samples: dict
    beta_weighted: tuple[np.ndarray, np.ndarray]
    labels: list[str]
    prior_spec: PriorSpec
    sigma_scales: tuple[float, float]

    @property
    def log_z(self) -> float:
        return self.evidence.log_z

    @property
    def converged(self) -> bool:
        return self.evidence.converged


def fit_direction(stats: SufficientStats, direction=Direction.X_TO_Y,
                  priors: PriorSpec = PriorSpec(), config: SamplerConfig = DEFAULT_SAMPLER,
                  n_draws: int = 4000) -> DirectionFit:
    """Run nested sampling for one causal direction.

    For ``Y_to_X`` the X and Y rows and columns of ``stats`` are swapped and
    the same model is fitted.
    """
    direction = Direction(direction)
    s = stats if direction is Direction.X_TO_Y else stats.swap_xy()
    model = MRModel(s, priors)
    result = run(model.loglike, model.transform, model.dim, config, vectorized=True)
    if not result.converged:
        logger.warning("%s fit did not converge: %s", direction.value, result.termination)

    seed = None if config.rng_seed is None else config.rng_seed + 7919
    draws = model.unfold(equal_weight_resample(result, n_draws, seed),
                         np.random.default_rng(seed))
    original = model.to_original(draws)
    beta_all = model.to_original(result.points)["beta"]
    return DirectionFit(
        direction=direction, evidence=result, beta_samples=original["beta"],
        parameter_samples={"rescaled": draws, "original": original},
        beta_weighted=(beta_all, result.weights), labels=model.prior.labels(),
        prior_spec=priors,
        sigma_scales=(model.prior.sigma_x.scale, model.prior.sigma_y.scale))


@dataclass
class CombinedPosterior:
    """Model-averaged causal-effect posterior: continuous part plus an atom.

    The atom is an explicit ``(weight, location)`` record, not a set of
    jittered samples.
    """

    samples: np.ndarray
    continuous_weight: float
    atom_weight: float
    atom_location: float = 0.0

    def _support(self):
        n = len(self.samples)
        values = np.append(np.asarray(self.samples, dtype=float), self.atom_location)
        weights = np.append(np.full(n, self.continuous_weight / n if n else 0.0),
                            self.atom_weight)
        order = np.argsort(values, kind="stable")
        return values[order], weights[order]

    def cdf(self, x) -> float:
        values, weights = self._support()
        return float(weights[values <= x].sum())

    def quantile(self, q) -> np.ndarray:
        values, weights = self._support()
        cum = np.cumsum(weights)
        idx = np.searchsorted(cum, np.asarray(q) * cum[-1], side="left")
        return values[np.minimum(idx, len(values) - 1)]

    def mass_in(self, lo: float, hi: float) -> float:
        """Total mass (continuous plus atom) in ``[lo, hi]``."""
        s = np.asarray(self.samples)
        cont = np.mean((s >= lo) & (s <= hi)) if s.size else 0.0
        atom = self.atom_weight if lo <= self.atom_location <= hi else 0.0
        return float(self.continuous_weight * cont + atom)

    def continuous_mass_in(self, lo: float, hi: float) -> float:
        """Share of the continuous part alone that lies in ``[lo, hi]``."""
        s = np.asarray(self.samples)
        return float(np.mean((s >= lo) & (s <= hi))) if s.size else 0.0


@dataclass
class ModelAveragedPosterior:
    p_dir: float
    p_rev: float
    log_bf: float
    bf_interval: tuple[float, float]
    prior_odds: float
    forward: CombinedPosterior
    reverse: CombinedPosterior

    @property
    def bayes_factor(self) -> float:
        if not np.isfinite(self.log_bf):
            return float("nan")
        with np.errstate(over="ignore"):
            return float(np.exp(self.log_bf))


def _model_probabilities(log_odds: float) -> tuple[float, float]:
    # Derive the smaller probability from the larger so the pair sums to 1 exactly.
    if log_odds >= 0:
        p_dir = float(special.expit(log_odds))
        return p_dir, 1.0 - p_dir
    p_rev = float(special.expit(-log_odds))
    return 1.0 - p_rev, p_rev


def bf_interval(evidence_dir: EvidenceResult, evidence_rev: EvidenceResult,
                level: float = 0.95) -> tuple[float, float]:
    """Bayes-factor interval from the information-based log-evidence errors.

    ``log BF`` is treated as Gaussian with variance
    ``err_dir**2 + err_rev**2``.
    """
    log_bf = evidence_dir.log_z - evidence_rev.log_z
    sd = math.hypot(evidence_dir.log_z_err, evidence_rev.log_z_err)
    z = sps.norm.ppf(0.5 + level / 2.0)
    with np.errstate(over="ignore"):
        return float(np.exp(log_bf - z * sd)), float(np.exp(log_bf + z * sd))


def bf_interval_from_runs(log_bfs: Sequence[float], level: float = 0.95) -> tuple[float, float]:
    """Empirical-quantile Bayes-factor interval from independent runs."""
    log_bfs = np.asarray(log_bfs, dtype=float)
    if log_bfs.size < 2:
        raise ValueError("need at least two runs for an empirical interval")
    lo, hi = np.quantile(log_bfs, [0.5 - level / 2.0, 0.5 + level / 2.0])
    with np.errstate(over="ignore"):
        return float(np.exp(lo)), float(np.exp(hi))


def repeated_bayes_factor(stats: SufficientStats, priors: PriorSpec = PriorSpec(),
                          config: SamplerConfig = DEFAULT_SAMPLER, n_runs: int = 5,
                          level: float = 0.95) -> dict:
    """Fit both directions ``n_runs`` times with consecutive seeds."""
    base = 0 if config.rng_seed is None else config.rng_seed
    log_bfs = []
    for k in range(n_runs):
        cfg = replace(config, rng_seed=base + 1000 * (k + 1))
        fwd = fit_direction(stats, Direction.X_TO_Y, priors, cfg, n_draws=10)
        rev = fit_direction(stats, Direction.Y_TO_X, priors, cfg, n_draws=10)
        log_bfs.append(fwd.log_z - rev.log_z)
    low, high = bf_interval_from_runs(log_bfs, level)
    return {"method": "repeated_runs", "level": level, "log_bfs": log_bfs,
            "interval": [low, high], "seeds": [base + 1000 * (k + 1) for k in range(n_runs)]}


def model_average(fit_dir: DirectionFit, fit_rev: Optional[DirectionFit],
                  prior_odds: float = 1.0, level: float = 0.95) -> ModelAveragedPosterior:
    """Combine the two direction fits.

    ``prior_odds = inf`` is the forward-only analysis: ``p_dir = 1`` and the
    reverse fit may be omitted. ``prior_odds = 0`` is the mirror case.
    """
    if not prior_odds >= 0:
        raise ValueError("prior odds must be nonnegative")
    for fit in (fit_dir, fit_rev):
        if fit is not None and not fit.converged:
            logger.warning("averaging over a non-converged %s fit", fit.direction.value)

    if fit_dir is not None and fit_rev is not None:
        log_bf = fit_dir.log_z - fit_rev.log_z
        interval = bf_interval(fit_dir.evidence, fit_rev.evidence, level)
    else:
        log_bf = float("nan")
        interval = (float("nan"), float("nan"))

    if math.isinf(prior_odds):
        p_dir, p_rev = 1.0, 0.0
    elif prior_odds == 0:
        p_dir, p_rev = 0.0, 1.0
    else:
        if fit_dir is None or fit_rev is None:
            raise ValueError("both fits are required unless one model has prior probability 1")
        p_dir, p_rev = _model_probabilities(log_bf + math.log(prior_odds))

    empty = np.empty(0)
    fwd_samples = fit_dir.beta_samples if fit_dir is not None else empty
    rev_samples = fit_rev.beta_samples if fit_rev is not None else empty
    return ModelAveragedPosterior(
        p_dir=p_dir, p_rev=p_rev, log_bf=log_bf, bf_interval=interval,
        prior_odds=float(prior_odds),
        forward=CombinedPosterior(fwd_samples, p_dir, p_rev),
        reverse=CombinedPosterior(rev_samples, p_rev, p_dir))


def _quantiles(x) -> dict:
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return {}
    return {f"{q:g}": float(v) for q, v in zip(QUANTILES, np.quantile(x, QUANTILES))}


def _fit_section(fit: Optional[DirectionFit]) -> Optional[dict]:
    if fit is None:
        return None
    alpha = fit.parameter_samples["original"]["alpha"]
    return {
        "log_z": fit.evidence.log_z,
        "log_z_err": fit.evidence.log_z_err,
        "beta_quantiles": _quantiles(fit.beta_samples),
        "alpha_quantiles": [_quantiles(alpha[:, j]) for j in range(alpha.shape[1])],
        "sigma_prior_scales": list(fit.sigma_scales),
        "diagnostics": fit.evidence.diagnostics(),
    }


def result_document(posterior: ModelAveragedPosterior, fit_dir: Optional[DirectionFit],
                    fit_rev: Optional[DirectionFit], config_echo: dict,
                    repeated: Optional[dict] = None) -> dict:
    """Structured, schema-versioned summary of an analysis."""
    bf = {
        "value": posterior.bayes_factor if np.isfinite(posterior.log_bf) else None,
        "log": posterior.log_bf if np.isfinite(posterior.log_bf) else None,
        "interval_information": (list(posterior.bf_interval)
                                 if np.isfinite(posterior.log_bf) else None),
        "interval_repeated_runs": repeated,
    }
    return {
        "schema": RESULT_SCHEMA,
        "version": RESULT_VERSION,
        "package_version": __version__,
        "directions": {"X_to_Y": _fit_section(fit_dir), "Y_to_X": _fit_section(fit_rev)},
        "bayes_factor": bf,
        "prior_odds": posterior.prior_odds if math.isfinite(posterior.prior_odds) else "inf",
        "p_dir": posterior.p_dir,
        "p_rev": posterior.p_rev,
        "combined": {
            "X_to_Y": {"atom_weight": posterior.forward.atom_weight, "atom_location": 0.0,
                       "continuous_weight": posterior.forward.continuous_weight,
                       "quantiles": {f"{q:g}": float(posterior.forward.quantile(q))
                                     for q in QUANTILES}},
            "Y_to_X": {"atom_weight": posterior.reverse.atom_weight, "atom_location": 0.0,
                       "continuous_weight": posterior.reverse.continuous_weight,
                       "quantiles": {f"{q:g}": float(posterior.reverse.quantile(q))
                                     for q in QUANTILES}},
        },
        "converged": all(f.converged for f in (fit_dir, fit_rev) if f is not None),
        "config": config_echo,
    }
