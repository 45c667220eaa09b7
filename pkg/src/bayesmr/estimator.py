"""Estimator interface for the two-direction Bayesian MR analysis."""

from __future__ import annotations

import math
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .data_io import stats_from_individual
from .inference import (Direction, fit_direction, model_average, repeated_bayes_factor,
                        result_document)
from .nested import SamplerConfig
from .priors import PriorSpec
from .sem import SufficientStats


class BayesianMR(BaseEstimator):
    """Causal effect and direction between an exposure X and an outcome Y.

    Parameters
    ----------
    tau2, lam : float
        Slab variance and spike-to-slab variance ratio.
    w_gamma, w_alpha, w_beta, w_kappa : float or "hier"
        Slab weights; ``"hier"`` puts a uniform hyperprior on the weight.
    sigma_prior_scale : float or "auto"
    direction : {"both", "forward", "reverse"}
        ``forward`` fits X->Y only and sets its posterior probability to 1.
    prior_odds : float
        Prior odds of X->Y against Y->X.
    n_live, slice_steps, termination_frac, batch_size, random_state
        Nested-sampling settings; None uses the sampler defaults.
    n_draws : int
        Equal-weight posterior draws kept per direction.
    n_repeats : int
        If at least 2, also compute a repeated-runs Bayes-factor interval.

    Attributes
    ----------
    stats_ : SufficientStats
    fit_forward_, fit_reverse_ : DirectionFit or None
    posterior_ : ModelAveragedPosterior
    bayes_factor_ : float
    p_forward_ : float
    """

    def __init__(self, tau2=1.0, lam=0.01, w_gamma="hier", w_alpha="hier", w_beta=0.5,
                 w_kappa=0.5, sigma_prior_scale="auto", direction="both", prior_odds=1.0,
                 n_live=None, slice_steps=None, termination_frac=1e-3, batch_size=64,
                 random_state=0, n_draws=4000, n_repeats=0):
        self.tau2 = tau2
        self.lam = lam
        self.w_gamma = w_gamma
        self.w_alpha = w_alpha
        self.w_beta = w_beta
        self.w_kappa = w_kappa
        self.sigma_prior_scale = sigma_prior_scale
        self.direction = direction
        self.prior_odds = prior_odds
        self.n_live = n_live
        self.slice_steps = slice_steps
        self.termination_frac = termination_frac
        self.batch_size = batch_size
        self.random_state = random_state
        self.n_draws = n_draws
        self.n_repeats = n_repeats

    def prior_spec(self) -> PriorSpec:
        return PriorSpec(tau2=self.tau2, lam=self.lam, w_gamma=self.w_gamma,
                         w_alpha=self.w_alpha, w_beta=self.w_beta, w_kappa=self.w_kappa,
                         sigma_prior_scale=self.sigma_prior_scale)

    def sampler_config(self) -> SamplerConfig:
        return SamplerConfig(n_live=self.n_live, slice_steps=self.slice_steps,
                             termination_frac=self.termination_frac,
                             batch_size=self.batch_size, rng_seed=self.random_state)

    def fit(self, X, y=None):
        """Fit on an ``(N, J+2)`` array with columns ``G_1..G_J, X, Y``."""
        return self.fit_stats(stats_from_individual(X))

    def fit_stats(self, stats: SufficientStats):
        """Fit on precomputed sufficient statistics."""
        if self.direction not in ("both", "forward", "reverse"):
            raise ValueError("direction must be 'both', 'forward' or 'reverse'")
        priors = self.prior_spec()
        config = self.sampler_config()
        self.stats_ = stats
        self.n_features_in_ = stats.J + 2
        fwd = rev = None
        if self.direction in ("both", "forward"):
            fwd = fit_direction(stats, Direction.X_TO_Y, priors, config, self.n_draws)
        if self.direction in ("both", "reverse"):
            rev = fit_direction(stats, Direction.Y_TO_X, priors, config, self.n_draws)
        odds = {"both": self.prior_odds, "forward": math.inf, "reverse": 0.0}[self.direction]
        self.fit_forward_, self.fit_reverse_ = fwd, rev
        self.posterior_ = model_average(fwd, rev, odds)
        self.bayes_factor_ = self.posterior_.bayes_factor
        self.p_forward_ = self.posterior_.p_dir
        self.repeated_ = None
        if self.direction == "both" and self.n_repeats >= 2:
            self.repeated_ = repeated_bayes_factor(stats, priors, config, self.n_repeats)
        return self

    @property
    def converged_(self) -> bool:
        check_is_fitted(self, "posterior_")
        return all(f.converged for f in (self.fit_forward_, self.fit_reverse_) if f is not None)

    def sample_beta(self, direction="X_to_Y") -> np.ndarray:
        """Equal-weight causal-effect draws of one direction's own fit."""
        check_is_fitted(self, "posterior_")
        fit = self.fit_forward_ if Direction(direction) is Direction.X_TO_Y else self.fit_reverse_
        if fit is None:
            raise ValueError(f"direction {direction} was not fitted")
        return fit.beta_samples

    def summary(self, config_echo: Optional[dict] = None) -> dict:
        """Structured result document."""
        check_is_fitted(self, "posterior_")
        echo = {"estimator": self.get_params(), "prior": self.prior_spec().to_config(),
                "sampler": self.sampler_config().to_dict()}
        if config_echo:
            echo.update(config_echo)
        return result_document(self.posterior_, self.fit_forward_, self.fit_reverse_, echo,
                               self.repeated_)
