"""Spike-and-slab priors on the rescaled SEM parameters.

Each structural coefficient gets a zero-mean two-component Gaussian mixture
``w N(0, tau2) + (1 - w) N(0, lam * tau2)``; the slab weight of the
instrument strengths and of the pleiotropic effects may carry a uniform
hyperprior. The noise scales get half-Gaussian priors.

Nested sampling needs the prior as a map from the unit hypercube. The
coordinate order of that map (and of every flat parameter vector in this
package) is::

    [hierarchical weights..., gamma_t (J), alpha_t (J), beta_t,
     kappa_x_t, kappa_y_t, sigma_x, sigma_y]

with the hierarchical weights ordered ``w_gamma`` then ``w_alpha``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields, replace
from typing import Union

import numba
import numpy as np
from scipy import special

from .sem import RescaledParams, SufficientStats

HIER = "hier"
UNIT_EPS = 1e-12
_SQRT2 = math.sqrt(2.0)
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

Weight = Union[float, str]


def _norm_logpdf(x, var):
    return -0.5 * np.square(x) / var - 0.5 * np.log(var) - _LOG_SQRT_2PI


@dataclass(frozen=True)
class MixturePrior:
    """``w N(0, tau2) + (1 - w) N(0, lam tau2)``.

    ``w`` may be the string ``"hier"``, meaning the weight is itself a
    parameter with a Uniform(0, 1) hyperprior; the density methods then need
    the weight passed explicitly.
    """

    w: Weight = 0.5
    tau2: float = 1.0
    lam: float = 0.01

    def __post_init__(self):
        if self.w != HIER and not (0.0 <= float(self.w) <= 1.0):
            raise ValueError(f"mixture weight must be in [0, 1] or 'hier', got {self.w!r}")
        if not self.tau2 > 0:
            raise ValueError("tau2 must be positive")
        if not 0.0 < self.lam <= 1.0:
            raise ValueError("lam must lie in (0, 1]")

    @property
    def hierarchical(self) -> bool:
        return self.w == HIER

    def _weight(self, w):
        if w is None:
            if self.hierarchical:
                raise ValueError("a hierarchical mixture needs an explicit weight")
            return float(self.w)
        return w

    def pdf(self, x, w=None):
        w = self._weight(w)
        v_slab, v_spike = self.tau2, self.lam * self.tau2
        return (w * np.exp(_norm_logpdf(x, v_slab))
                + (1.0 - w) * np.exp(_norm_logpdf(x, v_spike)))

    def logpdf(self, x, w=None):
        w = np.asarray(self._weight(w), dtype=float)
        with np.errstate(divide="ignore"):
            a = np.log(w) + _norm_logpdf(x, self.tau2)
            b = np.log1p(-w) + _norm_logpdf(x, self.lam * self.tau2)
        return np.logaddexp(a, b)

    def cdf(self, x, w=None):
        w = self._weight(w)
        s1 = math.sqrt(self.tau2)
        s2 = math.sqrt(self.lam * self.tau2)
        return w * special.ndtr(x / s1) + (1.0 - w) * special.ndtr(x / s2)

    def ppf(self, u, w=None):
        return mixture_ppf(u, self._weight(w), self.tau2, self.lam)

    def sample(self, rng, size, w=None):
        w = self._weight(w)
        slab = rng.random(size) < w
        sd = np.where(slab, math.sqrt(self.tau2), math.sqrt(self.lam * self.tau2))
        return sd * rng.standard_normal(size)


@numba.njit(cache=True)
def _approx_ndtri_lower(p):
    # Rational approximation for p <= 0.5 (absolute error below 5e-4).
    t = math.sqrt(-2.0 * math.log(p))
    num = 2.515517 + 0.802853 * t + 0.010328 * t * t
    den = 1.0 + 1.432788 * t + 0.189269 * t * t + 0.001308 * t * t * t
    return -(t - num / den)


@numba.njit(cache=True)
def _mixture_ppf_kernel(u, w, s1, s2, max_iter):
    out = np.empty(u.size)
    inv_root2 = 1.0 / math.sqrt(2.0)
    norm = 1.0 / math.sqrt(2.0 * math.pi)
    for i in range(u.size):
        lower = min(u[i], 1.0 - u[i])
        if lower >= 0.5:
            out[i] = 0.0
            continue
        wi = w[i]
        # Start from the nearer of the two single-component quantiles; the
        # root lies left of both, so take the smaller.
        x = 0.0
        if wi > 0.0:
            x = min(x, s1 * _approx_ndtri_lower(min(lower / wi, 0.5)))
        if wi < 1.0:
            x = min(x, s2 * _approx_ndtri_lower(min(lower / (1.0 - wi), 0.5)))
        c1 = wi * norm / s1
        c2 = (1.0 - wi) * norm / s2
        for _ in range(max_iter):
            z1 = x / s1
            z2 = x / s2
            f = (wi * 0.5 * math.erfc(-z1 * inv_root2)
                 + (1.0 - wi) * 0.5 * math.erfc(-z2 * inv_root2) - lower)
            dens = c1 * math.exp(-0.5 * z1 * z1) + c2 * math.exp(-0.5 * z2 * z2)
            if not dens > 0.0:
                break
            step = f / dens
            x = min(x - step, 0.0)
            if not abs(step) > 1e-15 * max(1.0, abs(x)):
                break
        out[i] = x if u[i] <= 0.5 else -x
    return out


def mixture_ppf(u, w, tau2: float, lam: float, max_iter: int = 100):
    """Quantile function of the symmetric two-Gaussian mixture.

    Solved elementwise by Newton's method on the lower half of the
    distribution, where the mixture CDF is convex, so the iterates approach
    the root monotonically after at most one overshoot. Upper-half quantiles
    follow from symmetry.
    """
    u = np.asarray(u, dtype=float)
    w = np.broadcast_to(np.asarray(w, dtype=float), u.shape)
    x = _mixture_ppf_kernel(np.ascontiguousarray(u).ravel(), np.ascontiguousarray(w).ravel(),
                            math.sqrt(tau2), math.sqrt(lam * tau2), max_iter)
    return x.reshape(u.shape) if u.ndim else float(x[0])


@dataclass(frozen=True)
class ScalePrior:
    """Half-Gaussian prior with standard deviation ``scale``."""

    scale: float

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("half-Gaussian scale must be positive")

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            val = (math.log(2.0) + _norm_logpdf(x, self.scale ** 2))
        return np.where(x > 0, val, -np.inf)

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    def ppf(self, u):
        # s * Phi^-1((1 + u)/2), written via the upper tail for accuracy near 1.
        return -self.scale * special.ndtri(0.5 * (1.0 - np.asarray(u, dtype=float)))

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x > 0, special.erf(x / (self.scale * _SQRT2)), 0.0)

    def sample(self, rng, size):
        return self.scale * np.abs(rng.standard_normal(size))


_CONFIG_KEYS = ("tau2", "lambda", "w_gamma", "w_alpha", "w_beta", "w_kappa",
                "sigma_prior_scale")


def _parse_weight(value) -> Weight:
    if isinstance(value, str):
        if value.strip().lower() == HIER:
            return HIER
        value = float(value)
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"weight must be in [0, 1] or 'hier', got {value}")
    return value


@dataclass(frozen=True)
class PriorSpec:
    """Prior configuration shared by both causal directions.

    ``sigma_prior_scale="auto"`` sets each half-Gaussian scale to
    ``sigma_scale_factor`` times the sample standard deviation of the
    corresponding observable; a number fixes both scales.
    """

    tau2: float = 1.0
    lam: float = 0.01
    w_gamma: Weight = HIER
    w_alpha: Weight = HIER
    w_beta: float = 0.5
    w_kappa: float = 0.5
    sigma_prior_scale: Union[float, str] = "auto"
    sigma_scale_factor: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "w_gamma", _parse_weight(self.w_gamma))
        object.__setattr__(self, "w_alpha", _parse_weight(self.w_alpha))
        for name in ("w_beta", "w_kappa"):
            w = _parse_weight(getattr(self, name))
            if w == HIER:
                raise ValueError(f"{name} cannot be hierarchical")
            object.__setattr__(self, name, w)
        if self.sigma_prior_scale != "auto":
            scale = float(self.sigma_prior_scale)
            if not scale > 0:
                raise ValueError("sigma_prior_scale must be positive or 'auto'")
            object.__setattr__(self, "sigma_prior_scale", scale)
        # Validates tau2 and lam.
        MixturePrior(0.5, self.tau2, self.lam)

    def mixture(self, w: Weight) -> MixturePrior:
        return MixturePrior(w, self.tau2, self.lam)

    @property
    def hierarchical_names(self) -> list[str]:
        return [name for name in ("w_gamma", "w_alpha") if getattr(self, name) == HIER]

    def dimension(self, J: int) -> int:
        return 2 * J + 5 + len(self.hierarchical_names)

    def sigma_scales(self, stats: SufficientStats) -> tuple[float, float]:
        if self.sigma_prior_scale == "auto":
            J = stats.J
            sd_x = math.sqrt(stats.cov[J, J])
            sd_y = math.sqrt(stats.cov[J + 1, J + 1])
            if sd_x <= 0 or sd_y <= 0:
                raise ValueError("cannot derive sigma prior scales from zero variance")
            return self.sigma_scale_factor * sd_x, self.sigma_scale_factor * sd_y
        return float(self.sigma_prior_scale), float(self.sigma_prior_scale)

    def bind(self, J: int, sigma_scales: tuple[float, float]) -> "Prior":
        return Prior(self, J, ScalePrior(sigma_scales[0]), ScalePrior(sigma_scales[1]))

    # plain-text config --------------------------------------------------

    def to_config(self) -> dict:
        return {"tau2": self.tau2, "lambda": self.lam, "w_gamma": self.w_gamma,
                "w_alpha": self.w_alpha, "w_beta": self.w_beta, "w_kappa": self.w_kappa,
                "sigma_prior_scale": self.sigma_prior_scale}

    @classmethod
    def from_config(cls, config: dict) -> "PriorSpec":
        unknown = set(config) - set(_CONFIG_KEYS)
        if unknown:
            raise ValueError(f"unknown prior config keys: {sorted(unknown)}")
        kwargs = {("lam" if k == "lambda" else k): v for k, v in config.items()}
        return cls(**kwargs)

    def dumps(self) -> str:
        return json.dumps(self.to_config(), indent=2)

    @classmethod
    def loads(cls, text: str) -> "PriorSpec":
        return cls.from_config(json.loads(text))


class Prior:
    """A :class:`PriorSpec` bound to a variant count and noise-scale priors."""

    def __init__(self, spec: PriorSpec, J: int, sigma_x: ScalePrior, sigma_y: ScalePrior):
        self.spec = spec
        self.J = int(J)
        self.sigma_x = sigma_x
        self.sigma_y = sigma_y
        self.hier_names = spec.hierarchical_names
        self.n_hier = len(self.hier_names)
        self.dim = spec.dimension(self.J)

        J, h = self.J, self.n_hier
        self.sl_gamma = slice(h, h + J)
        self.sl_alpha = slice(h + J, h + 2 * J)
        self.i_beta = h + 2 * J
        self.i_kx = self.i_beta + 1
        self.i_ky = self.i_beta + 2
        self.i_sx = self.i_beta + 3
        self.i_sy = self.i_beta + 4

    def labels(self) -> list[str]:
        return (list(self.hier_names)
                + [f"gamma_t[{j}]" for j in range(self.J)]
                + [f"alpha_t[{j}]" for j in range(self.J)]
                + ["beta_t", "kappa_x_t", "kappa_y_t", "sigma_x", "sigma_y"])

    def _weights(self, theta):
        """Slab weights for gamma and alpha, shape (K,) each."""
        K = theta.shape[0]
        out = {}
        for name in ("w_gamma", "w_alpha"):
            fixed = getattr(self.spec, name)
            if fixed == HIER:
                out[name] = theta[:, self.hier_names.index(name)]
            else:
                out[name] = np.full(K, float(fixed))
        return out["w_gamma"], out["w_alpha"]

    def transform(self, u):
        """Map unit-cube points of shape ``(K, dim)`` (or ``(dim,)``) to
        parameter vectors with the same layout.

        Coordinates are clamped to ``[1e-12, 1 - 1e-12]`` first.
        """
        u = np.asarray(u, dtype=float)
        single = u.ndim == 1
        u = np.clip(np.atleast_2d(u), UNIT_EPS, 1.0 - UNIT_EPS)
        theta = np.empty_like(u)
        h, J = self.n_hier, self.J
        theta[:, :h] = u[:, :h]
        w_g, w_a = self._weights(theta)
        tau2, lam = self.spec.tau2, self.spec.lam
        # All mixture coordinates are contiguous; solve them in one call.
        K = u.shape[0]
        w = np.empty((K, 2 * J + 3))
        w[:, :J] = w_g[:, None]
        w[:, J:2 * J] = w_a[:, None]
        w[:, 2 * J] = self.spec.w_beta
        w[:, 2 * J + 1:] = self.spec.w_kappa
        theta[:, h:h + 2 * J + 3] = mixture_ppf(u[:, h:h + 2 * J + 3], w, tau2, lam)
        theta[:, self.i_sx] = self.sigma_x.ppf(u[:, self.i_sx])
        theta[:, self.i_sy] = self.sigma_y.ppf(u[:, self.i_sy])
        return theta[0] if single else theta

    def cdf(self, theta):
        """Inverse of :meth:`transform` (coordinate-wise conditional CDFs)."""
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        u = np.empty_like(theta)
        h = self.n_hier
        u[:, :h] = theta[:, :h]
        w_g, w_a = self._weights(theta)
        mix = self.spec.mixture(0.5)
        u[:, self.sl_gamma] = mix.cdf(theta[:, self.sl_gamma], w_g[:, None])
        u[:, self.sl_alpha] = mix.cdf(theta[:, self.sl_alpha], w_a[:, None])
        u[:, self.i_beta] = mix.cdf(theta[:, self.i_beta], self.spec.w_beta)
        u[:, self.i_kx:self.i_ky + 1] = mix.cdf(theta[:, self.i_kx:self.i_ky + 1],
                                                self.spec.w_kappa)
        u[:, self.i_sx] = self.sigma_x.cdf(theta[:, self.i_sx])
        u[:, self.i_sy] = self.sigma_y.cdf(theta[:, self.i_sy])
        return u

    def log_density(self, theta):
        """Log prior density of flat parameter vectors, shape ``(K,)``."""
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        h = self.n_hier
        weights = theta[:, :h]
        out = np.where(np.all((weights >= 0) & (weights <= 1), axis=1), 0.0, -np.inf)
        w_g, w_a = self._weights(theta)
        w_g = np.clip(w_g, 0, 1)
        w_a = np.clip(w_a, 0, 1)
        mix = self.spec.mixture(0.5)
        out = out + mix.logpdf(theta[:, self.sl_gamma], w_g[:, None]).sum(axis=1)
        out = out + mix.logpdf(theta[:, self.sl_alpha], w_a[:, None]).sum(axis=1)
        out = out + mix.logpdf(theta[:, self.i_beta], self.spec.w_beta)
        out = out + mix.logpdf(theta[:, self.i_kx:self.i_ky + 1], self.spec.w_kappa).sum(axis=1)
        out = out + self.sigma_x.logpdf(theta[:, self.i_sx])
        out = out + self.sigma_y.logpdf(theta[:, self.i_sy])
        return out

    def sample(self, rng, n: int):
        """Ancestral draws: weights, then component indicators, then values."""
        theta = np.empty((n, self.dim))
        h, J = self.n_hier, self.J
        theta[:, :h] = rng.random((n, h))
        w_g, w_a = self._weights(theta)
        mix = self.spec.mixture(0.5)
        theta[:, self.sl_gamma] = mix.sample(rng, (n, J), w_g[:, None])
        theta[:, self.sl_alpha] = mix.sample(rng, (n, J), w_a[:, None])
        theta[:, self.i_beta] = mix.sample(rng, n, self.spec.w_beta)
        theta[:, self.i_kx:self.i_ky + 1] = mix.sample(rng, (n, 2), self.spec.w_kappa)
        theta[:, self.i_sx] = self.sigma_x.sample(rng, n)
        theta[:, self.i_sy] = self.sigma_y.sample(rng, n)
        return theta

    def pack(self, rescaled: RescaledParams, hyper_weights=()) -> np.ndarray:
        hyper_weights = np.atleast_1d(np.asarray(hyper_weights, dtype=float))
        if hyper_weights.size != self.n_hier:
            raise ValueError(f"expected {self.n_hier} hierarchical weights")
        return np.concatenate([hyper_weights, rescaled.gamma_t, rescaled.alpha_t,
                               [rescaled.beta_t, rescaled.kappa_x_t, rescaled.kappa_y_t,
                                rescaled.sigma_x, rescaled.sigma_y]])

    def unpack(self, theta) -> tuple[RescaledParams, np.ndarray]:
        theta = np.asarray(theta, dtype=float)
        rescaled = RescaledParams(gamma_t=theta[self.sl_gamma], beta_t=theta[self.i_beta],
                                  alpha_t=theta[self.sl_alpha], sigma_x=theta[self.i_sx],
                                  sigma_y=theta[self.i_sy], kappa_x_t=theta[self.i_kx],
                                  kappa_y_t=theta[self.i_ky])
        return rescaled, theta[:self.n_hier].copy()


def log_prior_density(rescaled: RescaledParams, hyper_weights, prior: Prior) -> float:
    theta = prior.pack(rescaled, hyper_weights)
    return float(prior.log_density(theta[None, :])[0])


def prior_transform(u, prior: Prior) -> tuple[RescaledParams, np.ndarray]:
    return prior.unpack(prior.transform(np.asarray(u, dtype=float)))


def sample_prior(prior: Prior, rng_seed=None) -> tuple[RescaledParams, np.ndarray]:
    rng = np.random.default_rng(rng_seed)
    return prior.unpack(prior.sample(rng, 1)[0])
