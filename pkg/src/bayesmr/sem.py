"""Linear structural equation model for genotype, exposure and outcome.

The generative model is::

    X = gamma' G + kappa_x U + eps_x
    Y = alpha' G + beta X + kappa_y U + eps_y

with ``U ~ N(0, 1)``, ``eps_x ~ N(0, sigma_x^2)``, ``eps_y ~ N(0, sigma_y^2)``
and independent binomial genotypes ``G_j ~ Bin(n, f_j)``. Conditional on the
genotypes, ``(X, Y)`` is bivariate normal, so the likelihood only needs the
second moments of the observed data.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

# Likelihood singularity guard.
DET_FLOOR = 1e-300
COND_CEILING = 1e12


class InvalidParameterError(ValueError):
    """Raised when structural parameters violate their constraints."""


def _as_vector(value, name: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.ndim != 1:
        raise InvalidParameterError(f"{name} must be one-dimensional")
    return arr


@dataclass(frozen=True)
class GenotypeSpec:
    """Effect-allele frequencies and ploidy of the genetic variants."""

    eaf: np.ndarray
    allele_copies: int = 2

    def __post_init__(self):
        eaf = _as_vector(self.eaf, "eaf")
        if eaf.size == 0:
            raise InvalidParameterError("at least one variant is required")
        if not np.all((eaf > 0) & (eaf < 1)):
            raise InvalidParameterError(
                f"effect allele frequencies must lie in (0, 1), got {eaf.tolist()}")
        if int(self.allele_copies) != self.allele_copies or self.allele_copies < 1:
            raise InvalidParameterError("allele_copies must be a positive integer")
        object.__setattr__(self, "eaf", eaf)
        object.__setattr__(self, "allele_copies", int(self.allele_copies))

    @property
    def J(self) -> int:
        return self.eaf.size

    @property
    def mean(self) -> np.ndarray:
        return self.allele_copies * self.eaf

    @property
    def variance(self) -> np.ndarray:
        return self.allele_copies * self.eaf * (1.0 - self.eaf)

    @property
    def sd(self) -> np.ndarray:
        return np.sqrt(self.variance)


@dataclass(frozen=True)
class StructuralParams:
    """SEM coefficients on the original (data) scale."""

    gamma: np.ndarray
    beta: float
    alpha: np.ndarray
    sigma_x: float
    sigma_y: float
    kappa_x: float
    kappa_y: float

    def __post_init__(self):
        gamma = _as_vector(self.gamma, "gamma")
        alpha = _as_vector(self.alpha, "alpha")
        if gamma.shape != alpha.shape:
            raise InvalidParameterError("gamma and alpha must have the same length")
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "alpha", alpha)
        for name in ("beta", "sigma_x", "sigma_y", "kappa_x", "kappa_y"):
            object.__setattr__(self, name, float(getattr(self, name)))
        values = np.concatenate([gamma, alpha, [self.beta, self.sigma_x, self.sigma_y,
                                                self.kappa_x, self.kappa_y]])
        if not np.all(np.isfinite(values)):
            raise InvalidParameterError("structural parameters must be finite")
        if self.sigma_x <= 0 or self.sigma_y <= 0:
            raise InvalidParameterError(
                f"noise scales must be positive, got sigma_x={self.sigma_x}, "
                f"sigma_y={self.sigma_y}")

    @property
    def J(self) -> int:
        return self.gamma.size

    def flip_confounding(self) -> "StructuralParams":
        return StructuralParams(self.gamma, self.beta, self.alpha, self.sigma_x,
                                self.sigma_y, -self.kappa_x, -self.kappa_y)

    def to_dict(self) -> dict:
        return {"gamma": self.gamma.tolist(), "beta": self.beta,
                "alpha": self.alpha.tolist(), "sigma_x": self.sigma_x,
                "sigma_y": self.sigma_y, "kappa_x": self.kappa_x,
                "kappa_y": self.kappa_y}

    @classmethod
    def from_dict(cls, d: dict) -> "StructuralParams":
        return cls(**d)


@dataclass(frozen=True)
class RescaledParams:
    """Dimensionless SEM coefficients.

    The noise scales ``sigma_x`` and ``sigma_y`` stay on the original scale.
    """

    gamma_t: np.ndarray
    beta_t: float
    alpha_t: np.ndarray
    sigma_x: float
    sigma_y: float
    kappa_x_t: float
    kappa_y_t: float

    def __post_init__(self):
        object.__setattr__(self, "gamma_t", _as_vector(self.gamma_t, "gamma_t"))
        object.__setattr__(self, "alpha_t", _as_vector(self.alpha_t, "alpha_t"))
        for name in ("beta_t", "sigma_x", "sigma_y", "kappa_x_t", "kappa_y_t"):
            object.__setattr__(self, name, float(getattr(self, name)))

    @property
    def J(self) -> int:
        return self.gamma_t.size


@dataclass(frozen=True)
class SufficientStats:
    """First and second moments of ``(G_1, ..., G_J, X, Y)`` and sample size.

    ``cov`` uses denominator ``N``. ``meta`` carries provenance such as the
    centering offsets removed from X and Y at ingestion.
    """

    mean: np.ndarray
    cov: np.ndarray
    n_obs: int
    genotype_spec: GenotypeSpec
    meta: dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).ravel()
        cov = np.asarray(self.cov, dtype=float)
        J = self.genotype_spec.J
        if mean.shape != (J + 2,):
            raise ValueError(f"mean must have length J+2={J + 2}, got {mean.shape}")
        if cov.shape != (J + 2, J + 2):
            raise ValueError(f"cov must be {(J + 2, J + 2)}, got {cov.shape}")
        if not np.all(np.isfinite(cov)) or not np.all(np.isfinite(mean)):
            raise ValueError("moments must be finite")
        if not np.allclose(cov, cov.T, rtol=1e-10, atol=1e-12):
            raise ValueError("cov must be symmetric")
        if np.any(np.diag(cov) < 0):
            raise ValueError("cov must have a nonnegative diagonal")
        if int(self.n_obs) != self.n_obs or self.n_obs < 0:
            raise ValueError("n_obs must be a nonnegative integer")
        cov = 0.5 * (cov + cov.T)
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "n_obs", int(self.n_obs))

    @property
    def J(self) -> int:
        return self.genotype_spec.J

    def swap_xy(self) -> "SufficientStats":
        """Return the same moments with the roles of X and Y exchanged."""
        J = self.J
        order = list(range(J)) + [J + 1, J]
        meta = dict(self.meta)
        meta["swapped_xy"] = not self.meta.get("swapped_xy", False)
        return SufficientStats(self.mean[order], self.cov[np.ix_(order, order)],
                               self.n_obs, self.genotype_spec, meta)

    def scale_xy(self, cx: float = 1.0, cy: float = 1.0) -> "SufficientStats":
        """Moments of the data with X multiplied by ``cx`` and Y by ``cy``."""
        scale = np.ones(self.J + 2)
        scale[-2:] = (cx, cy)
        return SufficientStats(self.mean * scale, self.cov * np.outer(scale, scale),
                               self.n_obs, self.genotype_spec, dict(self.meta))

    def permute_variants(self, perm) -> "SufficientStats":
        perm = list(perm)
        order = perm + [self.J, self.J + 1]
        spec = GenotypeSpec(self.genotype_spec.eaf[perm], self.genotype_spec.allele_copies)
        return SufficientStats(self.mean[order], self.cov[np.ix_(order, order)],
                               self.n_obs, spec, dict(self.meta))


def implied_conditional_moments(params: StructuralParams, g) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of ``(X, Y)`` given genotype vector ``g``."""
    g = _as_vector(g, "g")
    if g.shape != params.gamma.shape:
        raise ValueError("genotype vector length does not match the parameters")
    if not np.all(np.isfinite(g)):
        raise ValueError("genotype vector must be finite")
    mu = np.array([params.gamma @ g, (params.alpha + params.gamma * params.beta) @ g])
    return mu, _conditional_cov(params.beta, params.sigma_x, params.sigma_y,
                                params.kappa_x, params.kappa_y)


def _conditional_cov(beta, sigma_x, sigma_y, kappa_x, kappa_y) -> np.ndarray:
    s11 = sigma_x ** 2 + kappa_x ** 2
    s12 = kappa_x * kappa_y + beta * s11
    s22 = sigma_y ** 2 + beta ** 2 * sigma_x ** 2 + (kappa_y + beta * kappa_x) ** 2
    return np.array([[s11, s12], [s12, s22]])


def marginal_moments(params: StructuralParams, spec: GenotypeSpec) -> tuple[np.ndarray, np.ndarray]:
    """Population mean and covariance of ``(G, X, Y)`` implied by the SEM.

    The intercepts of X and Y are zero, so ``E[X] = gamma' E[G]``.
    """
    if params.J != spec.J:
        raise ValueError("parameter and genotype dimensions differ")
    J = spec.J
    var_g = spec.variance
    total = params.alpha + params.beta * params.gamma  # G -> Y through all paths
    sigma = _conditional_cov(params.beta, params.sigma_x, params.sigma_y,
                             params.kappa_x, params.kappa_y)

    loadings = np.vstack([params.gamma, total])  # 2 x J
    cov = np.zeros((J + 2, J + 2))
    cov[:J, :J] = np.diag(var_g)
    cov[:J, J:] = (loadings * var_g).T
    cov[J:, :J] = loadings * var_g
    cov[J:, J:] = (loadings * var_g) @ loadings.T + sigma

    mean = np.concatenate([spec.mean, loadings @ spec.mean])
    return mean, cov


def rescale(params: StructuralParams, spec: GenotypeSpec) -> RescaledParams:
    if params.J != spec.J:
        raise ValueError("parameter and genotype dimensions differ")
    sd_g = spec.sd
    if np.any(sd_g <= 0):
        raise InvalidParameterError("genotype variance must be positive")
    sx, sy = params.sigma_x, params.sigma_y
    return RescaledParams(gamma_t=params.gamma * sd_g / sx,
                          beta_t=params.beta * sx / sy,
                          alpha_t=params.alpha * sd_g / sy,
                          sigma_x=sx, sigma_y=sy,
                          kappa_x_t=params.kappa_x / sx,
                          kappa_y_t=params.kappa_y / sy)


def unrescale(rescaled: RescaledParams, spec: GenotypeSpec) -> StructuralParams:
    if rescaled.J != spec.J:
        raise ValueError("parameter and genotype dimensions differ")
    sd_g = spec.sd
    if np.any(sd_g <= 0):
        raise InvalidParameterError("genotype variance must be positive")
    sx, sy = rescaled.sigma_x, rescaled.sigma_y
    return StructuralParams(gamma=rescaled.gamma_t * sx / sd_g,
                            beta=rescaled.beta_t * sy / sx,
                            alpha=rescaled.alpha_t * sy / sd_g,
                            sigma_x=sx, sigma_y=sy,
                            kappa_x=rescaled.kappa_x_t * sx,
                            kappa_y=rescaled.kappa_y_t * sy)


class CovarianceBlocks:
    """Pre-split covariance blocks used by the batched likelihood.

    The residual second-moment matrix is built from the covariance, i.e. the
    residuals are taken about their sample means. This is the likelihood with
    the X and Y intercepts profiled out, and it makes the result independent
    of whether genotypes or phenotypes were centered at ingestion.
    """

    def __init__(self, stats: SufficientStats):
        J = stats.J
        c = stats.cov
        self.n_obs = stats.n_obs
        self.c_gg = c[:J, :J]
        self.c_gx = c[:J, J]
        self.c_gy = c[:J, J + 1]
        self.v_xx = c[J, J]
        self.v_xy = c[J, J + 1]
        self.v_yy = c[J + 1, J + 1]

    def loglike(self, gamma, beta, alpha, sigma_x, sigma_y, kappa_x, kappa_y):
        """Vectorised log-likelihood.

        ``gamma`` and ``alpha`` have shape ``(K, J)``; the scalars have shape
        ``(K,)``. Returns an array of shape ``(K,)``. Points with a singular
        or ill-conditioned conditional covariance get ``-inf``.
        """
        gamma = np.atleast_2d(gamma)
        alpha = np.atleast_2d(alpha)
        beta = np.atleast_1d(beta)
        if self.n_obs == 0:
            return np.zeros(gamma.shape[0])
        b = alpha + gamma * beta[:, None]
        g_cgg = gamma @ self.c_gg
        s11 = self.v_xx - 2.0 * gamma @ self.c_gx + np.einsum("kj,kj->k", g_cgg, gamma)
        s22 = self.v_yy - 2.0 * b @ self.c_gy + np.einsum("kj,kj->k", b @ self.c_gg, b)
        s12 = (self.v_xy - gamma @ self.c_gy - b @ self.c_gx
               + np.einsum("kj,kj->k", g_cgg, b))

        sx2 = np.square(sigma_x)
        sy2 = np.square(sigma_y)
        a11 = sx2 + np.square(kappa_x)
        a12 = kappa_x * kappa_y + beta * a11
        a22 = sy2 + np.square(beta) * sx2 + np.square(kappa_y + beta * kappa_x)
        # Closed form of a11*a22 - a12^2; beta cancels out.
        det = sx2 * sy2 + sx2 * np.square(kappa_y) + sy2 * np.square(kappa_x)

        half_tr = 0.5 * (a11 + a22)
        disc = np.sqrt(np.maximum(half_tr ** 2 - det, 0.0))
        lam_max = half_tr + disc
        with np.errstate(divide="ignore", invalid="ignore"):
            lam_min = det / lam_max
            bad = ~((det > DET_FLOOR) & (lam_max < COND_CEILING * lam_min))
            trace = (a22 * s11 - 2.0 * a12 * s12 + a11 * s22) / det
            out = -0.5 * self.n_obs * (np.log(det) + trace)
        out = np.where(bad | ~np.isfinite(out), -np.inf, out)
        return out


def log_likelihood(params: StructuralParams, stats: SufficientStats) -> float:
    """Gaussian log-likelihood of the data summarised by ``stats``.

    Returns ``-(N/2) (log det Sigma + tr(Sigma^-1 S))``; the constant
    ``-N log(2 pi)`` is omitted. ``S`` is the residual second-moment matrix
    about the residual means (intercepts profiled out).
    """
    if params.J != stats.J:
        raise ValueError("parameter and data dimensions differ")
    blocks = CovarianceBlocks(stats)
    return float(blocks.loglike(params.gamma[None, :], np.array([params.beta]),
                                params.alpha[None, :], np.array([params.sigma_x]),
                                np.array([params.sigma_y]), np.array([params.kappa_x]),
                                np.array([params.kappa_y]))[0])
