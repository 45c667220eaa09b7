"""Seeded synthetic data from the structural equation model and its variants."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional

import numpy as np

from .priors import MixturePrior
from .sem import GenotypeSpec, StructuralParams

KINDS = ("custom", "iv_example", "near_lcd", "pleiotropy_robustness", "bidirectional",
         "nonlinear_tanh", "t_noise")
EAF_CLAMP = (0.01, 0.99)


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class Scenario:
    """Full description of one synthetic dataset.

    Parameters are fixed through ``params`` (a :class:`StructuralParams`
    dictionary) or, when ``params`` is None, drawn per dataset:
    ``gamma ~ N(0, gamma_sd^2)``, ``alpha ~ N(0, alpha_sd^2)`` on the invalid
    variants, ``sigma ~ |N(0, sigma_scale^2)|`` and ``beta`` fixed.
    Confounding follows the fitted model's prior on its rescaled form,
    ``kappa = sigma * k`` with
    ``k ~ kappa_w N(0, kappa_tau2) + (1 - kappa_w) N(0, kappa_lam kappa_tau2)``.
    Allele frequencies are fixed through ``eaf`` or drawn from
    ``Uniform(*eaf_range)``.

    ``grid`` lists the values of the kind's knob (valid_fraction, delta, A
    or nu) used by the corresponding experiment sweep.
    """

    kind: str = "custom"
    J: int = 1
    N: int = 10000
    eaf: Optional[tuple] = None
    eaf_range: tuple = (0.05, 0.95)
    allele_copies: int = 2
    params: Optional[dict] = None
    beta: float = 1.0
    gamma_sd: float = 0.1
    alpha_sd: float = 0.1
    sigma_scale: float = 1.0
    kappa_w: float = 0.5
    kappa_tau2: float = 1.0
    kappa_lam: float = 0.01
    valid_fraction: float = 1.0
    delta: float = 0.0
    A: Optional[float] = None
    nu: Optional[float] = None
    rng_seed: int = 0
    grid: tuple = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown scenario kind {self.kind!r}; expected one of {KINDS}")
        if self.N < 1 or int(self.N) != self.N:
            raise ValueError("N must be a positive integer")
        if self.J < 1:
            raise ValueError("J must be at least 1")
        if not 0.0 <= self.valid_fraction <= 1.0:
            raise ValueError("valid_fraction must lie in [0, 1]")
        if self.kind == "nonlinear_tanh" and not (self.A is not None and self.A > 0):
            raise ValueError("nonlinear_tanh needs A > 0")
        if self.kind == "t_noise" and not (self.nu is not None and self.nu >= 1):
            raise ValueError("t_noise needs nu >= 1")
        if self.kind == "bidirectional" and self.J != 2:
            raise ValueError("bidirectional scenarios have exactly two variants")
        if self.eaf is not None:
            object.__setattr__(self, "eaf", tuple(float(f) for f in self.eaf))
            if len(self.eaf) != self.J:
                raise ValueError("eaf length must equal J")
        lo, hi = self.eaf_range
        if not 0 < lo < hi < 1:
            raise ValueError("eaf_range must satisfy 0 < lo < hi < 1")
        object.__setattr__(self, "eaf_range", (float(lo), float(hi)))
        object.__setattr__(self, "grid", tuple(self.grid))
        MixturePrior(self.kappa_w, self.kappa_tau2, self.kappa_lam)  # validate
        if self.params is not None:
            StructuralParams.from_dict(self.params)  # validate

    def with_(self, **changes) -> "Scenario":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["eaf_range"] = list(self.eaf_range)
        d["grid"] = list(self.grid)
        if self.eaf is not None:
            d["eaf"] = list(self.eaf)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown scenario field(s): {sorted(unknown)}")
        d = dict(d)
        for key in ("eaf_range", "grid", "eaf"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class GroundTruth:
    params: StructuralParams
    eaf: np.ndarray
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"params": self.params.to_dict(), "eaf": self.eaf.tolist(),
                "extra": self.extra}


def _draw_truth(s: Scenario, rng: np.random.Generator) -> GroundTruth:
    if s.eaf is not None:
        eaf = np.array(s.eaf)
    else:
        eaf = np.clip(rng.uniform(*s.eaf_range, size=s.J), *EAF_CLAMP)
    extra = {}
    if s.params is not None:
        params = StructuralParams.from_dict(s.params)
        if params.J != s.J:
            raise ValueError("params dimension does not match J")
    else:
        gamma = rng.normal(0.0, s.gamma_sd, size=s.J)
        n_invalid = round_half_up(s.J * (1.0 - s.valid_fraction))
        invalid = np.sort(rng.choice(s.J, size=n_invalid, replace=False))
        alpha = np.zeros(s.J)
        alpha[invalid] = rng.normal(0.0, s.alpha_sd, size=n_invalid)
        sigma_x, sigma_y = np.abs(rng.normal(0.0, s.sigma_scale, size=2))
        k = MixturePrior(s.kappa_w, s.kappa_tau2, s.kappa_lam).sample(rng, 2)
        kappa_x, kappa_y = k[0] * sigma_x, k[1] * sigma_y
        params = StructuralParams(gamma, s.beta, alpha, sigma_x, sigma_y, kappa_x, kappa_y)
        extra["invalid_variants"] = invalid.tolist()
    if s.kind == "bidirectional":
        extra["delta"] = s.delta
    if s.A is not None:
        extra["A"] = s.A
    if s.nu is not None:
        extra["nu"] = s.nu
    return GroundTruth(params, eaf, extra)


def generate(s: Scenario) -> tuple[np.ndarray, GroundTruth]:
    """Simulate ``N`` rows ``(G_1..G_J, X, Y)``.

    ``nonlinear_tanh`` replaces ``beta * X`` in the outcome equation with
    ``A * tanh(beta * X / A)``; ``t_noise`` draws the outcome noise as
    ``sigma_y * t_nu`` without variance matching.
    """
    rng = np.random.default_rng(s.rng_seed)
    truth = _draw_truth(s, rng)
    p = truth.params
    G = rng.binomial(s.allele_copies, truth.eaf, size=(s.N, s.J)).astype(float)
    U = rng.standard_normal(s.N)
    eps_x = p.sigma_x * rng.standard_normal(s.N)
    if s.kind == "t_noise":
        eps_y = p.sigma_y * rng.standard_t(s.nu, size=s.N)
    else:
        eps_y = p.sigma_y * rng.standard_normal(s.N)
    X = G @ p.gamma + p.kappa_x * U + eps_x
    if s.kind == "nonlinear_tanh":
        causal = s.A * np.tanh(p.beta * X / s.A)
    else:
        causal = p.beta * X
    Y = G @ p.alpha + causal + p.kappa_y * U + eps_y
    return np.column_stack([G, X, Y]), truth


def bidirectional_params(delta: float) -> StructuralParams:
    """Two-variant model where G1 instruments X and G2 instruments Y.

    Both phenotypes carry a pleiotropic effect ``delta`` from the other
    phenotype's instrument.
    """
    return StructuralParams(gamma=[1.0, delta], beta=1.0, alpha=[delta, 1.0], sigma_x=1.0,
                            sigma_y=1.0, kappa_x=1.0, kappa_y=1.0)


_IV = dict(gamma=[1.0], beta=1.0, alpha=[0.0], sigma_x=1.0, sigma_y=1.0, kappa_x=1.0,
           kappa_y=1.0)
_NEAR_LCD = dict(gamma=[1.0], beta=1.0, alpha=[0.1], sigma_x=1.0, sigma_y=1.0,
                 kappa_x=0.1, kappa_y=0.1)

PRESETS = ("iv_example", "near_lcd", "pleiotropy_robustness", "bidirectional",
           "nonlinear_tanh", "t_noise")


def preset(name: str, **overrides) -> Scenario:
    """Scenario for one of the published experiments.

    Keyword overrides replace scenario fields; for ``bidirectional`` a
    ``delta`` override also updates the structural parameters.
    """
    if name == "iv_example":
        s = Scenario(kind="iv_example", J=1, N=10000, eaf=(0.3,), params=_IV)
    elif name == "near_lcd":
        s = Scenario(kind="near_lcd", J=1, N=10000, eaf=(0.3,), params=_NEAR_LCD)
    elif name == "pleiotropy_robustness":
        s = Scenario(kind="pleiotropy_robustness", J=25, N=10000, beta=1.0, gamma_sd=0.1,
                     alpha_sd=0.1, sigma_scale=1.0, valid_fraction=1.0,
                     grid=(1.0, 0.8, 0.6, 0.4, 0.2, 0.0))
    elif name == "bidirectional":
        delta = overrides.get("delta", 0.0)
        s = Scenario(kind="bidirectional", J=2, N=10000, eaf=(0.3, 0.3), delta=delta,
                     params=bidirectional_params(delta).to_dict(),
                     grid=tuple(round(-0.5 + 0.1 * k, 10) for k in range(11)))
    elif name == "nonlinear_tanh":
        s = Scenario(kind="nonlinear_tanh", J=1, N=10000, eaf=(0.3,), params=_NEAR_LCD,
                     A=1.0, grid=(0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0))
    elif name == "t_noise":
        s = Scenario(kind="t_noise", J=1, N=10000, eaf=(0.3,), params=_NEAR_LCD, nu=8.0,
                     grid=(1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0))
    else:
        raise ValueError(f"unknown preset {name!r}; expected one of {PRESETS}")
    if name == "bidirectional" and "delta" in overrides:
        overrides = dict(overrides)
        overrides["params"] = bidirectional_params(overrides["delta"]).to_dict()
    return replace(s, **overrides) if overrides else s
