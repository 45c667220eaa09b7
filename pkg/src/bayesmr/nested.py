"""Nested sampling with slice-sampling replacements.

The engine follows Skilling's scheme: the worst live point is retired at
every iteration, the prior volume shrinks deterministically by
``exp(-1/n_live)``, and a replacement is drawn uniformly from the region
above the retired likelihood by slice sampling in the unit cube. Slice
directions are differences between random pairs of live points, so their
orientation and length track the shrinking constrained region and chains
can jump between separated modes.

Replacements are generated in batches of ``batch_size`` chains advanced in
lockstep (one vectorised likelihood call per step). A batch is consumed in
order; a candidate is used only if it still beats the current threshold.
``batch_size=1`` gives the plain one-at-a-time algorithm.

Points tied on the same log-likelihood (including ``-inf`` regions) are
retired together with compression factors ``n, n-1, ...`` before being
refilled, so likelihood plateaus do not bias the evidence.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import logsumexp

logger = logging.getLogger(__name__)


class LikelihoodNaNError(ValueError):
    """The log-likelihood returned NaN."""


@dataclass(frozen=True)
class SamplerConfig:
    """Settings for :func:`run`.

    ``n_live`` and ``slice_steps`` default to ``25 * dim`` and ``5 * dim``
    when left as ``None``.
    """

    n_live: Optional[int] = None
    termination_frac: float = 1e-3
    slice_steps: Optional[int] = None
    max_iterations: int = 1_000_000
    rng_seed: Optional[int] = 0
    batch_size: int = 1
    max_slice_evals: int = 100

    def __post_init__(self):
        if not 0.0 < self.termination_frac < 1.0:
            raise ValueError("termination_frac must lie in (0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.slice_steps is not None and self.slice_steps < 1:
            raise ValueError("slice_steps must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")

    def resolve(self, dim: int) -> "SamplerConfig":
        n_live = 25 * dim if self.n_live is None else int(self.n_live)
        if n_live < 2 * dim:
            raise ValueError(f"n_live must be at least 2*dim={2 * dim}, got {n_live}")
        steps = 5 * dim if self.slice_steps is None else int(self.slice_steps)
        return SamplerConfig(n_live, self.termination_frac, steps, self.max_iterations,
                             self.rng_seed, self.batch_size, self.max_slice_evals)

    def to_dict(self) -> dict:
        return {"n_live": self.n_live, "termination_frac": self.termination_frac,
                "slice_steps": self.slice_steps, "max_iterations": self.max_iterations,
                "rng_seed": self.rng_seed, "batch_size": self.batch_size,
                "max_slice_evals": self.max_slice_evals}


@dataclass
class EvidenceResult:
    """Output of one nested-sampling run.

    ``points``, ``logl`` and ``weights`` hold the dead points followed by the
    live points folded in at termination, in nondecreasing ``logl`` order.
    ``weights`` are normalised importance weights.
    """

    log_z: float
    log_z_err: float
    information: float
    points: np.ndarray
    units: np.ndarray
    logl: np.ndarray
    log_vol: np.ndarray
    weights: np.ndarray
    n_like_evals: int
    iterations: int
    converged: bool
    termination: str
    config: dict = field(default_factory=dict)

    @property
    def samples(self) -> list[tuple[np.ndarray, float, float]]:
        return list(zip(self.points, self.logl, self.weights))

    @property
    def ess(self) -> float:
        return float(1.0 / np.sum(self.weights ** 2))

    def diagnostics(self) -> dict:
        return {"termination": self.termination, "converged": self.converged,
                "iterations": self.iterations, "n_like_evals": self.n_like_evals,
                "information": self.information, "n_samples": int(self.logl.size),
                "ess": self.ess}


def _vectorise(fn, vectorized: bool):
    if vectorized:
        return fn
    return lambda pts: np.array([fn(p) for p in pts], dtype=float)


class _Evaluator:
    def __init__(self, loglike, transform, vectorized):
        self.loglike = _vectorise(loglike, vectorized)
        self.transform = _vectorise_transform(transform, vectorized)
        self.count = 0

    def __call__(self, u):
        theta = self.transform(u)
        logl = np.asarray(self.loglike(theta), dtype=float).reshape(len(u))
        self.count += len(u)
        if np.isnan(logl).any():
            bad = int(np.flatnonzero(np.isnan(logl))[0])
            raise LikelihoodNaNError(
                f"log-likelihood returned NaN at parameter point {theta[bad].tolist()} "
                f"(unit-cube point {u[bad].tolist()})")
        return theta, logl


def _vectorise_transform(fn, vectorized):
    if vectorized:
        return lambda u: np.asarray(fn(u), dtype=float)
    return lambda u: np.array([fn(x) for x in u], dtype=float)


def _slice_batch(evaluate, start_u, start_theta, start_logl, logl_star, live_u, n_steps,
                 rng, max_evals):
    """Advance ``K`` slice chains inside ``{logl > logl_star}``.

    Directions are differences of two random live points, which follow the
    shape and scale of the constrained region, including separated modes.

    Each chain runs its own stepping-out and shrinkage state machine; every
    likelihood call evaluates one proposal per unfinished chain, so fast
    chains do not wait for slow ones.
    """
    u = start_u.copy()
    theta = start_theta.copy()
    logl = start_logl.copy()
    K, d = u.shape
    failures = 0

    steps_done = np.zeros(K, dtype=int)
    evals = np.zeros(K, dtype=int)
    shrinking = np.zeros(K, dtype=bool)
    grow_l = np.ones(K, dtype=bool)
    direction = np.empty((K, d))
    left = np.empty(K)
    right = np.empty(K)

    def new_slice(mask):
        m = int(mask.sum())
        n = len(live_u)
        a = rng.integers(0, n, m)
        b = (a + rng.integers(1, n, m)) % n
        dirs = live_u[a] - live_u[b]
        # Duplicate live points give a null direction; fall back to a random one.
        null = ~np.any(dirs != 0.0, axis=1)
        if null.any():
            z = rng.standard_normal((int(null.sum()), d))
            spread = max(float(live_u.std(axis=0).mean()), 1e-12)
            dirs[null] = spread * z / np.linalg.norm(z, axis=1, keepdims=True)
        direction[mask] = dirs
        r = rng.random(m)
        left[mask] = -r
        right[mask] = 1.0 - r
        shrinking[mask] = False
        grow_l[mask] = True
        evals[mask] = 0

    new_slice(np.ones(K, dtype=bool))
    active = steps_done < n_steps
    while active.any():
        idx = np.flatnonzero(active)
        out = ~shrinking[idx]
        t = np.where(grow_l[idx], left[idx], right[idx])
        t_shrink = left[idx] + rng.random(idx.size) * (right[idx] - left[idx])
        t = np.where(out, t, t_shrink)
        pts = u[idx] + t[:, None] * direction[idx]
        # Points outside the unit cube are outside the slice by definition.
        in_cube = np.all((pts > 0.0) & (pts < 1.0), axis=1)
        ok = np.zeros(idx.size, dtype=bool)
        th = ll = None
        if in_cube.any():
            th, ll = evaluate(pts[in_cube])
            ok[in_cube] = ll > logl_star
        evals[idx] += 1

        # Stepping out: extend the end that is still inside, else switch ends.
        o = idx[out]
        ok_o = ok[out]
        from_left = grow_l[o]
        left[o] = np.where(from_left & ok_o, left[o] - 1.0, left[o])
        right[o] = np.where(~from_left & ok_o, right[o] + 1.0, right[o])
        grow_l[o] = from_left & ok_o
        shrinking[o] = ~from_left & ~ok_o

        # Shrinkage: accept, or pull the violated end towards the current point.
        sh = ~out
        acc = sh & ok
        if acc.any():
            full = np.zeros(idx.size, dtype=int)
            full[in_cube] = np.arange(int(in_cube.sum()))
            rows = idx[acc]
            u[rows] = pts[acc]
            theta[rows] = th[full[acc]]
            logl[rows] = ll[full[acc]]
        rej = sh & ~ok
        r_idx = idx[rej]
        left[r_idx] = np.where(t[rej] < 0, t[rej], left[r_idx])
        right[r_idx] = np.where(t[rej] >= 0, t[rej], right[r_idx])

        stuck = evals[idx] >= 2 * max_evals
        failures += int((stuck & ~acc).sum())
        finished = idx[acc | stuck]
        steps_done[finished] += 1
        restart = np.zeros(K, dtype=bool)
        restart[finished] = True
        restart &= steps_done < n_steps
        if restart.any():
            new_slice(restart)
        active = steps_done < n_steps
    return u, theta, logl, failures


def run(loglike: Callable, transform: Callable, dim: int,
        config: SamplerConfig = SamplerConfig(), *, vectorized: bool = False,
        trace_path=None) -> EvidenceResult:
    """Estimate ``log Z = log int L(theta) dpi(theta)`` by nested sampling.

    Parameters
    ----------
    loglike : callable
        Log-likelihood of a parameter point. May return ``-inf``; NaN is an
        error.
    transform : callable
        Map from the unit hypercube to parameter space (the prior quantile
        map).
    dim : int
        Dimension of the unit hypercube.
    config : SamplerConfig
    vectorized : bool
        If true, ``loglike`` and ``transform`` take arrays of shape
        ``(K, dim)`` and return ``(K,)`` and ``(K, dim')`` arrays.
    trace_path : path-like, optional
        Write one JSON record per retired point (iteration, log-likelihood,
        log prior volume, parameter point).

    Returns
    -------
    EvidenceResult
    """
    if dim < 1:
        raise ValueError("dim must be at least 1")
    cfg = config.resolve(dim)
    n = cfg.n_live
    rng = np.random.default_rng(cfg.rng_seed)
    evaluate = _Evaluator(loglike, transform, vectorized)

    live_u = rng.random((n, dim))
    live_theta, live_logl = evaluate(live_u)

    dead_u, dead_theta, dead_logl, dead_logvol = [], [], [], []
    dead_logdvol: list[float] = []
    log_z = -np.inf
    info = 0.0
    log_vol = 0.0
    queue: list[tuple[np.ndarray, np.ndarray, float]] = []
    slice_failures = 0
    termination = "max_iterations"
    iteration = 0

    trace = open(trace_path, "w") if trace_path is not None else None
    try:
        while iteration < cfg.max_iterations:
            if live_logl.max() == live_logl.min() and np.isfinite(live_logl[0]):
                termination = "plateau"
                break
            logl_star = live_logl.min()
            # Tied points form a plateau: retire them together, compressing with
            # n, n-1, ... live points, then refill.
            tied = np.flatnonzero(live_logl == logl_star)
            for k, idx in enumerate(tied):
                n_eff = n - k
                log_dvol = log_vol + math.log(-math.expm1(-1.0 / n_eff))
                log_wt = log_dvol + logl_star
                log_z_new = np.logaddexp(log_z, log_wt)
                if np.isfinite(log_wt):
                    info = (math.exp(log_wt - log_z_new) * logl_star
                            + (math.exp(log_z - log_z_new) * (info + log_z)
                               if np.isfinite(log_z) else 0.0)
                            - log_z_new)
                log_z = log_z_new
                log_vol -= 1.0 / n_eff
                dead_u.append(live_u[idx].copy())
                dead_theta.append(live_theta[idx].copy())
                dead_logl.append(logl_star)
                dead_logvol.append(log_vol)
                dead_logdvol.append(log_dvol)
                if trace is not None:
                    trace.write(json.dumps({"iteration": iteration, "logl": float(logl_star),
                                            "log_vol": log_vol,
                                            "point": live_theta[idx].tolist()}) + "\n")
                iteration += 1

            if (np.isfinite(log_z)
                    and live_logl.max() + log_vol < math.log(cfg.termination_frac) + log_z):
                termination = "converged"
                break

            # Replacement: next queued candidates that beat the threshold.
            pending = list(tied)
            while pending:
                while queue and pending:
                    cu, cth, cl = queue.pop(0)
                    if cl > logl_star:
                        w = pending.pop()
                        live_u[w], live_theta[w], live_logl[w] = cu, cth, cl
                if not pending:
                    break
                others = np.flatnonzero(live_logl > logl_star)
                if others.size == 0:
                    raise ValueError("log-likelihood is -inf on every live point")
                starts = rng.choice(others, size=cfg.batch_size, replace=True)
                bu, bth, bl, fails = _slice_batch(
                    evaluate, live_u[starts], live_theta[starts], live_logl[starts],
                    logl_star, live_u, cfg.slice_steps, rng, cfg.max_slice_evals)
                slice_failures += fails
                queue = [(bu[k], bth[k], bl[k]) for k in range(cfg.batch_size)]
    finally:
        if trace is not None:
            trace.close()

    converged = termination in ("converged", "plateau")
    if not converged:
        logger.warning("nested sampling stopped after %d iterations without converging",
                       iteration)

    # Fold the remaining live points in, each owning an equal share of the volume.
    order = np.argsort(live_logl, kind="stable")
    log_share = log_vol - math.log(n)
    for k in order:
        log_wt = log_share + live_logl[k]
        log_z_new = np.logaddexp(log_z, log_wt)
        if np.isfinite(log_wt):
            info = (math.exp(log_wt - log_z_new) * live_logl[k]
                    + (math.exp(log_z - log_z_new) * (info + log_z)
                       if np.isfinite(log_z) else 0.0)
                    - log_z_new)
        log_z = log_z_new
        dead_u.append(live_u[k].copy())
        dead_theta.append(live_theta[k].copy())
        dead_logl.append(live_logl[k])
        dead_logvol.append(log_vol)
        if trace is not None:
            with open(trace_path, "a") as fh:
                fh.write(json.dumps({"iteration": iteration, "logl": float(live_logl[k]),
                                     "log_vol": log_vol, "point": live_theta[k].tolist(),
                                     "final_live": True}) + "\n")

    logl = np.asarray(dead_logl)
    logvol = np.asarray(dead_logvol)
    # Dead point i owns the shell between its predecessor's volume and its own.
    n_dead = iteration
    log_wts = np.empty_like(logl)
    log_wts[:n_dead] = np.asarray(dead_logdvol) + logl[:n_dead]
    log_wts[n_dead:] = log_share + logl[n_dead:]
    with np.errstate(invalid="ignore"):
        weights = np.exp(log_wts - logsumexp(log_wts)) if np.isfinite(log_z) else \
            np.zeros_like(logl)
    info = max(info, 0.0)

    if slice_failures:
        logger.debug("%d slice steps failed to move", slice_failures)
    return EvidenceResult(
        log_z=float(log_z), log_z_err=math.sqrt(info / n), information=float(info),
        points=np.asarray(dead_theta), units=np.asarray(dead_u), logl=logl,
        log_vol=logvol, weights=weights, n_like_evals=evaluate.count,
        iterations=iteration, converged=converged, termination=termination,
        config=cfg.to_dict())


def equal_weight_resample(result: EvidenceResult, n: int, rng_seed=None) -> np.ndarray:
    """Multinomial resampling of the weighted posterior samples."""
    w = np.asarray(result.weights, dtype=float)
    total = w.sum()
    if not total > 0:
        raise ValueError("all importance weights are zero")
    rng = np.random.default_rng(rng_seed)
    idx = rng.choice(w.size, size=int(n), replace=True, p=w / total)
    return result.points[idx]
