import json

import numpy as np
import pytest
from scipy import special, stats

from bayesmr.nested import (EvidenceResult, LikelihoodNaNError, SamplerConfig,
                            equal_weight_resample, run)

SIGMA_L = 0.5


def gaussian_problem(d, sigma_l=SIGMA_L):
    """Gaussian likelihood N(0; theta, sigma_l^2) with a standard-normal prior."""

    def loglike(theta):
        return (-0.5 * np.sum(theta ** 2, axis=-1) / sigma_l ** 2
                - d * (np.log(sigma_l) + 0.5 * np.log(2 * np.pi)))

    def transform(u):
        return special.ndtri(u)

    analytic = d * stats.norm.logpdf(0.0, scale=np.sqrt(sigma_l ** 2 + 1.0))
    return loglike, transform, analytic


def fit(d, seed=0, n_live=None, batch_size=16, **kw):
    loglike, transform, analytic = gaussian_problem(d)
    cfg = SamplerConfig(n_live=n_live, rng_seed=seed, batch_size=batch_size, **kw)
    return run(loglike, transform, d, cfg, vectorized=True), analytic


class TestEvidence:
    def test_constant_likelihood(self):
        res = run(lambda t: np.zeros(len(t)), lambda u: u, 3,
                  SamplerConfig(n_live=50, rng_seed=1), vectorized=True)
        assert abs(res.log_z) < 1e-6
        assert res.converged

    @pytest.mark.parametrize("d", [1, 2, 4])
    def test_conjugate_gaussian(self, d):
        res, analytic = fit(d, seed=d)
        assert abs(res.log_z - analytic) <= 3 * res.log_z_err
        assert res.converged and res.termination == "converged"

    def test_volume_fraction(self):
        # Constant likelihood on [0, 0.5]^2, -inf elsewhere: Z = 1/4.
        def loglike(u):
            return np.where(np.all(u < 0.5, axis=1), 0.0, -np.inf)

        res = run(loglike, lambda u: u, 2, SamplerConfig(n_live=200, rng_seed=2),
                  vectorized=True)
        assert abs(res.log_z - np.log(0.25)) <= 3 * max(res.log_z_err, 1e-3) + 0.1

    def test_scalar_callables(self):
        loglike, transform, analytic = gaussian_problem(2)
        res = run(lambda t: float(loglike(np.asarray(t))), transform, 2,
                  SamplerConfig(n_live=60, rng_seed=3))
        assert abs(res.log_z - analytic) <= 3 * res.log_z_err

    def test_batch_and_classic_agree(self):
        a, analytic = fit(2, seed=5, n_live=80, batch_size=1)
        b, _ = fit(2, seed=5, n_live=80, batch_size=32)
        err = np.hypot(a.log_z_err, b.log_z_err)
        assert abs(a.log_z - b.log_z) <= 3 * err

    def test_more_live_points_reduce_error(self):
        def median_error(n_live):
            errs = []
            for seed in range(12):
                res, analytic = fit(1, seed=100 + seed, n_live=n_live, batch_size=32)
                errs.append(abs(res.log_z - analytic))
            return np.median(errs)

        assert median_error(200) < median_error(25)


@pytest.fixture(scope="module")
def result():
    return fit(3, seed=7, n_live=75)[0]


class TestResultInvariants:
    def test_dead_points_monotone(self, result):
        assert np.all(np.diff(result.logl) >= 0)

    def test_weights_normalised(self, result):
        assert np.all(result.weights >= 0)
        assert abs(result.weights.sum() - 1.0) < 1e-10

    def test_error_is_information_based(self, result):
        assert result.information >= 0
        assert result.log_z_err == pytest.approx(np.sqrt(result.information / 75))

    def test_samples_triples(self, result):
        point, logl, w = result.samples[0]
        assert point.shape == (3,) and np.isfinite(logl) and w >= 0

    def test_posterior_mean(self, result):
        # Conjugate posterior: mean 0, variance sigma^2 / (1 + sigma^2) per coordinate.
        draws = equal_weight_resample(result, 20_000, rng_seed=0)
        var = SIGMA_L ** 2 / (1 + SIGMA_L ** 2)
        se = np.sqrt(var / result.ess)
        assert np.all(np.abs(draws.mean(axis=0)) < 4 * se)
        np.testing.assert_allclose(draws.var(axis=0), var, rtol=0.25)

    def test_diagnostics(self, result):
        d = result.diagnostics()
        assert d["termination"] == "converged" and d["iterations"] == result.iterations


class TestControl:
    def test_determinism(self):
        a = fit(2, seed=9, n_live=40)[0]
        b = fit(2, seed=9, n_live=40)[0]
        assert a.log_z == b.log_z
        np.testing.assert_array_equal(a.points, b.points)

    def test_nan_is_an_error(self):
        def loglike(theta):
            out = -np.sum(theta ** 2, axis=1)
            out[theta[:, 0] > 0.5] = np.nan
            return out

        with pytest.raises(LikelihoodNaNError, match="parameter point"):
            run(loglike, lambda u: u, 2, SamplerConfig(n_live=20, rng_seed=0), vectorized=True)

    def test_max_iterations_flags_nonconvergence(self):
        res = fit(2, seed=1, n_live=50, max_iterations=10)[0]
        assert not res.converged and res.termination == "max_iterations"

    def test_live_point_floor(self):
        with pytest.raises(ValueError, match="n_live"):
            fit(3, n_live=5)

    @pytest.mark.parametrize("frac", [0.0, 1.0, -0.1])
    def test_termination_fraction_range(self, frac):
        with pytest.raises(ValueError):
            SamplerConfig(termination_frac=frac)

    def test_defaults_scale_with_dimension(self):
        cfg = SamplerConfig().resolve(4)
        assert cfg.n_live == 100 and cfg.slice_steps == 20

    def test_trace_dump(self, tmp_path):
        path = tmp_path / "trace.jsonl"
        loglike, transform, _ = gaussian_problem(2)
        res = run(loglike, transform, 2, SamplerConfig(n_live=20, rng_seed=0),
                  vectorized=True, trace_path=path)
        records = [json.loads(line) for line in path.read_text().splitlines()]
        assert len(records) == len(res.logl)
        assert set(records[0]) >= {"iteration", "logl", "log_vol", "point"}


class TestResample:
    def _result(self, points, weights):
        points = np.asarray(points, dtype=float)
        w = np.asarray(weights, dtype=float)
        return EvidenceResult(0.0, 0.0, 0.0, points, points, np.zeros(len(w)),
                              np.zeros(len(w)), w, 0, 0, True, "converged")

    def test_single_sample(self):
        out = equal_weight_resample(self._result([[1.0, 2.0]], [1.0]), 5, 0)
        np.testing.assert_array_equal(out, np.tile([1.0, 2.0], (5, 1)))

    def test_zero_weight_never_drawn(self):
        out = equal_weight_resample(self._result([[1.0], [2.0]], [1.0, 0.0]), 100, 0)
        assert np.all(out == 1.0)

    def test_all_zero_is_error(self):
        with pytest.raises(ValueError):
            equal_weight_resample(self._result([[1.0]], [0.0]), 3, 0)

    def test_moments_converge(self):
        rng = np.random.default_rng(0)
        pts = rng.normal(size=(500, 1))
        w = rng.random(500)
        w /= w.sum()
        out = equal_weight_resample(self._result(pts, w), 100_000, 1)
        mean = np.sum(w * pts[:, 0])
        var = np.sum(w * (pts[:, 0] - mean) ** 2)
        assert out.mean() == pytest.approx(mean, abs=0.02 * np.sqrt(var))
        assert out.var() == pytest.approx(var, rel=0.02)
