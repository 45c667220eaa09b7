import json
import warnings

import numpy as np
import pytest

from bayesmr.data_io import (DataFormatError, SummaryRecord, VariantSummary, _check_psd,
                             load_stats, read_individual, read_stats, read_summary,
                             stats_from_covariance, stats_from_individual, stats_from_summary,
                             summary_from_individual, summary_to_dict, summary_from_dict,
                             write_individual, write_stats, write_summary)
from bayesmr.sem import GenotypeSpec, marginal_moments
from bayesmr.simulator import Scenario, generate, preset


def variant(**kw):
    base = dict(eaf=0.5, beta_gx=0.2, se_gx=0.03, n_gx=1000, beta_gy=0.1, se_gy=0.025,
                n_gy=2000)
    base.update(kw)
    return VariantSummary(**base)


class TestIndividual:
    def test_two_rows(self):
        s = stats_from_individual([[0, 0, 0], [2, 2, 2]])
        np.testing.assert_allclose(s.cov, np.ones((3, 3)))
        assert s.meta["offsets"] == {"X": 1.0, "Y": 1.0}
        np.testing.assert_allclose(s.mean, [1.0, 0.0, 0.0])
        assert s.genotype_spec.eaf[0] == 0.5

    def test_population_moments(self):
        sc = preset("iv_example", N=100_000, rng_seed=5)
        rows, truth = generate(sc)
        s = stats_from_individual(rows)
        _, cov = marginal_moments(truth.params, GenotypeSpec(truth.eaf))
        # Standard error of a sample covariance: sqrt((S_ii S_jj + S_ij^2) / N).
        se = np.sqrt((np.outer(np.diag(cov), np.diag(cov)) + cov ** 2) / sc.N)
        assert np.all(np.abs(s.cov - cov) < 3 * se)

    def test_constant_column_named(self):
        rows = np.array([[1, 0.1, 0.3], [1, 0.5, 0.2], [1, 0.2, 0.9]])
        with pytest.raises(DataFormatError, match="G1"):
            stats_from_individual(rows)

    def test_complete_case(self):
        rows = np.array([[0, 0, 0], [2, 2, 2], [1, np.nan, 1.0], [1, 1.5, 0.5]])
        s = stats_from_individual(rows)
        assert s.n_obs == 3 and s.meta["n_dropped"] == 1

    @pytest.mark.parametrize("bad", [[[0.5, 1, 2], [1, 2, 3]], [[3, 1, 2], [0, 2, 3]],
                                     [[-1, 1, 2], [0, 2, 3]]])
    def test_genotype_values_checked(self, bad):
        with pytest.raises(DataFormatError):
            stats_from_individual(bad)

    def test_too_few_rows(self):
        with pytest.raises(DataFormatError):
            stats_from_individual([[0, 1, 2], [np.nan, 1, 1]])

    def test_denominator_n(self):
        rng = np.random.default_rng(0)
        rows = np.column_stack([rng.integers(0, 3, 50), rng.normal(size=(50, 2))])
        s = stats_from_individual(rows)
        np.testing.assert_allclose(s.cov, np.cov(rows, rowvar=False, bias=True))


class TestSummary:
    def test_binomial_moments(self):
        s = stats_from_summary(SummaryRecord([variant()], obs_assoc=0.3))
        assert s.mean[0] == 1.0 and s.cov[0, 0] == 0.5

    def test_minimum_sample_size(self):
        rec = SummaryRecord([variant(n_gx=30062, n_gy=8072)], obs_assoc=0.3)
        assert stats_from_summary(rec).n_obs == 8072
        rec = SummaryRecord([variant(n_gx=30062, n_gy=8072)], obs_assoc=0.3, obs_n=5000)
        assert stats_from_summary(rec).n_obs == 5000

    def test_formulae(self):
        v = variant()
        s = stats_from_summary(SummaryRecord([v], obs_assoc=0.3))
        var_x = 0.5 * (0.2 ** 2 + 1000 * 0.03 ** 2)
        var_y = 0.5 * (0.1 ** 2 + 2000 * 0.025 ** 2)
        expected = [[0.5, 0.1, 0.05], [0.1, var_x, 0.3 * var_x], [0.05, 0.3 * var_x, var_y]]
        np.testing.assert_allclose(s.cov, expected, rtol=1e-12)

    def test_variance_average_and_independence(self):
        rec = SummaryRecord([variant(eaf=0.3), variant(eaf=0.6, beta_gx=0.4)], obs_assoc=0.1)
        s = stats_from_summary(rec)
        assert s.cov[0, 1] == 0.0
        assert s.cov[2, 2] == pytest.approx(np.mean(s.meta["var_x_per_variant"]))

    def test_order_invariance(self):
        vs = [variant(eaf=0.3), variant(eaf=0.6, beta_gx=0.4), variant(eaf=0.2, beta_gy=-0.1)]
        a = stats_from_summary(SummaryRecord(vs, obs_assoc=0.2))
        b = stats_from_summary(SummaryRecord(vs[::-1], obs_assoc=0.2))
        perm = [2, 1, 0, 3, 4]
        np.testing.assert_allclose(b.cov, a.cov[np.ix_(perm, perm)], rtol=1e-14)
        assert a.n_obs == b.n_obs

    def test_missing_obs_assoc(self):
        with pytest.raises(DataFormatError, match="obs_assoc"):
            SummaryRecord([variant()], obs_assoc=None)

    @pytest.mark.parametrize("field,value", [("eaf", 0.0), ("eaf", 1.0), ("se_gx", 0.0),
                                             ("n_gy", 1)])
    def test_invalid_variant(self, field, value):
        with pytest.raises(DataFormatError):
            variant(**{field: value})

    def test_non_psd_rejected(self):
        # A strong instrument with tiny reported outcome variance cannot be PSD.
        rec = SummaryRecord([variant(beta_gx=2.0, se_gx=1e-4, beta_gy=-3.0, se_gy=1e-4)],
                            obs_assoc=5.0)
        with pytest.raises(DataFormatError, match="minimum eigenvalue"):
            stats_from_summary(rec)

    def test_tiny_negative_eigenvalue_clipped(self):
        cov = np.array([[1.0, 1.0], [1.0, 1.0 - 1e-10]])
        with pytest.warns(RuntimeWarning, match="clipping"):
            out = _check_psd(cov)
        assert np.linalg.eigvalsh(out).min() >= -1e-15

    def test_roundtrip_from_simulation(self):
        sc = preset("pleiotropy_robustness", J=8, rng_seed=11)
        rows, _ = generate(sc)
        direct = stats_from_individual(rows).cov
        recon = stats_from_summary(summary_from_individual(rows)).cov
        J = 8
        rel = np.abs(recon - direct) / np.abs(direct)
        assert np.all(rel[J:, J:] <= [[0.02, 0.02], [0.02, 0.05]])
        # Genotype rows inherit the Hardy-Weinberg sampling deviation of
        # 2f(1-f) from the sample variance, about 1% relative at this N.
        assert np.all(rel[:J, J:] < 0.05) and np.all(np.diag(rel)[:J] < 0.05)
        np.testing.assert_array_equal(recon[:J, :J][~np.eye(J, dtype=bool)], 0.0)

    def test_variance_estimates_agree_across_variants(self):
        sc = preset("pleiotropy_robustness", J=10, N=100_000, rng_seed=12)
        rows, _ = generate(sc)
        var_x = np.array(stats_from_summary(summary_from_individual(rows))
                         .meta["var_x_per_variant"])
        assert var_x.std() / var_x.mean() < 0.05


class TestFiles:
    def test_individual_round_trip(self, tmp_path):
        rows, _ = generate(preset("iv_example", N=50, rng_seed=0))
        path = tmp_path / "d.csv"
        write_individual(path, rows)
        np.testing.assert_allclose(read_individual(path), rows, rtol=1e-9)
        np.testing.assert_allclose(load_stats(path).cov, stats_from_individual(rows).cov,
                                   rtol=1e-8)

    def test_missing_cells(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("G1,X,Y\n0,1.0,2.0\n1,,NA\n2,0.5,0.1\n")
        rows = read_individual(path)
        assert np.isnan(rows[1, 1]) and np.isnan(rows[1, 2])

    @pytest.mark.parametrize("text", ["G1,Y,X\n0,1,2\n", "# other v9\nG1,X,Y\n0,1,2\n",
                                      "G1,X,Y\n"])
    def test_bad_individual_files(self, tmp_path, text):
        path = tmp_path / "d.csv"
        path.write_text(text)
        with pytest.raises(DataFormatError):
            read_individual(path)

    def test_stats_round_trip(self, tmp_path):
        rows, _ = generate(preset("near_lcd", N=500, rng_seed=0))
        s = stats_from_individual(rows)
        path = tmp_path / "s.json"
        write_stats(path, s)
        t = read_stats(path)
        np.testing.assert_array_equal(t.cov, s.cov)
        assert t.n_obs == s.n_obs and t.meta == s.meta
        assert json.loads(path.read_text())["schema"] == "bayesmr.suffstats"

    def test_stats_unknown_field(self, tmp_path):
        s = stats_from_covariance(np.eye(3), 10, [0.3])
        path = tmp_path / "s.json"
        write_stats(path, s)
        doc = json.loads(path.read_text())
        doc["nobs"] = 10
        path.write_text(json.dumps(doc))
        with pytest.raises(DataFormatError, match="unknown"):
            read_stats(path)

    def test_summary_round_trip(self, tmp_path):
        rec = SummaryRecord([variant(), variant(eaf=0.2)], obs_assoc=0.4, obs_n=900)
        path = tmp_path / "r.json"
        write_summary(path, rec, allele_copies=2)
        back, copies = read_summary(path)
        assert back == rec and copies == 2

    def test_summary_version_checked(self):
        doc = summary_to_dict(SummaryRecord([variant()], obs_assoc=0.1))
        doc["version"] = 2
        with pytest.raises(DataFormatError, match="version"):
            summary_from_dict(doc)

    def test_summary_missing_obs_assoc(self):
        doc = summary_to_dict(SummaryRecord([variant()], obs_assoc=0.1))
        del doc["obs_assoc"]
        with pytest.raises(DataFormatError, match="obs_assoc"):
            summary_from_dict(doc)
