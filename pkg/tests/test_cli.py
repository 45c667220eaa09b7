import json

import numpy as np
import pytest

from bayesmr.cli import main
from bayesmr.data_io import (SummaryRecord, read_individual, read_stats, stats_from_covariance,
                             stats_from_individual, summary_from_individual, write_stats,
                             write_summary)
from bayesmr.sem import GenotypeSpec, SufficientStats, marginal_moments
from bayesmr.simulator import bidirectional_params

FAST = ["--n-live", "40", "--slice-steps", "8", "--batch-size", "32", "--n-draws", "200"]


@pytest.fixture
def iv_stats_file(tmp_path):
    cov = [[0.421, 0.434, 0.441], [0.434, 2.447, 3.439], [0.441, 3.439, 6.404]]
    path = tmp_path / "iv.json"
    write_stats(path, stats_from_covariance(cov, 10_000, [0.3]))
    return path


class TestSimulate:
    def test_shape(self, tmp_path):
        out = tmp_path / "d.csv"
        assert main(["simulate", "--preset", "near_lcd", "--n", "10000", "--seed", "1",
                     "--out", str(out)]) == 0
        assert read_individual(out).shape == (10_000, 3)
        truth = json.loads((tmp_path / "d.csv.truth.json").read_text())
        assert truth["scenario"]["rng_seed"] == 1
        assert truth["config"]["args"]["preset"] == "near_lcd"

    def test_invalid_count(self, tmp_path):
        out = tmp_path / "d.csv"
        assert main(["simulate", "--preset", "pleiotropy_robustness", "--valid-fraction", "0.4",
                     "--n", "100", "--out", str(out), "--truth", str(tmp_path / "t.json")]) == 0
        alpha = json.loads((tmp_path / "t.json").read_text())["truth"]["params"]["alpha"]
        assert np.count_nonzero(alpha) == 15

    def test_unknown_preset(self, tmp_path, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["simulate", "--preset", "nope", "--out", str(tmp_path / "d.csv")])
        assert exc.value.code == 2
        assert "invalid choice" in capsys.readouterr().err

    def test_scenario_file_rejects_unknown_field(self, tmp_path, capsys):
        path = tmp_path / "s.json"
        path.write_text(json.dumps({"kind": "custom", "J": 1, "NN": 5}))
        assert main(["simulate", "--scenario", str(path), "--out", str(tmp_path / "d.csv")]) == 2
        assert "unknown" in capsys.readouterr().err

    def test_reproducible(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        for out in (a, b):
            main(["simulate", "--preset", "iv_example", "--n", "50", "--seed", "3",
                  "--out", str(out)])
        assert a.read_text() == b.read_text()


class TestFit:
    def test_forward_only(self, iv_stats_file, tmp_path):
        out = tmp_path / "r.json"
        samples = tmp_path / "s.csv"
        code = main(["fit", "--data", str(iv_stats_file), "--direction", "forward",
                     "--out", str(out), "--samples", str(samples), *FAST])
        assert code == 0
        doc = json.loads(out.read_text())
        assert doc["p_dir"] == 1.0 and doc["combined"]["X_to_Y"]["atom_weight"] == 0.0
        assert doc["config"]["cli"]["args"]["n_live"] == 40
        assert samples.read_text().splitlines()[0] == "beta_x_to_y"

    def test_both_directions(self, iv_stats_file, tmp_path):
        out = tmp_path / "r.json"
        assert main(["fit", "--data", str(iv_stats_file), "--out", str(out), *FAST]) == 0
        doc = json.loads(out.read_text())
        assert doc["p_dir"] + doc["p_rev"] == 1.0
        assert doc["bayes_factor"]["value"] > 0
        assert doc["config"]["prior"]["w_alpha"] == "hier"

    def test_prior_config_file(self, iv_stats_file, tmp_path):
        cfg = tmp_path / "p.json"
        cfg.write_text(json.dumps({"lambda": 1e-3, "w_alpha": 0.0}))
        out = tmp_path / "r.json"
        assert main(["fit", "--data", str(iv_stats_file), "--prior-config", str(cfg),
                     "--direction", "forward", "--out", str(out), *FAST]) == 0
        prior = json.loads(out.read_text())["config"]["prior"]
        assert prior["lambda"] == 1e-3 and prior["w_alpha"] == 0.0

    def test_prior_config_typo(self, iv_stats_file, tmp_path):
        cfg = tmp_path / "p.json"
        cfg.write_text(json.dumps({"lamda": 1e-3}))
        assert main(["fit", "--data", str(iv_stats_file), "--prior-config", str(cfg),
                     "--out", str(tmp_path / "r.json"), *FAST]) == 2

    def test_non_convergence_exit_code(self, iv_stats_file, tmp_path, monkeypatch):
        import bayesmr.nested as nested

        real = nested.SamplerConfig.resolve

        def capped(self, dim):
            cfg = real(self, dim)
            object.__setattr__(cfg, "max_iterations", 5)
            return cfg

        monkeypatch.setattr(nested.SamplerConfig, "resolve", capped)
        out = tmp_path / "r.json"
        assert main(["fit", "--data", str(iv_stats_file), "--direction", "forward",
                     "--out", str(out), *FAST]) == 3
        doc = json.loads(out.read_text())
        assert doc["converged"] is False
        assert doc["directions"]["X_to_Y"]["diagnostics"]["termination"] == "max_iterations"

    def test_missing_data_file(self, tmp_path):
        assert main(["fit", "--data", str(tmp_path / "none.csv")]) == 2


class TestSummary:
    def test_minimum_size_and_roundtrip(self, tmp_path):
        main(["simulate", "--preset", "pleiotropy_robustness", "--n", "10000", "--seed", "2",
              "--out", str(tmp_path / "d.csv")])
        rows = read_individual(tmp_path / "d.csv")
        rec = summary_from_individual(rows)
        rec = SummaryRecord(rec.variants, rec.obs_assoc, obs_n=9000)
        write_summary(tmp_path / "rec.json", rec)
        assert main(["summary", "--records", str(tmp_path / "rec.json"),
                     "--out", str(tmp_path / "s.json")]) == 0
        s = read_stats(tmp_path / "s.json")
        assert s.n_obs == 9000
        direct = stats_from_individual(rows).cov
        J = s.J
        rel = np.abs(s.cov[J:, J:] - direct[J:, J:]) / np.abs(direct[J:, J:])
        assert np.all(rel <= [[0.02, 0.02], [0.02, 0.05]])

    def test_missing_obs_assoc(self, tmp_path, capsys):
        doc = {"schema": "bayesmr.summary", "version": 1,
               "variants": [{"eaf": 0.3, "beta_gx": 0.1, "se_gx": 0.01, "n_gx": 100,
                             "beta_gy": 0.1, "se_gy": 0.01, "n_gy": 100}]}
        path = tmp_path / "rec.json"
        path.write_text(json.dumps(doc))
        assert main(["summary", "--records", str(path)]) == 2
        assert "obs_assoc" in capsys.readouterr().err


class TestBaselines:
    @pytest.fixture
    def bidir_file(self, tmp_path):
        spec = GenotypeSpec([0.3, 0.3])
        mean, cov = marginal_moments(bidirectional_params(0.0), spec)
        path = tmp_path / "b.json"
        write_stats(path, SufficientStats(mean, cov, 10_000, spec))
        return path

    def test_population_table(self, bidir_file, capsys):
        assert main(["baselines", "--data", str(bidir_file), "--exposure-variants", "1",
                     "--outcome-variants", "2"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[1].split("\t")[:2] == ["G1", "1"]
        table = lines[-1].split("\t")
        assert float(table[1]) == pytest.approx(1.0) and float(table[3]) == pytest.approx(0.0)

    def test_single_variant_ivw_is_wald(self, iv_stats_file, capsys):
        assert main(["baselines", "--data", str(iv_stats_file)]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[1].split("\t")[1:] == lines[2].split("\t")[1:]

    def test_bad_variant(self, bidir_file):
        assert main(["baselines", "--data", str(bidir_file), "--exposure-variants", "5"]) == 2
