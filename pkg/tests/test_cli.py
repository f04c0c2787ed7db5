"""End-to-end tests of the command-line interface.

Commands run in-process through cli.main so exit codes and artifacts can be
checked without spawning subprocesses.
"""

import json
import os

import numpy as np
import pytest

from overlapmix.cli import main
from overlapmix.io import ingest_csv, load_bundle, write_matrix_csv


def run(*argv):
    return main(list(argv))


@pytest.fixture(scope="module")
def instance_dir(tmp_path_factory):
    """One simulated draw at the default problem size (p=15, q=3, K=3)."""
    d = tmp_path_factory.mktemp("inst")
    rc = run("simulate", "--n", "90", "--seed", "7", "--out", str(d))
    assert rc == 0
    return d


@pytest.fixture(scope="module")
def fit_dir(tmp_path_factory, instance_dir):
    d = tmp_path_factory.mktemp("fit")
    rc = run("fit", "--x", str(instance_dir / "X.csv"),
             "--y", str(instance_dir / "Y.csv"),
             "--k", "3", "--lambda1", "0.3", "--restarts", "2",
             "--max-iter", "80", "--seed", "1", "--out", str(d))
    assert rc == 0
    return d


class TestSimulateFit:
    def test_default_dimensions_produce_three_15x3_matrices(self, fit_dir):
        for k in (1, 2, 3):
            rep = ingest_csv(fit_dir / f"B{k}.csv")
            assert rep.matrix.shape == (15, 3)
            assert rep.names == ("y1", "y2", "y3")

    def test_responsibility_columns_cover_all_patterns(self, fit_dir):
        rep = ingest_csv(fit_dir / "responsibilities.csv")
        assert len(rep.names) == 2 ** 3 - 1
        assert rep.matrix.shape[0] == 90
        assert np.allclose(rep.matrix.sum(axis=1), 1.0)

    def test_hard_membership_matrix_shape(self, fit_dir):
        rep = ingest_csv(fit_dir / "hard.csv")
        assert rep.names == ("k1", "k2", "k3")
        assert set(np.unique(rep.matrix)) <= {0.0, 1.0}

    def test_bundle_loads_and_matches_config(self, fit_dir):
        bundle = load_bundle(fit_dir / "bundle.json")
        assert bundle.K == 3
        assert bundle.seed == 1
        assert bundle.config["penalty_kind"] == "lasso"

    def test_simulate_writes_instance_files(self, instance_dir):
        for name in ("X.csv", "Y.csv", "instance.json"):
            assert (instance_dir / name).exists()

    def test_refit_from_same_files_is_byte_identical(self, tmp_path, instance_dir):
        args = ("fit", "--x", str(instance_dir / "X.csv"),
                "--y", str(instance_dir / "Y.csv"),
                "--k", "2", "--lambda1", "0.3", "--restarts", "1",
                "--max-iter", "40", "--seed", "4")
        a, b = tmp_path / "a", tmp_path / "b"
        assert run(*args, "--out", str(a)) == 0
        assert run(*args, "--out", str(b)) == 0
        assert (a / "bundle.json").read_bytes() == (b / "bundle.json").read_bytes()

    def test_simulate_requires_n(self, tmp_path):
        assert run("simulate", "--out", str(tmp_path)) == 1


class TestEvaluate:
    def test_single_cluster_fit_scores_perfect_f1(self, tmp_path):
        inst = tmp_path / "inst"
        run("simulate", "--n", "40", "--p", "4", "--q", "2", "--k", "1",
            "--seed", "2", "--out", str(inst))
        fit = tmp_path / "fit"
        assert run("fit", "--x", str(inst / "X.csv"), "--y", str(inst / "Y.csv"),
                   "--k", "1", "--lambda1", "0.1", "--restarts", "1",
                   "--max-iter", "60", "--out", str(fit)) == 0
        out = tmp_path / "metrics"
        assert run("evaluate", "--bundle", str(fit / "bundle.json"),
                   "--instance", str(inst), "--out", str(out)) == 0
        doc = json.loads((out / "metrics.json").read_text())
        assert doc["mean_f1"] == 1.0
        assert doc["mean_specificity"] == 1.0

    def test_metrics_document_carries_pairing(self, tmp_path, instance_dir, fit_dir):
        out = tmp_path / "m"
        assert run("evaluate", "--bundle", str(fit_dir / "bundle.json"),
                   "--instance", str(instance_dir), "--out", str(out)) == 0
        doc = json.loads((out / "metrics.json").read_text())
        assert doc["schema"] == "overlapmix-metrics-v1"
        assert 0.0 <= doc["mean_f1"] <= 1.0
        assert doc["coefficient_sse"] >= 0.0
        assert len(doc["per_pair"]) >= 3

    def test_row_count_mismatch_is_a_data_error(self, tmp_path, fit_dir):
        inst = tmp_path / "short"
        run("simulate", "--n", "10", "--seed", "3", "--out", str(inst))
        assert run("evaluate", "--bundle", str(fit_dir / "bundle.json"),
                   "--instance", str(inst)) == 2


class TestTuneSelectK:
    def test_tune_writes_curves_per_cluster(self, tmp_path, instance_dir):
        out = tmp_path / "tune"
        rc = run("tune", "--x", str(instance_dir / "X.csv"),
                 "--y", str(instance_dir / "Y.csv"),
                 "--k", "2", "--restarts", "1", "--max-iter", "40",
                 "--folds", "3", "--grid-size", "4", "--out", str(out))
        assert rc in (0, 4)  # tuning may stop at the cap; artifacts either way
        doc = json.loads((out / "cv_curves.json").read_text())
        assert doc["schema"] == "overlapmix-cv-v1"
        assert len(doc["lambda1"]) == 2
        for curve in doc["curves"].values():
            assert len(curve["lambdas"]) == 4
            assert curve["selected_lambda"] in curve["lambdas"]
        bundle = load_bundle(out / "bundle.json")
        assert tuple(bundle.config["lambda1"]) == tuple(doc["lambda1"])

    def test_select_k_table_and_choice(self, tmp_path):
        rng = np.random.default_rng(5)
        n, p = 120, 4
        X = rng.normal(size=(n, p))
        B1 = np.array([[3.0, 0.0], [0.0, 2.0], [-2.0, 0.0], [0.0, 0.0]])
        B2 = np.array([[0.0, -2.5], [2.5, 0.0], [0.0, 3.0], [3.0, 0.0]])
        Y = np.where((np.arange(n) < n // 2)[:, None], X @ B1, X @ B2)
        Y = Y + 0.3 * rng.normal(size=(n, 2))
        write_matrix_csv(tmp_path / "X.csv", X, ("x1", "x2", "x3", "x4"))
        write_matrix_csv(tmp_path / "Y.csv", Y, ("y1", "y2"))
        out = tmp_path / "sk"
        rc = run("select-k", "--x", str(tmp_path / "X.csv"),
                 "--y", str(tmp_path / "Y.csv"),
                 "--candidates", "1,2", "--lambda1", "0.2", "--restarts", "2",
                 "--max-iter", "60", "--out", str(out))
        assert rc == 0
        doc = json.loads((out / "selection.json").read_text())
        assert doc["chosen_K"] == 2
        assert [row["K"] for row in doc["table"]] == [1, 2]
        assert all(row["error"] is None for row in doc["table"])
        assert load_bundle(out / "bundle.json").K == 2


class TestPlaidPipeline:
    def test_plaid_writes_layer_document(self, tmp_path, instance_dir):
        out = tmp_path / "plaid"
        assert run("plaid", "--x", str(instance_dir / "X.csv"),
                   "--y", str(instance_dir / "Y.csv"),
                   "--k", "2", "--seed", "1", "--out", str(out)) == 0
        doc = json.loads((out / "plaid.json").read_text())
        assert doc["schema"] == "overlapmix-plaid-v1"
        assert 1 <= len(doc["layers"]) <= 2
        assert doc["config"]["algorithm"] == "sequential"

    def test_pipeline_and_cross_predict_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        n, p = 60, 4
        X = rng.normal(size=(n, p))
        BA = np.array([[3.0], [0.0], [-2.0], [0.0]])
        BB = np.array([[0.0], [2.5], [0.0], [3.0]])
        y = np.where((np.arange(n) < n // 2)[:, None], X @ BA, X @ BB)
        y = y + 0.2 * rng.normal(size=(n, 1))
        write_matrix_csv(tmp_path / "X.csv", X, ("x1", "x2", "x3", "x4"))
        write_matrix_csv(tmp_path / "Y.csv", np.hstack([y, y]), ("a", "b"))
        out = tmp_path / "pipe"
        assert run("pipeline", "--x", str(tmp_path / "X.csv"),
                   "--y", str(tmp_path / "Y.csv"), "--k", "2",
                   "--lambda1", "0.1", "--restarts", "2", "--max-iter", "60",
                   "--out", str(out)) == 0
        groups = json.loads((out / "groups.json").read_text())
        assert groups["level2"] == [[0, 1]]
        step3 = sorted((out / "step3").iterdir())
        assert len(step3) == 1

        cp = tmp_path / "cp"
        assert run("cross-predict", "--bundle", str(step3[0]),
                   "--cluster", "1", "--use", f"{step3[0]}:1",
                   "--x", str(tmp_path / "X.csv"), "--out", str(cp)) == 0
        pred = ingest_csv(cp / "predictions.csv")
        assert pred.names == ("row", "a", "b")
        assert np.all(pred.matrix[:, 0] >= 1)  # 1-based row ids
        quart = json.loads((cp / "quartiles.json").read_text())
        assert set(quart["quartiles"]) == {"a", "b"}
        for qs in quart["quartiles"].values():
            assert qs["min"] <= qs["q25"] <= qs["median"] <= qs["q75"] <= qs["max"]

    def test_cross_predict_zero_choice_gives_zeros(self, tmp_path, instance_dir,
                                                   fit_dir):
        cp = tmp_path / "cp0"
        assert run("cross-predict", "--bundle", str(fit_dir / "bundle.json"),
                   "--cluster", "1", "--use", "zero",
                   "--x", str(instance_dir / "X.csv"), "--out", str(cp)) == 0
        pred = ingest_csv(cp / "predictions.csv")
        assert np.all(pred.matrix[:, 1:] == 0.0)


class TestConfigPrecedence:
    def test_flag_beats_config_beats_default(self, tmp_path, instance_dir):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("k = 2\nlambda1 = 0.3\nrestarts = 1\n"
                       "max_iter = 40\nseed = 5\n")
        out = tmp_path / "out"
        assert run("fit", "--config", str(cfg),
                   "--x", str(instance_dir / "X.csv"),
                   "--y", str(instance_dir / "Y.csv"),
                   "--seed", "0", "--out", str(out)) == 0
        bundle = load_bundle(out / "bundle.json")
        assert bundle.seed == 0          # flag wins over config's 5
        assert bundle.K == 2             # config wins over default 3
        assert bundle.config["max_iter"] == 40

    def test_unknown_config_key_rejected(self, tmp_path, instance_dir):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("bogus_key = 1\n")
        assert run("fit", "--config", str(cfg),
                   "--x", str(instance_dir / "X.csv"),
                   "--y", str(instance_dir / "Y.csv"),
                   "--out", str(tmp_path)) == 1

    def test_malformed_config_value_rejected(self, tmp_path, instance_dir):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("restarts = many\n")
        assert run("fit", "--config", str(cfg),
                   "--x", str(instance_dir / "X.csv"),
                   "--y", str(instance_dir / "Y.csv"),
                   "--out", str(tmp_path)) == 1

    def test_outdir_env_fallback(self, tmp_path, instance_dir, monkeypatch):
        target = tmp_path / "envout"
        monkeypatch.setenv("OVERLAPMIX_OUTDIR", str(target))
        assert run("simulate", "--n", "10", "--seed", "1") == 0
        assert (target / "X.csv").exists()

    def test_no_out_anywhere_is_usage_error(self, monkeypatch):
        monkeypatch.delenv("OVERLAPMIX_OUTDIR", raising=False)
        assert run("simulate", "--n", "10") == 1


class TestExitCodes:
    def test_unknown_flag(self):
        assert run("fit", "--nope") == 1

    def test_unknown_command(self):
        assert run("frobnicate") == 1

    def test_missing_required_options(self, tmp_path):
        assert run("fit", "--out", str(tmp_path)) == 1

    def test_missing_input_file(self, tmp_path):
        assert run("fit", "--x", str(tmp_path / "no.csv"),
                   "--y", str(tmp_path / "no.csv"), "--out", str(tmp_path)) == 2

    def test_corrupt_cell_is_a_data_error(self, tmp_path, instance_dir):
        bad = tmp_path / "bad.csv"
        bad.write_text("a,b\n1.0,frog\n")
        assert run("fit", "--x", str(instance_dir / "X.csv"),
                   "--y", str(bad), "--out", str(tmp_path)) == 2

    def test_iteration_cap_exits_4_with_artifacts(self, tmp_path, instance_dir):
        out = tmp_path / "partial"
        rc = run("fit", "--x", str(instance_dir / "X.csv"),
                 "--y", str(instance_dir / "Y.csv"),
                 "--k", "2", "--lambda1", "0.3", "--restarts", "1",
                 "--max-iter", "2", "--out", str(out))
        assert rc == 4
        assert (out / "bundle.json").exists()
        assert (out / "B1.csv").exists()

    def test_error_report_goes_to_stderr(self, capsys):
        assert run("frobnicate") == 1
        captured = capsys.readouterr()
        assert "error[UsageError]" in captured.err

    def test_version_flag(self):
        with pytest.raises(SystemExit) as exc:
            run("--version")
        assert exc.value.code == 0

    def test_subcommand_help_exits_zero(self):
        with pytest.raises(SystemExit) as exc:
            run("fit", "--help")
        assert exc.value.code == 0


class TestMissingDataFlags:
    def test_impute_missing_flag(self, tmp_path):
        write_matrix_csv(tmp_path / "X.csv", np.arange(8.0).reshape(4, 2),
                         ("x1", "x2"))
        (tmp_path / "Y.csv").write_text("y1\n1.0\nNA\n3.0\n5.0\n")
        out = tmp_path / "fit"
        rc = run("fit", "--x", str(tmp_path / "X.csv"),
                 "--y", str(tmp_path / "Y.csv"), "--k", "1",
                 "--lambda1", "0.1", "--restarts", "1", "--max-iter", "30",
                 "--impute-missing", "--out", str(out))
        assert rc in (0, 4)
        assert load_bundle(out / "bundle.json").hard.shape[0] == 4

    def test_missing_without_impute_is_rejected(self, tmp_path):
        write_matrix_csv(tmp_path / "X.csv", np.arange(8.0).reshape(4, 2),
                         ("x1", "x2"))
        (tmp_path / "Y.csv").write_text("y1\n1.0\nNA\n3.0\n5.0\n")
        assert run("fit", "--x", str(tmp_path / "X.csv"),
                   "--y", str(tmp_path / "Y.csv"), "--k", "1",
                   "--lambda1", "0.1", "--out", str(tmp_path)) == 2

    def test_min_observed_fraction_drops_rows_in_both_matrices(self, tmp_path):
        write_matrix_csv(tmp_path / "X.csv", np.arange(8.0).reshape(4, 2),
                         ("x1", "x2"))
        (tmp_path / "Y.csv").write_text(
            "y1,y2\n1.0,2.0\nNA,NA\n3.0,1.0\n5.0,0.5\n")
        out = tmp_path / "fit"
        rc = run("fit", "--x", str(tmp_path / "X.csv"),
                 "--y", str(tmp_path / "Y.csv"), "--k", "1",
                 "--lambda1", "0.1", "--restarts", "1", "--max-iter", "30",
                 "--min-observed-fraction", "0.5", "--out", str(out))
        assert rc in (0, 4)
        assert load_bundle(out / "bundle.json").hard.shape[0] == 3
