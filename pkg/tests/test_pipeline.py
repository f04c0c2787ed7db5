"""Three-step grouped analysis: caching, grouping, joint refits, prediction."""

import numpy as np
import pytest

from overlapmix import DataValidationError, OverlapmixError
from overlapmix.core import Dataset, PenaltyConfig
from overlapmix.em import EmConfig, fit_em
from overlapmix.io import ResultBundle, load_json
from overlapmix.pipeline import (
    GROUPS_SCHEMA,
    PipelineGroups,
    cross_predict,
    em_config_dict,
    fit_cache_key,
    group_responses,
    run_pipeline,
    step1_fit_responses,
)


def trio_dataset():
    """Three responses sharing one generating model plus one contrast.

    Columns a, b, c are the same two-cluster response; column d partitions
    the rows differently, so grouping must isolate it.
    """
    rng = np.random.default_rng(1)
    n, p = 80, 4
    X = rng.normal(size=(n, p))
    BA = np.array([[3.0], [0.0], [-2.0], [0.0]])
    BB = np.array([[0.0], [2.5], [0.0], [3.0]])
    y = np.where((np.arange(n) < n // 2)[:, None], X @ BA, X @ BB)
    y = y + 0.2 * rng.normal(size=(n, 1))
    odd = np.arange(n) % 2 == 1
    y2 = np.where(odd[:, None], X @ BB, X @ BA) + 0.2 * rng.normal(size=(n, 1))
    Y = np.hstack([y, y, y, y2])
    return Dataset(X=X, Y=Y, y_names=("a", "b", "c", "d"))


def trio_config():
    return EmConfig(K=2, penalty=PenaltyConfig.lasso(0.1, K=2),
                    n_restarts=2, max_iter=60, seed=0)


@pytest.fixture(scope="module")
def trio_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("pipe")
    data = trio_dataset()
    config = trio_config()
    result = run_pipeline(data, config, out)
    return data, config, out, result


# ------------------------------------------------------------------ caching

def test_cache_key_changes_with_inputs():
    rng = np.random.default_rng(0)
    X, Y = rng.normal(size=(10, 3)), rng.normal(size=(10, 2))
    cfg = trio_config()
    base = fit_cache_key(X, Y, ("u", "v"), cfg)
    assert base == fit_cache_key(X, Y, ("u", "v"), cfg)
    assert base != fit_cache_key(X + 1.0, Y, ("u", "v"), cfg)
    assert base != fit_cache_key(X, Y * 2.0, ("u", "v"), cfg)
    assert base != fit_cache_key(X, Y, ("u", "w"), cfg)
    other = EmConfig(K=2, penalty=PenaltyConfig.lasso(0.2, K=2),
                     n_restarts=2, max_iter=60, seed=0)
    assert base != fit_cache_key(X, Y, ("u", "v"), other)
    assert len(base) == 16


def test_em_config_dict_echoes_fields():
    cfg = trio_config()
    doc = em_config_dict(cfg)
    assert doc["K"] == 2
    assert doc["penalty_kind"] == "lasso"
    assert doc["lambda1"] == [0.1, 0.1]
    assert doc["seed"] == 0
    assert doc["singleton_only"] is False


def test_second_run_reuses_artifacts(trio_run):
    data, config, out, result = trio_run
    files = sorted((out / "step1").glob("*.json")) + sorted((out / "step3").glob("*.json"))
    assert len(files) == 4 + len(result.groups.level2)
    stamps = {f: f.stat().st_mtime_ns for f in files}
    again = run_pipeline(data, config, out)
    for f, stamp in stamps.items():
        assert f.stat().st_mtime_ns == stamp
    assert again.groups == result.groups
    for got, want in zip(again.step3, result.step3):
        np.testing.assert_array_equal(got.responsibilities, want.responsibilities)


def test_step1_artifacts_carry_response_names(trio_run):
    _, _, out, _ = trio_run
    names = sorted(f.name.split("-")[0] for f in (out / "step1").glob("*.json"))
    assert names == ["a", "b", "c", "d"]


# ----------------------------------------------------------------- grouping

def test_shared_model_trio_lands_in_one_level2_group(trio_run):
    _, _, _, result = trio_run
    assert result.groups.level1 == ((0, 1, 2), (3,))
    assert result.groups.level2 == ((0, 1, 2), (3,))
    assert result.groups.level2_names() == (("a", "b", "c"), ("d",))
    assert [b.y_names for b in result.step3] == [("a", "b", "c"), ("d",)]


def test_groups_json_matches_result(trio_run):
    _, _, out, result = trio_run
    doc = load_json(out / "groups.json")
    assert doc["schema"] == GROUPS_SCHEMA
    assert doc["response_names"] == ["a", "b", "c", "d"]
    assert [tuple(g) for g in doc["level1"]] == list(result.groups.level1)
    assert [tuple(g) for g in doc["level2"]] == list(result.groups.level2)


def test_orthogonal_pair_splits_at_level1(tmp_path):
    rng = np.random.default_rng(5)
    n, p = 60, 4
    X = rng.normal(size=(n, p))
    BA = np.array([[4.0], [0.0], [0.0], [0.0]])
    BB = np.array([[0.0], [0.0], [0.0], [4.0]])
    half = (np.arange(n) < n // 2)[:, None]
    odd = (np.arange(n) % 2 == 1)[:, None]
    y1 = np.where(half, X @ BA, X @ BB) + 0.1 * rng.normal(size=(n, 1))
    y2 = np.where(odd, X @ BA, X @ BB) + 0.1 * rng.normal(size=(n, 1))
    data = Dataset(X=X, Y=np.hstack([y1, y2]), y_names=("u", "v"))
    result = run_pipeline(data, trio_config(), tmp_path)
    assert result.groups.level1 == ((0,), (1,))
    assert result.groups.level2 == ((0,), (1,))


def test_q1_degenerates_to_the_single_fit(tmp_path):
    data = trio_dataset()
    single = Dataset(X=data.X, Y=data.Y[:, [0]], y_names=("a",))
    config = trio_config()
    result = run_pipeline(single, config, tmp_path)
    assert result.groups.level1 == ((0,),)
    assert result.groups.level2 == ((0,),)
    one, joint = result.step1[0], result.step3[0]
    for got, want in zip(joint.B, one.B):
        np.testing.assert_array_equal(got, want)
    np.testing.assert_array_equal(joint.responsibilities, one.responsibilities)
    # same inputs, same config: the two steps share one content hash
    s1 = next(iter((tmp_path / "step1").glob("*.json")))
    s3 = next(iter((tmp_path / "step3").glob("*.json")))
    assert s1.name.split("-")[-1] == s3.name.split("-")[-1]
    assert s1.read_bytes() == s3.read_bytes()


def test_group_responses_requires_one_bundle_per_name(trio_run):
    _, _, _, result = trio_run
    with pytest.raises(DataValidationError, match="one bundle per response"):
        group_responses(result.step1[:2], ("a", "b", "c"))


def test_step_failure_names_step_and_responses(tmp_path):
    # more clusters than rows cannot be initialized
    rng = np.random.default_rng(3)
    data = Dataset(X=rng.normal(size=(4, 2)), Y=rng.normal(size=(4, 1)),
                   y_names=("tiny",))
    config = EmConfig(K=6, penalty=PenaltyConfig.lasso(0.1, K=6),
                      n_restarts=1, max_iter=10, seed=0)
    with pytest.raises(OverlapmixError) as direct:
        fit_em(data, config)
    with pytest.raises(type(direct.value),
                       match=r"pipeline step 1 failed for responses \[tiny\]"):
        step1_fit_responses(data, config, tmp_path)


def test_parallel_step1_matches_serial(tmp_path):
    data = trio_dataset()
    config = trio_config()
    serial = step1_fit_responses(data, config, tmp_path / "serial", workers=1)
    parallel = step1_fit_responses(data, config, tmp_path / "parallel", workers=2)
    for got, want in zip(parallel, serial):
        np.testing.assert_array_equal(got.responsibilities, want.responsibilities)
        for gb, wb in zip(got.B, want.B):
            np.testing.assert_array_equal(gb, wb)


def test_level2_names_helper():
    g = PipelineGroups(level1=((0, 1), (2,)), level2=((0,), (1,), (2,)),
                       response_names=("a", "b", "c"))
    assert g.level2_names() == (("a",), ("b",), ("c",))


# ------------------------------------------------------------ cross predict

@pytest.fixture(scope="module")
def noiseless_fit():
    rng = np.random.default_rng(2)
    n, p, q = 30, 4, 2
    X = rng.normal(size=(n, p))
    B = np.array([[2.0, 0.0], [0.0, -1.5], [1.0, 0.5], [0.0, 0.0]])
    data = Dataset(X=X, Y=X @ B, y_names=("r1", "r2"))
    config = EmConfig(K=1, penalty=PenaltyConfig.lasso(1e-6, K=1),
                      n_restarts=1, max_iter=200, seed=0)
    fit = fit_em(data, config)
    bundle = ResultBundle.from_fit(fit, em_config_dict(config), 0,
                                   y_names=data.y_names)
    return data, bundle


def test_cross_predict_self_consistency(noiseless_fit):
    data, bundle = noiseless_fit
    cp = cross_predict(bundle, 1, [(bundle, 1)], data)
    assert cp.rows == tuple(range(data.n))
    assert np.max(np.abs(cp.predictions - data.Y)) < 1e-4
    assert cp.response_names == ("r1", "r2")


def test_cross_predict_pattern_label_selection(noiseless_fit):
    data, bundle = noiseless_fit
    by_label = cross_predict(bundle, "1", [(bundle, 1)], data)
    by_index = cross_predict(bundle, 1, [(bundle, 1)], data)
    np.testing.assert_array_equal(by_label.predictions, by_index.predictions)


def test_cross_predict_zero_matrix(noiseless_fit):
    data, bundle = noiseless_fit
    cp = cross_predict(bundle, 1, [np.zeros((data.p, data.q))], data)
    assert np.all(cp.predictions == 0.0)
    for qs in cp.quartiles:
        assert qs == {"min": 0.0, "q25": 0.0, "median": 0.0, "q75": 0.0, "max": 0.0}


def test_cross_predict_linearity(trio_run):
    data, _, _, result = trio_run
    bundle = result.step3[0]
    sub = Dataset(X=data.X, Y=data.Y[:, [0, 1, 2]], y_names=("a", "b", "c"))
    both = cross_predict(bundle, 1, [(bundle, 1), (bundle, 2)], sub)
    one = cross_predict(bundle, 1, [(bundle, 1)], sub)
    two = cross_predict(bundle, 1, [(bundle, 2)], sub)
    assert np.max(np.abs(both.predictions - (one.predictions + two.predictions))) < 1e-12


def test_cross_predict_quartiles_match_percentiles(noiseless_fit):
    data, bundle = noiseless_fit
    cp = cross_predict(bundle, 1, [(bundle, 1)], data)
    col = cp.predictions[:, 0]
    assert cp.quartiles[0]["median"] == pytest.approx(float(np.median(col)))
    assert cp.quartiles[0]["q25"] == pytest.approx(float(np.percentile(col, 25)))
    assert cp.quartiles[0]["min"] == float(np.min(col))
    assert cp.quartiles[0]["max"] == float(np.max(col))


def test_cross_predict_empty_cluster_rejected(trio_run):
    data, _, _, result = trio_run
    bundle = result.step3[0]
    sub = Dataset(X=data.X, Y=data.Y[:, [0, 1, 2]], y_names=("a", "b", "c"))
    assert "12" not in bundle.row_patterns  # partitioned data: no overlap rows
    with pytest.raises(DataValidationError, match="no assigned rows"):
        cross_predict(bundle, "12", [(bundle, 1)], sub)


def test_cross_predict_validates_references(noiseless_fit):
    data, bundle = noiseless_fit
    with pytest.raises(DataValidationError, match="outside 1..1"):
        cross_predict(bundle, 2, [(bundle, 1)], data)
    with pytest.raises(DataValidationError, match="unknown pattern label"):
        cross_predict(bundle, "12", [(bundle, 1)], data)
    with pytest.raises(DataValidationError, match="outside 1..1"):
        cross_predict(bundle, 1, [(bundle, 3)], data)
    with pytest.raises(DataValidationError, match="at least one"):
        cross_predict(bundle, 1, [], data)


def test_cross_predict_validates_shapes(noiseless_fit):
    data, bundle = noiseless_fit
    with pytest.raises(DataValidationError, match="shapes disagree"):
        cross_predict(bundle, 1, [(bundle, 1), np.zeros((2, 2))], data)
    with pytest.raises(DataValidationError, match="expect p="):
        cross_predict(bundle, 1, [np.zeros((7, 2))], data)
    other = Dataset(X=np.zeros((5, 4)), Y=np.zeros((5, 2)))
    with pytest.raises(DataValidationError, match="fitted 30"):
        cross_predict(bundle, 1, [(bundle, 1)], other)
