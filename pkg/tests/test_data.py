import numpy as np
import pytest

from spatialglm.data import (
    SchemaError,
    TargetSet,
    TrainingSet,
    ValidationError,
    load_target,
    load_training,
    save_target,
    save_training,
)


def test_load_training_basic(tmp_path):
    path = tmp_path / "train.csv"
    path.write_text("s1,s2,x1,y\n0,0,1.5,1\n0.5,0.25,-2,0\n-1,1,0.125,1\n")
    ts = load_training(path)
    assert ts.n == 3 and ts.dim == 2 and ts.n_covariates == 1
    assert np.array_equal(ts.responses, [1.0, 0.0, 1.0])
    # row order equals file order
    assert np.array_equal(ts.locations[1], [0.5, 0.25])


def test_load_training_missing_field_names_row(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("s1,x1,y\n0,1,1\n0.5,2\n")
    with pytest.raises(SchemaError, match="row 3"):
        load_training(path)


def test_load_training_non_numeric_names_row(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("s1,x1,y\n0,1,1\n0.5,two,0\n")
    with pytest.raises(SchemaError, match="row 3"):
        load_training(path)


def test_load_training_empty_and_header_errors(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("s1,x1,y\n")
    with pytest.raises(SchemaError, match="no data rows"):
        load_training(empty)
    bad_header = tmp_path / "head.csv"
    bad_header.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(SchemaError, match="header"):
        load_training(bad_header)


def test_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(3)
    train = TrainingSet(rng.normal(size=(17, 3)), rng.normal(size=(17, 2)),
                        rng.normal(size=17))
    p1 = tmp_path / "a.csv"
    save_training(p1, train)
    back = load_training(p1)
    assert np.array_equal(back.locations, train.locations)
    assert np.array_equal(back.covariates, train.covariates)
    assert np.array_equal(back.responses, train.responses)
    # save -> load -> save is byte-stable
    p2 = tmp_path / "b.csv"
    save_training(p2, back)
    assert p1.read_bytes() == p2.read_bytes()

    targets = TargetSet(rng.normal(size=(5, 3)), rng.normal(size=(5, 2)))
    p3 = tmp_path / "t.csv"
    save_target(p3, targets)
    back_t = load_target(p3)
    assert np.array_equal(back_t.locations, targets.locations)
    assert np.array_equal(back_t.covariates, targets.covariates)


def test_load_target_basic(tmp_path):
    path = tmp_path / "targets.csv"
    path.write_text("s1,x1\n0.5,0.5\n-0.5,-0.5\n")
    t = load_target(path)
    assert t.m == 2 and t.dim == 1


def test_duplicate_target_locations_rejected(tmp_path):
    path = tmp_path / "targets.csv"
    path.write_text("s1,x1\n0.5,1\n0.5,2\n")
    with pytest.raises(ValidationError, match="duplicate"):
        load_target(path)


def test_rank_deficient_targets_rejected(tmp_path):
    path = tmp_path / "targets.csv"
    path.write_text("s1,x1\n0.1,0\n0.2,0\n0.3,0\n")
    with pytest.raises(ValidationError, match="rank"):
        load_target(path)


def test_training_set_invariants():
    with pytest.raises(ValidationError, match="inconsistent"):
        TrainingSet([[0.0], [1.0]], [[1.0]], [0.0, 1.0])
    with pytest.raises(ValidationError, match="non-finite"):
        TrainingSet([[0.0]], [[np.nan]], [0.0])
    ts = TrainingSet([[0.0], [1.0]], [[1.0], [2.0]], [0.0, 1.0])
    with pytest.raises(ValueError):
        ts.locations[0, 0] = 5.0  # frozen arrays


def test_target_trailing_column_rejected(tmp_path):
    path = tmp_path / "targets.csv"
    path.write_text("s1,x1,y\n0.5,1,0\n")
    with pytest.raises(SchemaError, match="trailing"):
        load_target(path)
