import numpy as np
import pytest

from prtebounds.data import Dataset, load_csv, write_csv
from prtebounds.errors import MissingDataError, ValidationError


def test_dataset_validation():
    with pytest.raises(ValidationError, match="rows \\[1\\]"):
        Dataset([0.1, 0.2], [0, 2], [0, 1])
    with pytest.raises(ValidationError, match="outside"):
        Dataset([0.1, 1.5], [0, 1], [0, 1])
    with pytest.raises(ValidationError):
        Dataset([], [], [])
    ds = Dataset([0.1, 0.2, 0.3], [0, 1, 1], ["a", "b", "a"], [[1.0], [2.0], [3.0]])
    assert ds.x_names == ("x1",) and ds.labels() == ["a", "b"]
    sub = ds.subset([0, 2])
    assert sub.n == 2 and sub.y.tolist() == [0.1, 0.3]
    with pytest.raises(ValueError):
        ds.y[0] = 5.0  # arrays are read-only


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    ds = Dataset(rng.uniform(size=20), rng.integers(0, 2, 20), rng.uniform(size=20),
                 rng.normal(size=(20, 2)), 0.0, 1.0, "continuous")
    p = tmp_path / "d.csv"
    write_csv(ds, p)
    back = load_csv(p, {"instrument_kind": "continuous", "y_min": 0.0, "y_max": 1.0})
    for f in ("y", "w", "z", "x"):
        assert np.array_equal(getattr(back, f), getattr(ds, f))
    assert back.x_names == ("x1", "x2")


def test_csv_errors(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("y,w\n1,0\n")
    with pytest.raises(MissingDataError):
        load_csv(p)
    p.write_text("y,w,z\nabc,0,1\n")
    with pytest.raises(ValidationError, match="row 1"):
        load_csv(p)
    p.write_text("y,w,z\n0.5,0,1\n3,1,1\n")
    with pytest.raises(ValidationError, match="rows \\[2\\]"):
        load_csv(p, {"y_min": 0, "y_max": 1})
    p.write_text("y,w,z\n0.5,0,a\n")
    with pytest.raises(ValidationError):
        load_csv(p, {"instrument_kind": "continuous"})
