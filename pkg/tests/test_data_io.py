import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ictrees import data_io
from ictrees.data_io import ColumnSpec, Dataset, Kind
from ictrees.errors import EmptyData, ParseError, UnknownCategory


def write(tmp_path, text, name="d.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_inference_of_column_kinds(tmp_path):
    data = data_io.load_csv(write(tmp_path, "a,b\n1,x\n2,y\n"))
    assert data.m == 2 and data.n == 2
    assert data.columns[0] == ColumnSpec("a", Kind.NUMERIC)
    assert data.columns[1] == ColumnSpec("b", Kind.SYMBOLIC, ("x", "y"))
    np.testing.assert_array_equal(data.values, [[1, 0], [2, 1]])


def test_header_only_is_empty(tmp_path):
    with pytest.raises(EmptyData):
        data_io.load_csv(write(tmp_path, "a,b\n"))


def test_declared_kind_violation_reports_row(tmp_path):
    with pytest.raises(ParseError) as info:
        data_io.load_csv(write(tmp_path, "a\n1\nfoo\n"), [ColumnSpec("a", Kind.NUMERIC)])
    assert info.value.row == 2
    assert info.value.column == "a"


def test_missing_cells_are_rejected(tmp_path):
    with pytest.raises(ParseError, match="missing"):
        data_io.load_csv(write(tmp_path, "a,b\n1,\n2,y\n"))


def test_unknown_category_under_schema(tmp_path):
    spec = [ColumnSpec("b", Kind.SYMBOLIC, ("x", "y"))]
    with pytest.raises(UnknownCategory):
        data_io.load_csv(write(tmp_path, "b\nx\nz\n"), spec)


def test_schema_sidecar_keeps_category_order(tmp_path):
    spec = [ColumnSpec("a", Kind.NUMERIC), ColumnSpec("b", Kind.SYMBOLIC, ("y", "x"))]
    data_io.save_schema(spec, tmp_path / "s.json")
    assert json.loads((tmp_path / "s.json").read_text())["columns"][1]["categories"] == ["y", "x"]
    loaded = data_io.load_schema(tmp_path / "s.json")
    data = data_io.load_csv(write(tmp_path, "a,b\n1,x\n2,y\n"), loaded)
    np.testing.assert_array_equal(data.values[:, 1], [1, 0])


def test_column_spec_invariants():
    with pytest.raises(ValueError):
        ColumnSpec("a", Kind.NUMERIC, ("x",))
    with pytest.raises(ValueError):
        ColumnSpec("a", Kind.SYMBOLIC, ("x", "x"))


def test_dataset_is_immutable(iris):
    with pytest.raises(ValueError):
        iris.values[0, 0] = 1.0


def test_iris_fixture(iris):
    assert (iris.n, iris.m) == (150, 5)
    assert iris.columns[4].categories == ("setosa", "versicolor", "virginica")


@settings(max_examples=30, deadline=None)
@given(
    st.lists(
        st.tuples(st.floats(-1e6, 1e6, allow_nan=False), st.sampled_from(["p", "q", "r"])),
        min_size=1,
        max_size=20,
    )
)
def test_save_load_round_trip(tmp_path_factory, rows):
    tmp = tmp_path_factory.mktemp("rt")
    labels = sorted({r[1] for r in rows})
    cols = (ColumnSpec("v", Kind.NUMERIC), ColumnSpec("s", Kind.SYMBOLIC, tuple(labels)))
    data = Dataset(cols, [[v, labels.index(s)] for v, s in rows])
    data_io.save_csv(data, tmp / "rt.csv")
    again = data_io.load_csv(tmp / "rt.csv")
    assert again.columns == data.columns
    np.testing.assert_array_equal(again.values, data.values)
    # inference is idempotent
    data_io.save_csv(again, tmp / "rt2.csv")
    assert data_io.load_csv(tmp / "rt2.csv").columns == again.columns


def test_split_sizes_follow_protocol(iris):
    train, test = data_io.split(iris, 0.1, seed=0)
    assert (train.n, test.n) == (135, 15)


def test_split_clamps_tiny_data():
    data = Dataset((ColumnSpec("a", Kind.NUMERIC),), [[1.0], [2.0]])
    train, test = data_io.split(data, 0.1, seed=3)
    assert (train.n, test.n) == (1, 1)


def test_split_is_a_deterministic_partition(iris):
    a = data_io.split(iris, 0.25, seed=9)
    b = data_io.split(iris, 0.25, seed=9)
    np.testing.assert_array_equal(a[1].values, b[1].values)
    joined = np.vstack([a[0].values, a[1].values])
    assert joined.shape[0] == iris.n
    # multiset equality of rows
    key = lambda arr: sorted(map(tuple, arr))
    assert key(joined) == key(iris.values)


def test_robot_grab_offsets():
    data = data_io.synth_robot_grab(5000, 10.0, seed=1)
    dx = data.column("x_rob") - data.column("x_obj")
    dy = data.column("y_rob") - data.column("y_obj")
    assert np.all((0 <= dx) & (dx < 1)) and np.all((0 <= dy) & (dy < 1))
    assert np.all((data.column("x_obj") >= 0) & (data.column("x_obj") < 10))
    assert data_io.synth_robot_grab(1, seed=0).n == 1
    np.testing.assert_array_equal(data.values, data_io.synth_robot_grab(5000, 10.0, seed=1).values)


def test_two_uniforms_clusters_are_separated():
    data, labels = data_io.synth_two_uniforms(1000, seed=0, return_labels=True)
    a = data.values[labels == 0]
    b = data.values[labels == 1]
    # bounding boxes disjoint: separated along x
    assert a[:, 0].max() < b[:, 0].min()
    assert a[:, 0].max() <= 2.0 and b[:, 0].min() >= 3.0


def test_two_uniforms_dependent_cluster_correlation():
    # x ~ U(3,5): var 1/3; y = 2x + U(0, 1/2): var 4/3 + 1/48, cov 2/3
    expected = (2 / 3) / np.sqrt((1 / 3) * (4 / 3 + 1 / 48))
    assert expected == pytest.approx(0.99228, abs=1e-5)
    data, labels = data_io.synth_two_uniforms(20000, seed=5, return_labels=True)
    b = data.values[labels == 1]
    rho = np.corrcoef(b[:, 0], b[:, 1])[0, 1]
    assert rho > 0.9
    assert rho == pytest.approx(expected, abs=0.005)


def test_three_gaussians_shape_and_determinism():
    data, labels = data_io.synth_three_gaussians(301, seed=2, return_labels=True)
    assert data.n == 301 and data.m == 2
    assert np.bincount(labels).tolist() == [101, 100, 100]
    np.testing.assert_array_equal(data.values, data_io.synth_three_gaussians(301, seed=2).values)
    big, labels = data_io.synth_three_gaussians(30000, seed=2, return_labels=True)
    for k in range(3):
        np.testing.assert_allclose(big.values[labels == k].mean(axis=0), data_io.THREE_GAUSSIANS_MEANS[k], atol=0.1)
