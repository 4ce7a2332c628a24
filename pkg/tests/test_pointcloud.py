import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from vvnet.pointcloud import (CloudFormatError, LabeledPointCloud, bounding_box,
                              farthest_point_sample, load_cloud, save_cloud)


def test_load_with_labels(tmp_path):
    f = tmp_path / "c.txt"
    f.write_text("0 0 0 1\n1 1 1 2")
    cloud = load_cloud(f, has_labels=True)
    assert cloud.n == 2
    assert cloud.labels.tolist() == [1, 2]
    np.testing.assert_array_equal(cloud.points, [[0, 0, 0], [1, 1, 1]])


def test_load_windows_line_endings_and_blank_lines(tmp_path):
    f = tmp_path / "c.txt"
    f.write_bytes(b"0 0 0\r\n\r\n1 2 3\r\n")
    assert load_cloud(f).n == 2


def test_empty_file_is_zero_points(tmp_path):
    f = tmp_path / "c.txt"
    f.write_text("")
    with pytest.raises(CloudFormatError, match="zero points"):
        load_cloud(f)


def test_malformed_line_reports_line_number(tmp_path):
    f = tmp_path / "c.txt"
    f.write_text("0 0 abc\n")
    with pytest.raises(CloudFormatError, match="line 1"):
        load_cloud(f)


@pytest.mark.parametrize("text", ["0 0 nan\n", "1 2 3\n0 inf 0\n"])
def test_non_finite_rejected(tmp_path, text):
    f = tmp_path / "c.txt"
    f.write_text(text)
    with pytest.raises(CloudFormatError, match="non-finite"):
        load_cloud(f)


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_cloud(tmp_path / "nope.txt")


def test_wrong_field_count(tmp_path):
    f = tmp_path / "c.txt"
    f.write_text("0 0 0\n1 1 1 5\n")
    with pytest.raises(CloudFormatError, match="line 2"):
        load_cloud(f)


def test_label_count_must_match():
    with pytest.raises(CloudFormatError):
        LabeledPointCloud(np.zeros((3, 3)), [0, 1])


coords = arrays(np.float64, st.tuples(st.integers(1, 40), st.just(3)),
                elements=st.floats(-1e6, 1e6, allow_nan=False))


@given(coords, st.booleans())
@settings(max_examples=50, deadline=None)
def test_save_load_round_trip(tmp_path_factory, pts, with_labels):
    labels = np.arange(len(pts)) % 7 if with_labels else None
    cloud = LabeledPointCloud(pts, labels)
    path = tmp_path_factory.mktemp("rt") / "c.txt"
    save_cloud(cloud, path)
    back = load_cloud(path, has_labels=with_labels)
    np.testing.assert_array_equal(back.points, cloud.points)
    if with_labels:
        np.testing.assert_array_equal(back.labels, cloud.labels)


def test_bounding_box_examples():
    b = bounding_box(LabeledPointCloud([[2, 3, 4]]))
    assert b.min.tolist() == [2, 3, 4] and b.max.tolist() == [2, 3, 4]
    b = bounding_box(LabeledPointCloud([[0, 0, 0], [1, 2, 3]]))
    assert b.min.tolist() == [0, 0, 0] and b.max.tolist() == [1, 2, 3]
    b = bounding_box(LabeledPointCloud([[-1, 0, 0], [1, 0, 0]]))
    assert b.extent[0] == 2


SQUARE = LabeledPointCloud([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]])


def test_fps_square_diagonal():
    assert farthest_point_sample(SQUARE, 2, seed=0) == [0, 2]


def test_fps_all_points():
    out = farthest_point_sample(SQUARE, 4, seed=0)
    assert sorted(out) == [0, 1, 2, 3]
    # after the diagonal, 1 and 3 tie; lowest index first
    assert out == [0, 2, 1, 3]


def test_fps_seed_picks_start():
    assert farthest_point_sample(SQUARE, 1, seed=6) == [2]


@pytest.mark.parametrize("count", [0, 5])
def test_fps_count_errors(count):
    with pytest.raises(ValueError):
        farthest_point_sample(SQUARE, count)


@given(arrays(np.float64, st.tuples(st.integers(2, 30), st.just(3)),
              elements=st.floats(-10, 10, allow_nan=False)),
       st.integers(0, 100), st.data())
@settings(max_examples=50, deadline=None)
def test_fps_deterministic_and_distinct(pts, seed, data):
    cloud = LabeledPointCloud(pts)
    count = data.draw(st.integers(1, cloud.n))
    a = farthest_point_sample(cloud, count, seed)
    assert a == farthest_point_sample(cloud, count, seed)
    assert len(set(a)) == count


def _min_pair(pts, idx):
    return min(np.linalg.norm(pts[i] - pts[j]) for i, j in itertools.combinations(idx, 2))


@given(arrays(np.float64, st.tuples(st.integers(3, 8), st.just(3)),
              elements=st.floats(-5, 5, allow_nan=False), unique=True),
       st.integers(0, 20), st.data())
@settings(max_examples=80, deadline=None)
def test_fps_dispersion_against_all_subsets(pts, seed, data):
    # greedy selection is a 2-approximation of the best min-pairwise distance
    cloud = LabeledPointCloud(pts)
    count = data.draw(st.integers(2, cloud.n))
    got = _min_pair(pts, farthest_point_sample(cloud, count, seed))
    best = max(_min_pair(pts, s) for s in itertools.combinations(range(cloud.n), count))
    assert got >= 0.5 * best - 1e-12
    assert got <= best + 1e-12
