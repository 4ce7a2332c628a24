import numpy as np
import pytest

from vvnet.synth import CATEGORIES, NUM_PARTS, build_parts, make_dataset, synth


@pytest.mark.parametrize("kind", sorted(CATEGORIES))
def test_labels_belong_to_category(kind):
    c = synth(kind, 300, seed=1)
    assert c.n == 300
    assert set(c.labels.tolist()) == set(CATEGORIES[kind])


@pytest.mark.parametrize("kind", sorted(CATEGORIES))
def test_noise_free_points_lie_on_their_parts(kind):
    seed = 4
    c = synth(kind, 400, seed=seed)
    parts = build_parts(kind, np.random.default_rng(seed))
    for pid, prims in zip(CATEGORIES[kind], parts):
        pts = c.points[c.labels == pid]
        on = np.zeros(len(pts), bool)
        for prim in prims:
            on |= prim.on_surface(pts, tol=1e-9)
        assert on.all()


def test_deterministic_per_seed():
    a, b = synth("chair", 128, 0.01, seed=7), synth("chair", 128, 0.01, seed=7)
    assert a.points.tobytes() == b.points.tobytes()
    assert a.labels.tobytes() == b.labels.tobytes()
    assert synth("chair", 128, 0.01, seed=8).points.tobytes() != a.points.tobytes()


def test_dataset_layout():
    ds = make_dataset(3, 64, seed=0)
    assert [k for k, _ in ds[:4]] == list(CATEGORIES)
    assert len(ds) == 12
    assert all(c.labels.max() < NUM_PARTS for _, c in ds)
    assert all(2 <= len(CATEGORIES[k]) <= 5 for k, _ in ds)


def test_bad_arguments():
    with pytest.raises(ValueError):
        synth("boat", 10)
    with pytest.raises(ValueError):
        synth("chair", 2)
