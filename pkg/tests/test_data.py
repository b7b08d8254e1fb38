import struct

import numpy as np
import numpy.testing as npt
import pytest

from ptrlab.data import (
    AugmentPolicy,
    DataFormatError,
    Dataset,
    augment,
    load_csv,
    load_idx,
    make_blobs,
    split_train_val,
)


def nearest_centroid_accuracy(train, test):
    centroids = np.stack([train.X[train.y == c].mean(axis=0) for c in range(train.n_classes)])
    d = ((test.X[:, None, :] - centroids[None]) ** 2).sum(axis=2)
    return float(np.mean(d.argmin(axis=1) == test.y))


def test_blobs_noise_free():
    ds = make_blobs(5, 4, 8, 3.0, 0.0, seed=1)
    assert ds.X.shape == (20, 8)
    assert nearest_centroid_accuracy(ds, ds) == 1.0
    npt.assert_allclose(np.linalg.norm(ds.X, axis=1), 3.0)


def test_blobs_deterministic():
    a = make_blobs(3, 5, 4, 2.0, 1.0, seed=9)
    b = make_blobs(3, 5, 4, 2.0, 1.0, seed=9)
    assert a.X.tobytes() == b.X.tobytes() and a.y.tobytes() == b.y.tobytes()
    held = make_blobs(3, 5, 4, 2.0, 1.0, seed=9, sample_seed=1)
    assert held.X.tobytes() != a.X.tobytes()


def test_blobs_nearest_centroid_heldout():
    train = make_blobs(20, 30, 64, 5.0, 1.0, seed=0)
    test = make_blobs(20, 30, 64, 5.0, 1.0, seed=0, sample_seed=1)
    assert nearest_centroid_accuracy(train, test) > 0.95


# --- IDX -------------------------------------------------------------------


def write_idx(tmp_path, images, labels, img_magic=0x803, lbl_magic=0x801):
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    ip, lp = tmp_path / "img.idx", tmp_path / "lbl.idx"
    ip.write_bytes(struct.pack(">IIII", img_magic, *images.shape) + images.tobytes())
    lp.write_bytes(struct.pack(">II", lbl_magic, len(labels)) + labels.tobytes())
    return ip, lp


def test_idx_fixture(tmp_path):
    ip, lp = write_idx(tmp_path, [[[0, 255], [128, 64]], [[1, 2], [3, 4]]], [3, 1])
    ds = load_idx(ip, lp)
    assert ds.X.shape == (2, 1, 2, 2)
    npt.assert_array_equal(ds.X[0].ravel(), [0, 1.0, 128 / 255, 64 / 255])
    npt.assert_array_equal(ds.y, [3, 1])
    assert ds.X.min() >= 0 and ds.X.max() <= 1


def test_idx_wrong_magic(tmp_path):
    ip, lp = write_idx(tmp_path, [[[0]]], [0], img_magic=0x801)
    with pytest.raises(DataFormatError, match="0x00000803"):
        load_idx(ip, lp)


def test_idx_truncated(tmp_path):
    ip, lp = write_idx(tmp_path, [[[0, 1], [2, 3]]] * 2, [0, 1])
    ip.write_bytes(ip.read_bytes()[:-1])
    with pytest.raises(DataFormatError, match="truncated"):
        load_idx(ip, lp)


def test_idx_count_mismatch(tmp_path):
    ip, lp = write_idx(tmp_path, [[[0]]] * 2, [0, 1, 1])
    with pytest.raises(DataFormatError, match="2 images but 3 labels"):
        load_idx(ip, lp)


def test_csv(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("1,0.5,2\n0,-1,3.25\n")
    ds = load_csv(p)
    npt.assert_array_equal(ds.y, [1, 0])
    npt.assert_array_equal(ds.X, [[0.5, 2], [-1, 3.25]])


# --- splits ----------------------------------------------------------------


def test_split_90_10():
    ds = make_blobs(10, 10, 3, 1.0, 1.0, seed=0)
    tr, va = split_train_val(ds, 0.1, seed=4)
    assert (len(tr), len(va)) == (90, 10)
    both = np.concatenate([tr.X, va.X])
    assert sorted(map(bytes, both)) == sorted(map(bytes, ds.X))
    assert not set(map(bytes, tr.X)) & set(map(bytes, va.X))


def test_split_deterministic():
    ds = make_blobs(4, 25, 3, 1.0, 1.0, seed=0)
    a, b = split_train_val(ds, 0.2, seed=1), split_train_val(ds, 0.2, seed=1)
    assert a[1].X.tobytes() == b[1].X.tobytes()


def test_split_singleton_class():
    X = np.arange(20, dtype=float)[:, None]
    y = np.array([0] * 19 + [1])
    with pytest.warns(UserWarning, match="class 1"):
        tr, va = split_train_val(Dataset(X, y, 2), 0.1, seed=0)
    assert set(va.y) == {0}
    assert 1 in tr.y
    assert tr.notes


def test_split_fraction_range():
    with pytest.raises(ValueError):
        split_train_val(make_blobs(2, 2, 2, 1, 1, 0), 1.0, 0)


# --- augmentation ----------------------------------------------------------


def test_augment_disabled_identity():
    img = np.random.default_rng(0).random((1, 4, 4))
    assert augment(img, AugmentPolicy(), np.random.default_rng(0)) is img


def test_flip_fixture():
    img = np.array([[[1.0, 2.0], [3.0, 4.0]]])
    rng = np.random.default_rng(0)
    flips = [augment(img, AugmentPolicy(flip_horizontal=True), rng) for _ in range(50)]
    flipped = [f for f in flips if not np.array_equal(f, img)]
    assert flipped and len(flipped) < 50
    npt.assert_array_equal(flipped[0], [[[2.0, 1.0], [4.0, 3.0]]])


def test_shift_moves_hot_pixel_at_most_one():
    rng = np.random.default_rng(1)
    for _ in range(100):
        img = np.zeros((1, 5, 5))
        r, c = rng.integers(0, 5, size=2)
        img[0, r, c] = 1.0
        out = augment(img, AugmentPolicy(max_shift_pixels=1), rng)
        assert out.shape == img.shape
        if out.sum() == 1.0:
            (r2, c2) = np.argwhere(out[0])[0]
            assert abs(r2 - r) <= 1 and abs(c2 - c) <= 1
        else:
            assert out.sum() == 0.0 and (r in (0, 4) or c in (0, 4))
