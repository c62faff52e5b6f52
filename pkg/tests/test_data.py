"""Shapes generator, the class-separating statistic, and PPM image I/O."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import hdit.data as data
from hdit.rng import DATA, RngStream


@pytest.fixture
def shapes32():
    return data.gen_shapes(64, 32, RngStream(0, DATA))


# ----------------------------------------------------------------------
# generator
# ----------------------------------------------------------------------
def test_gen_shapes_basic(shapes32):
    ds = shapes32
    assert len(ds) == 64
    assert ds.images.shape == (64, 32, 32, 3)
    assert ds.images.dtype == np.float32
    assert ds.labels.dtype == np.int64
    assert ds.class_count == 2
    assert set(np.unique(ds.labels)) <= {0, 1}
    assert ds.images.min() >= -1.0 and ds.images.max() <= 1.0


def test_gen_shapes_deterministic():
    a = data.gen_shapes(8, 32, RngStream(7, DATA, 3))
    b = data.gen_shapes(8, 32, RngStream(7, DATA, 3))
    c = data.gen_shapes(8, 32, RngStream(8, DATA, 3))
    np.testing.assert_array_equal(a.images, b.images)
    np.testing.assert_array_equal(a.labels, b.labels)
    assert not np.array_equal(a.images, c.images)


def test_gen_shapes_background_is_black(shapes32):
    # corners stay background: shapes are kept inside the frame with margin
    corners = shapes32.images[:, 0, 0, :]
    np.testing.assert_array_equal(corners, -1.0)


def test_gen_shapes_has_both_classes(shapes32):
    assert (shapes32.labels == 0).sum() > 5
    assert (shapes32.labels == 1).sum() > 5


def test_gen_shapes_rejects_tiny_res():
    with pytest.raises(ValueError):
        data.gen_shapes(4, 8, RngStream(0, DATA))


# ----------------------------------------------------------------------
# the separating statistic
# ----------------------------------------------------------------------
def test_radial_variance_uniform_disk_and_square():
    """Continuum values: disk r^2/2, square 2h^2/3 (discretization leaves a
    percent-level gap at 64 pixels)."""
    res = 64
    disk = -1.0 + 2.0 * data._disk_coverage(res, 32.0, 32.0, 12.0)[..., None] \
        * np.ones(3)
    got = data.radial_variance(disk)
    assert abs(got - 12.0 ** 2 / 2) / (12.0 ** 2 / 2) < 0.02
    sq = -1.0 + 2.0 * data._square_coverage(res, 32.0, 32.0, 12.0)[..., None] \
        * np.ones(3)
    got = data.radial_variance(sq)
    assert abs(got - 2 * 12.0 ** 2 / 3) / (2 * 12.0 ** 2 / 3) < 0.02


def test_radial_variance_empty_image():
    assert data.radial_variance(np.full((16, 16, 3), -1.0)) == 0.0


def test_statistic_separates_classes(shapes32):
    stats = np.array([data.radial_variance(im) for im in shapes32.images])
    thr = data.shape_threshold(32)
    disks = stats[shapes32.labels == 0]
    squares = stats[shapes32.labels == 1]
    assert disks.max() < thr < squares.min()


def test_classifier_self_accuracy():
    for res in (32, 64):
        ds = data.gen_shapes(128, res, RngStream(3, DATA))
        pred = data.classify_shapes(ds.images)
        assert (pred == ds.labels).mean() == 1.0


def test_shape_threshold_scaling():
    assert data.shape_threshold(32) == 30.0
    assert data.shape_threshold(64) == 120.0


# ----------------------------------------------------------------------
# quantization
# ----------------------------------------------------------------------
def test_quantize_round_trip_error_bound():
    rng = RngStream(4, DATA)
    img = rng.uniform((8, 8, 3)) * 2.0 - 1.0
    back = data.dequantize(data.quantize(img))
    assert np.abs(back - img).max() <= 0.5 / 127.5 + 1e-6


def test_quantize_endpoints():
    assert data.quantize(np.array([[[-1.0, 0.0, 1.0]]])).reshape(-1).tolist() \
        == [0, 128, 255]
    out = data.quantize(np.array([[[-3.0, 3.0, 0.0]]]))  # clipped
    assert out.reshape(-1).tolist() == [0, 255, 128]


@settings(max_examples=50, deadline=None)
@given(st.floats(-1.0, 1.0, allow_nan=False))
def test_property_quantize_idempotent(v):
    img = np.full((1, 1, 3), v)
    once = data.dequantize(data.quantize(img))
    twice = data.dequantize(data.quantize(once))
    np.testing.assert_array_equal(once, twice)


# ----------------------------------------------------------------------
# PPM I/O
# ----------------------------------------------------------------------
def test_ppm_round_trip(tmp_path):
    rng = RngStream(5, DATA)
    img = (rng.uniform((9, 7, 3)) * 2.0 - 1.0).astype(np.float32)
    p = tmp_path / "img.ppm"
    data.save_image(img, p)
    back = data.load_image(p)
    assert back.shape == (9, 7, 3)
    np.testing.assert_array_equal(data.quantize(back), data.quantize(img))


def test_ppm_header_format(tmp_path):
    p = tmp_path / "img.ppm"
    data.save_image(np.zeros((3, 5, 3)), p)
    blob = p.read_bytes()
    assert blob.startswith(b"P6\n5 3\n255\n")
    assert len(blob) == len(b"P6\n5 3\n255\n") + 3 * 5 * 3


def test_ppm_black_image(tmp_path):
    p = tmp_path / "black.ppm"
    data.save_image(np.full((4, 4, 3), -1.0), p)
    np.testing.assert_array_equal(data.load_image(p), -1.0)


def test_ppm_comments_in_header(tmp_path):
    p = tmp_path / "c.ppm"
    payload = bytes(range(2 * 2 * 3))
    p.write_bytes(b"P6\n# a comment\n2 # inline\n2\n# more\n255\n" + payload)
    img = data.load_image(p)
    assert img.shape == (2, 2, 3)
    np.testing.assert_array_equal(
        data.quantize(img).reshape(-1), np.frombuffer(payload, dtype=np.uint8))


def test_ppm_rejects_bad_magic(tmp_path):
    p = tmp_path / "bad.ppm"
    p.write_bytes(b"P3\n1 1\n255\n000")
    with pytest.raises(ValueError):
        data.load_image(p)


def test_ppm_rejects_bad_maxval(tmp_path):
    p = tmp_path / "bad.ppm"
    p.write_bytes(b"P6\n1 1\n65535\n" + b"\0" * 6)
    with pytest.raises(ValueError):
        data.load_image(p)


def test_ppm_rejects_truncation(tmp_path):
    p = tmp_path / "bad.ppm"
    p.write_bytes(b"P6\n4 4\n255\n" + b"\0" * 10)
    with pytest.raises(ValueError):
        data.load_image(p)
    p.write_bytes(b"P6\n4")
    with pytest.raises(ValueError):
        data.load_image(p)


def test_save_image_rejects_bad_shape(tmp_path):
    with pytest.raises(ValueError):
        data.save_image(np.zeros((4, 4)), tmp_path / "x.ppm")


# ----------------------------------------------------------------------
# grids and folders
# ----------------------------------------------------------------------
def test_save_grid_dimensions(tmp_path):
    imgs = np.full((5, 6, 6, 3), 0.25, dtype=np.float32)
    p = tmp_path / "grid.ppm"
    data.save_grid(imgs, p, cols=2)
    grid = data.load_image(p)
    assert grid.shape == (18, 12, 3)  # 3 rows x 2 cols, one slot padded
    np.testing.assert_array_equal(data.quantize(grid[12:, 6:]),
                                  data.quantize(np.full((6, 6, 3), -1.0)))


def test_load_folder_order_and_stack(tmp_path):
    for i, name in enumerate(["b.ppm", "a.ppm", "c.ppm"]):
        data.save_image(np.full((4, 4, 3), -1.0 + i * 0.5), tmp_path / name)
    ds = data.load_folder(tmp_path)
    assert len(ds) == 3
    assert ds.labels is None
    # lexicographic: a (i=1), b (i=0), c (i=2)
    want = [data.dequantize(data.quantize(np.float64(-1.0 + i * 0.5)))
            for i in (1, 0, 2)]
    np.testing.assert_allclose(ds.images[:, 0, 0, 0], want, rtol=1e-6)


def test_load_folder_resize(tmp_path):
    img = np.full((8, 12, 3), -1.0)
    img[:, :6] = 1.0  # left half bright; center crop keeps columns 2..9
    data.save_image(img, tmp_path / "wide.ppm")
    ds = data.load_folder(tmp_path, res=4)
    assert ds.images.shape == (1, 4, 4, 3)
    assert ds.images[0, 0, 0, 0] > 0.9   # left of the crop
    assert ds.images[0, 0, -1, 0] < -0.9  # right of the crop


def test_load_folder_rejects_empty_and_mixed(tmp_path):
    with pytest.raises(ValueError):
        data.load_folder(tmp_path)
    data.save_image(np.zeros((4, 4, 3)), tmp_path / "a.ppm")
    data.save_image(np.zeros((6, 6, 3)), tmp_path / "b.ppm")
    with pytest.raises(ValueError):
        data.load_folder(tmp_path)
