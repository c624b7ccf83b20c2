import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from pgdenoise.errors import ImageIOError
from pgdenoise.image import AugmentOp, augment, list_images, load_image, random_crop, save_image
from pgdenoise.rng import RngState

f32 = st.floats(-1e6, 1e6, allow_nan=False, width=32)
shapes = st.tuples(st.integers(1, 12), st.integers(1, 12))


class TestPfm:
    @settings(max_examples=30, deadline=None)
    @given(arrays(np.float32, shapes, elements=f32))
    def test_round_trip_exact(self, tmp_path_factory, img):
        path = tmp_path_factory.mktemp("pfm") / "x.pfm"
        save_image(img.astype(np.float64), path)
        back = load_image(path)
        assert back.dtype == np.float64
        assert np.array_equal(back, img.astype(np.float64))

    def test_row_order_bottom_to_top(self, tmp_path):
        img = np.array([[1.0, 2.0], [3.0, 4.0]])
        save_image(img, tmp_path / "a.pfm")
        raw = (tmp_path / "a.pfm").read_bytes()
        first_row = np.frombuffer(raw[-16:-8], dtype="<f4")
        assert first_row.tolist() == [3.0, 4.0]

    def test_big_endian_read(self, tmp_path):
        img = np.array([[0.25, 0.5, 1.5]], dtype=">f4")
        (tmp_path / "b.pfm").write_bytes(b"Pf\n3 1\n1.0\n" + img.tobytes())
        assert load_image(tmp_path / "b.pfm").tolist() == [[0.25, 0.5, 1.5]]

    def test_truncated(self, tmp_path):
        (tmp_path / "t.pfm").write_bytes(b"Pf\n4 4\n-1.0\n" + b"\0" * 10)
        with pytest.raises(ImageIOError):
            load_image(tmp_path / "t.pfm")

    def test_color_rejected(self, tmp_path):
        (tmp_path / "c.pfm").write_bytes(b"PF\n1 1\n-1.0\n" + b"\0" * 12)
        with pytest.raises(ImageIOError, match="color"):
            load_image(tmp_path / "c.pfm")


class TestPgm:
    @pytest.mark.parametrize("depth,maxval", [(8, 255), (16, 65535)])
    def test_round_trip_of_quantized_values(self, tmp_path, depth, maxval):
        q = RngState(depth).integers(maxval + 1, size=35).reshape(5, 7)
        img = q / maxval
        save_image(img, tmp_path / "q.pgm", bit_depth=depth)
        back = load_image(tmp_path / "q.pgm")
        assert np.array_equal(np.round(back * maxval), q)

    def test_values_clipped_on_write(self, tmp_path):
        save_image(np.array([[-0.5, 0.5, 2.0]]), tmp_path / "c.pgm")
        assert np.round(load_image(tmp_path / "c.pgm") * 255).tolist() == [[0, 128, 255]]

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x.pgm").write_bytes(b"P2\n1 1\n255\n0\n")
        with pytest.raises(ImageIOError):
            load_image(tmp_path / "x.pgm")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ImageIOError):
            load_image(tmp_path / "nope.pgm")

    def test_unknown_suffix(self, tmp_path):
        with pytest.raises(ImageIOError):
            save_image(np.zeros((2, 2)), tmp_path / "x.png")


def test_list_images_sorted(tmp_path):
    for name in ("b.pfm", "a.pgm", "c.txt"):
        (tmp_path / name).write_bytes(b"")
    assert [p.name for p in list_images(tmp_path)] == ["a.pgm", "b.pfm"]


class TestAugment:
    @given(arrays(np.float64, shapes, elements=st.floats(-10, 10)), st.sampled_from(AugmentOp.all()))
    def test_inverse_restores(self, img, op):
        assert np.array_equal(augment(augment(img, op), op.inverse()), img)

    @given(arrays(np.float64, shapes, elements=st.floats(-10, 10)), st.sampled_from(AugmentOp.all()))
    def test_is_a_permutation(self, img, op):
        out = augment(img, op)
        assert sorted(out.ravel().tolist()) == sorted(img.ravel().tolist())

    def test_eight_distinct_ops(self):
        img = np.arange(12.0).reshape(3, 4)
        outs = {augment(img, op).tobytes() + bytes(augment(img, op).shape) for op in AugmentOp.all()}
        assert len(outs) == 8

    def test_rotation_is_counter_clockwise(self):
        img = np.array([[1, 2], [3, 4]])
        assert augment(img, AugmentOp(90)).tolist() == [[2, 4], [1, 3]]

    def test_bad_rotation(self):
        with pytest.raises(ValueError):
            AugmentOp(45)


def test_random_crop_bounds():
    img = np.arange(100.0).reshape(10, 10)
    rng = RngState(0)
    for _ in range(50):
        c = random_crop(img, 4, rng)
        assert c.shape == (4, 4)
        r0, c0 = divmod(int(c[0, 0]), 10)
        assert np.array_equal(c, img[r0:r0 + 4, c0:c0 + 4])
    with pytest.raises(ValueError):
        random_crop(img, 11, rng)
