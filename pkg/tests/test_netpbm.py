import numpy as np
import pytest

from pretextseg.errors import DataError, FormatError
from pretextseg.netpbm import read_pgm, read_ppm, write_pgm, write_ppm


class TestPpm:
    def test_round_trip_within_half_quantization_step(self, tmp_path):
        rng = np.random.default_rng(0)
        img = rng.uniform(0, 1, (3, 7, 5))
        path = tmp_path / "img.ppm"
        write_ppm(path, img)
        back = read_ppm(path)
        assert back.shape == (3, 7, 5)
        assert np.abs(back - img).max() <= 1.0 / 510

    def test_single_black_pixel_bytes(self, tmp_path):
        path = tmp_path / "black.ppm"
        write_ppm(path, np.zeros((3, 1, 1)))
        assert path.read_bytes() == b"P6\n1 1\n255\n\x00\x00\x00"

    def test_round_half_up(self, tmp_path):
        # 0.5/255 quantizes up to byte 1, just below stays at 0
        img = np.zeros((3, 1, 2))
        img[:, 0, 0] = 0.5 / 255
        img[:, 0, 1] = 0.4999 / 255
        path = tmp_path / "q.ppm"
        write_ppm(path, img)
        assert path.read_bytes()[-6:] == b"\x01\x01\x01\x00\x00\x00"

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.ppm"
        path.write_bytes(b"P5\n1 1\n255\n\x00\x00\x00")
        with pytest.raises(FormatError, match="magic") as exc:
            read_ppm(path)
        assert exc.value.offset == 0

    def test_truncated_payload_positioned(self, tmp_path):
        path = tmp_path / "short.ppm"
        path.write_bytes(b"P6\n2 2\n255\n\x00\x00\x00")
        with pytest.raises(FormatError, match="truncated") as exc:
            read_ppm(path)
        assert exc.value.offset == 14

    def test_trailing_bytes_rejected(self, tmp_path):
        path = tmp_path / "long.ppm"
        path.write_bytes(b"P6\n1 1\n255\n\x00\x00\x00\x00")
        with pytest.raises(FormatError, match="trailing"):
            read_ppm(path)

    def test_non_255_maxval_rejected(self, tmp_path):
        path = tmp_path / "max.ppm"
        path.write_bytes(b"P6\n1 1\n65535\n\x00\x00\x00")
        with pytest.raises(FormatError, match="maxval"):
            read_ppm(path)

    def test_garbage_header_positioned(self, tmp_path):
        path = tmp_path / "garbage.ppm"
        path.write_bytes(b"P6\nxx 1\n255\n")
        with pytest.raises(FormatError) as exc:
            read_ppm(path)
        assert exc.value.offset == 3

    def test_comments_allowed(self, tmp_path):
        path = tmp_path / "comment.ppm"
        path.write_bytes(b"P6\n# a comment\n1 1\n255\n\x01\x02\x03")
        img = read_ppm(path)
        np.testing.assert_allclose(img.reshape(3), np.array([1, 2, 3]) / 255.0)

    def test_out_of_range_values_rejected(self, tmp_path):
        with pytest.raises(DataError, match="0,1"):
            write_ppm(tmp_path / "x.ppm", np.full((3, 1, 1), 1.5))


class TestPgm:
    def test_lossless_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        mask = rng.integers(0, 9, (6, 4))
        path = tmp_path / "mask.pgm"
        write_pgm(path, mask)
        np.testing.assert_array_equal(read_pgm(path), mask)

    def test_all_zero_payload(self, tmp_path):
        path = tmp_path / "zero.pgm"
        write_pgm(path, np.zeros((2, 3), dtype=int))
        assert path.read_bytes()[-6:] == b"\x00" * 6

    def test_byte_histogram_matches_label_histogram(self, tmp_path):
        rng = np.random.default_rng(2)
        mask = rng.integers(0, 4, (8, 8))
        path = tmp_path / "hist.pgm"
        write_pgm(path, mask)
        payload = path.read_bytes()[len(b"P5\n8 8\n255\n") :]
        byte_hist = np.bincount(np.frombuffer(payload, dtype=np.uint8), minlength=4)
        label_hist = np.bincount(mask.reshape(-1), minlength=4)
        np.testing.assert_array_equal(byte_hist[:4], label_hist)

    def test_label_above_255_rejected(self, tmp_path):
        with pytest.raises(DataError, match="0..255"):
            write_pgm(tmp_path / "big.pgm", np.full((2, 2), 256))

    def test_labels_stored_verbatim(self, tmp_path):
        mask = np.array([[0, 1], [2, 255]])
        path = tmp_path / "verbatim.pgm"
        write_pgm(path, mask)
        assert path.read_bytes()[-4:] == b"\x00\x01\x02\xff"
