import numpy as np
import pytest

from gradrev import formats
from gradrev.errors import IngestionError


def test_pgm_round_trip(tmp_path):
    img = np.random.default_rng(0).integers(0, 256, size=(7, 11)) / 255.0
    path = tmp_path / "a.pgm"
    formats.write_pgm(path, img)
    back = formats.read_pgm(path)
    assert back.shape == (7, 11)
    np.testing.assert_array_equal(back, img)


def test_pgm_write_clips_and_header_comments(tmp_path):
    path = tmp_path / "b.pgm"
    formats.write_pgm(path, np.array([[-1.0, 2.0], [0.5, 0.0]]))
    np.testing.assert_array_equal(formats.read_pgm(path), [[0.0, 1.0], [128 / 255, 0.0]])
    commented = tmp_path / "c.pgm"
    commented.write_bytes(b"P5\n# made by hand\n2 1\n# max\n100\n" + bytes([0, 100]))
    np.testing.assert_array_equal(formats.read_pgm(commented), [[0.0, 1.0]])


def test_pgm_rejects_bad_files(tmp_path):
    bad = tmp_path / "bad.pgm"
    bad.write_bytes(b"P2\n2 2\n255\n0 0 0 0")
    with pytest.raises(IngestionError, match="magic") as err:
        formats.read_pgm(bad)
    assert "bad.pgm" in str(err.value)
    short = tmp_path / "short.pgm"
    short.write_bytes(b"P5\n4 4\n255\n" + bytes(5))
    with pytest.raises(IngestionError, match="pixel bytes"):
        formats.read_pgm(short)
    with pytest.raises(IngestionError):
        formats.read_pgm(tmp_path / "missing.pgm")


def test_bundled_model_file():
    m = formats.read_model_file()
    assert m.shape == (9, 3)
    assert m[4, 2] > m[:, 2].max() - 1e-12  # nose tip is the most forward point


def test_model_file_errors(tmp_path):
    p = tmp_path / "m.txt"
    p.write_text("# comment\n" + "1 2 3\n" * 8)
    with pytest.raises(IngestionError, match="9 points"):
        formats.read_model_file(p)
    p.write_text("1 2\n" * 9)
    with pytest.raises(IngestionError):
        formats.read_model_file(p)


def test_landmark_csv_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    rows = {"a.pgm": rng.random((9, 2)) * 90, "b.pgm": rng.random((9, 2)) * 90}
    path = tmp_path / "lm.csv"
    formats.write_landmark_csv(path, rows)
    back = formats.read_landmark_csv(path)
    assert list(back) == ["a.pgm", "b.pgm"]
    for k in rows:
        assert back[k].tobytes() == rows[k].tobytes()


def test_landmark_csv_errors(tmp_path):
    path = tmp_path / "lm.csv"
    path.write_text("a.pgm,1,2,3\n")
    with pytest.raises(IngestionError, match="fields"):
        formats.read_landmark_csv(path)
    path.write_text("h" + ",x" * 18 + "\n" + "a.pgm" + ",zz" * 18 + "\n")
    with pytest.raises(IngestionError, match="non-numeric"):
        formats.read_landmark_csv(path)
