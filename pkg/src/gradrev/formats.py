"""Readers and writers for the on-disk formats: binary PGM images, the 9-point
3D model text file and the landmark CSV."""

from __future__ import annotations

import csv
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import IngestionError

NUM_LANDMARKS = 9


def read_pgm(path) -> np.ndarray:
    """Read an 8-bit binary (P5) PGM as a float64 array scaled to [0, 1]."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise IngestionError(path, f"unreadable: {exc}") from exc
    if raw[:2] != b"P5":
        raise IngestionError(path, f"bad magic number {raw[:2]!r}, expected b'P5'")
    tokens: list[bytes] = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace() and raw[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise IngestionError(path, "truncated header")
        tokens.append(raw[start:pos])
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise IngestionError(path, f"non-integer header field in {tokens!r}") from exc
    if width < 1 or height < 1 or not 0 < maxval < 256:
        raise IngestionError(path, f"unsupported header width={width} height={height} maxval={maxval}")
    pos += 1  # single whitespace byte ends the header
    data = raw[pos:pos + width * height]
    if len(data) != width * height:
        raise IngestionError(path, f"expected {width * height} pixel bytes, found {len(data)}")
    return np.frombuffer(data, dtype=np.uint8).reshape(height, width).astype(np.float64) / maxval


def write_pgm(path, image: np.ndarray) -> None:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {img.shape}")
    q = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + q.tobytes())


def read_model_file(path=None) -> np.ndarray:
    """Nine ``x y z`` rows; ``None`` loads the bundled generic face model.

    Blank lines and ``#`` comments are ignored. The model is not centred here.
    """
    if path is None:
        text = resources.files("gradrev").joinpath("data/face_model_9pt.txt").read_text()
        where = "face_model_9pt.txt"
    else:
        where = path
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise IngestionError(path, f"unreadable: {exc}") from exc
    rows = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise IngestionError(where, f"expected 3 numbers per line, got {line!r}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError as exc:
            raise IngestionError(where, f"non-numeric entry in {line!r}") from exc
    if len(rows) != NUM_LANDMARKS:
        raise IngestionError(where, f"expected {NUM_LANDMARKS} points, got {len(rows)}")
    return np.array(rows)


def read_landmark_csv(path) -> dict[str, np.ndarray]:
    """``image_name, x1, y1, ..., x9, y9`` rows (an optional header row is skipped)."""
    out: dict[str, np.ndarray] = {}
    try:
        with open(path, newline="") as fh:
            for lineno, row in enumerate(csv.reader(fh), start=1):
                if not row or not "".join(row).strip():
                    continue
                if len(row) != 1 + 2 * NUM_LANDMARKS:
                    raise IngestionError(path, f"line {lineno}: expected {1 + 2 * NUM_LANDMARKS} fields")
                try:
                    coords = np.array([float(v) for v in row[1:]]).reshape(NUM_LANDMARKS, 2)
                except ValueError:
                    if lineno == 1:
                        continue
                    raise IngestionError(path, f"line {lineno}: non-numeric coordinate") from None
                out[row[0].strip()] = coords
    except OSError as exc:
        raise IngestionError(path, f"unreadable: {exc}") from exc
    return out


def write_landmark_csv(path, rows: dict[str, np.ndarray]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["image_name"] + [f"{a}{i}" for i in range(1, NUM_LANDMARKS + 1) for a in "xy"])
        for name, pts in rows.items():
            writer.writerow([name] + [repr(float(v)) for v in np.asarray(pts).reshape(-1)])
