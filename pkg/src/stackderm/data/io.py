"""Manifest CSV and binary PPM (P6) reading and writing."""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import numpy as np

from ..errors import DataError

SITES = ("head/neck", "upper extremity", "lower extremity", "torso",
         "palms/soles", "oral/genital")
SEXES = ("female", "male", "unknown")
MANIFEST_HEADER = ["image_path", "patient_id", "age", "sex", "site", "label"]


@dataclass
class Sample:
    """One image with its metadata. ``None`` marks a missing metadata value."""

    patient_id: str
    image: np.ndarray  # (3, H, W), values in [0, 1]
    age: float | None
    sex: str | None
    site: str | None
    label: int
    image_path: str | None = None

    def __post_init__(self):
        if self.label not in (0, 1):
            raise DataError(f"label must be 0 or 1, got {self.label!r}")
        if self.image.ndim != 3 or self.image.shape[0] != 3:
            raise DataError(f"image must be (3, H, W), got {self.image.shape}")


def _ppm_tokens(buf):
    """Yield (token, end offset) for the four header fields, skipping comments."""
    pos, n = 0, len(buf)
    for _ in range(4):
        while pos < n:
            ch = buf[pos:pos + 1]
            if ch == b"#":
                while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            elif ch.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise DataError("truncated PPM header")
        yield buf[start:pos], pos


def decode_ppm(buf: bytes) -> np.ndarray:
    """Decode an 8-bit binary PPM into a ``(3, H, W)`` float32 array in [0, 1]."""
    toks = list(_ppm_tokens(buf))
    magic, width, height, maxval = (t for t, _ in toks)
    if magic != b"P6":
        raise DataError(f"not a binary PPM (magic {magic!r})")
    try:
        w, h, mv = int(width), int(height), int(maxval)
    except ValueError as exc:
        raise DataError("non-numeric PPM header field") from exc
    if w < 1 or h < 1:
        raise DataError(f"bad PPM size {w}x{h}")
    if mv != 255:
        raise DataError(f"only 8-bit PPM supported (maxval {mv})")
    start = toks[-1][1] + 1  # exactly one whitespace byte after maxval
    data = buf[start:start + 3 * w * h]
    if len(data) != 3 * w * h:
        raise DataError("truncated PPM pixel data")
    img = np.frombuffer(data, dtype=np.uint8).reshape(h, w, 3)
    return (img.transpose(2, 0, 1).astype(np.float32) / np.float32(255.0))


def encode_ppm(image: np.ndarray) -> bytes:
    img = np.asarray(image)
    _, h, w = img.shape
    pix = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8).transpose(1, 2, 0)
    return b"P6\n%d %d\n255\n" % (w, h) + pix.tobytes()


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_ppm(fh.read())


def write_ppm(path, image):
    with open(path, "wb") as fh:
        fh.write(encode_ppm(image))


def _parse_row(row, rownum, root):
    path, pid, age, sex, site, label = (c.strip() for c in row)
    if label not in ("0", "1"):
        raise DataError(f"label must be 0 or 1, got {label!r}", rownum)
    if age == "":
        age_v = None
    else:
        try:
            age_v = float(age)
        except ValueError:
            raise DataError(f"bad age {age!r}", rownum) from None
        if not math.isfinite(age_v):
            raise DataError(f"bad age {age!r}", rownum)
    if sex and sex not in SEXES:
        raise DataError(f"unknown sex {sex!r}", rownum)
    if site and site not in SITES:
        raise DataError(f"unknown site {site!r}", rownum)
    full = path if os.path.isabs(path) else os.path.join(root, path)
    try:
        img = read_ppm(full)
    except DataError as exc:
        raise DataError(f"{path}: {exc}", rownum) from None
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}", rownum) from None
    return Sample(pid, img, age_v, sex or None, site or None, int(label), path)


def load_manifest(manifest_path) -> list[Sample]:
    """Read a manifest CSV; image paths are relative to the manifest's folder.

    Row numbers in errors count the header as row 1.
    """
    root = os.path.dirname(os.path.abspath(manifest_path))
    try:
        fh = open(manifest_path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read manifest {manifest_path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != MANIFEST_HEADER:
            raise DataError(f"manifest header must be {','.join(MANIFEST_HEADER)}", 1)
        samples = []
        for rownum, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(MANIFEST_HEADER):
                raise DataError(f"expected 6 columns, got {len(row)}", rownum)
            samples.append(_parse_row(row, rownum, root))
    return samples


def _fmt_age(age):
    if age is None:
        return ""
    return str(int(age)) if float(age).is_integer() else repr(float(age))


def write_dataset(samples, out_dir, manifest_name="manifest.csv"):
    """Write every sample as a PPM under ``out_dir/images`` plus a manifest."""
    img_dir = os.path.join(out_dir, "images")
    os.makedirs(img_dir, exist_ok=True)
    rows = []
    for i, s in enumerate(samples):
        rel = s.image_path or f"images/{i:06d}.ppm"
        write_ppm(os.path.join(out_dir, rel), s.image)
        rows.append([rel, s.patient_id, _fmt_age(s.age), s.sex or "", s.site or "",
                     str(s.label)])
    path = os.path.join(out_dir, manifest_name)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        w.writerows(rows)
    return path
