"""On-disk formats: LBMX1 matrices, CSV tables and binary PPM images.

LBMX1 layout: the 5 magic bytes ``LBMX1``, u32 rows, u32 cols (both
little-endian), then rows*cols little-endian float32 values in row-major
order.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, ShapeError, UsageError

MATRIX_MAGIC = b"LBMX1"
_DIMS = struct.Struct("<II")
_U32_MAX = 2 ** 32 - 1


def matrix_bytes(matrix) -> bytes:
    m = np.asarray(matrix)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {m.shape}")
    if m.shape[0] > _U32_MAX or m.shape[1] > _U32_MAX:
        raise UsageError("matrix dimension does not fit in u32")
    if not np.all(np.isfinite(m)):
        raise UsageError("matrix contains non-finite values")
    return MATRIX_MAGIC + _DIMS.pack(*m.shape) + m.astype("<f4").tobytes(order="C")


def write_matrix(path, matrix) -> None:
    Path(path).write_bytes(matrix_bytes(matrix))


def parse_matrix(data: bytes) -> np.ndarray:
    if len(data) < 5 or data[:5] != MATRIX_MAGIC:
        raise FormatError(f"expected magic {MATRIX_MAGIC!r}, found {data[:5]!r}", offset=0)
    if len(data) < 5 + _DIMS.size:
        raise FormatError("truncated header", offset=len(data))
    rows, cols = _DIMS.unpack_from(data, 5)
    start = 5 + _DIMS.size
    need = rows * cols * 4
    have = len(data) - start
    if need > have:
        raise FormatError(f"payload for {rows}x{cols} needs {need} bytes, found {have}",
                          offset=len(data))
    if need < have:
        raise FormatError(f"{have - need} trailing bytes after {rows}x{cols} payload",
                          offset=start + need)
    return np.frombuffer(data, "<f4", rows * cols, start).reshape(rows, cols).astype(np.float32)


def read_matrix(path) -> np.ndarray:
    """float32 array as stored; callers upcast when they need float64."""
    return parse_matrix(Path(path).read_bytes())


# -- CSV -------------------------------------------------------------------


@dataclass
class CsvTable:
    header: list
    rows: list  # list of lists of str

    def __len__(self):
        return len(self.rows)

    def column(self, name, dtype=str):
        try:
            i = self.header.index(name)
        except ValueError:
            raise FormatError(f"missing column {name!r}; have {self.header}", line=1) from None
        vals = [r[i] for r in self.rows]
        if dtype is str:
            return vals
        return np.array([dtype(v) for v in vals])


def format_value(v) -> str:
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".9g")
    return str(v)


def write_csv_table(path, header, rows) -> None:
    header = list(header)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i, row in enumerate(rows):
            row = list(row)
            if len(row) != len(header):
                raise UsageError(f"row {i} has {len(row)} fields, header has {len(header)}")
            w.writerow([format_value(v) for v in row])


def read_csv_table(path) -> CsvTable:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError("empty file: no header row", line=1) from None
        rows = []
        for row in reader:
            if len(row) != len(header):
                raise FormatError(
                    f"expected {len(header)} fields, found {len(row)}", line=reader.line_num)
            rows.append(row)
    return CsvTable(header, rows)


# -- PPM -------------------------------------------------------------------


def to_uint8(image) -> np.ndarray:
    """Map a float image in [0, 1] to 8-bit; uint8 input passes through."""
    image = np.asarray(image)
    if image.dtype == np.uint8:
        return image
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_ppm(path, image) -> None:
    img = to_uint8(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ShapeError(f"expected an (H, W, 3) image, got {img.shape}")
    h, w, _ = img.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + img.tobytes())


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:2] != b"P6":
        raise FormatError(f"expected magic b'P6', found {data[:2]!r}", offset=0)
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and data[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise FormatError("malformed PPM header", offset=pos)
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace byte before the raster
    w, h, maxval = fields
    if maxval != 255:
        raise FormatError(f"only 8-bit PPM is supported (maxval {maxval})", offset=pos)
    need = w * h * 3
    if len(data) - pos < need:
        raise FormatError(f"truncated raster: need {need} bytes", offset=len(data))
    return np.frombuffer(data, np.uint8, need, pos).reshape(h, w, 3).copy()
