"""Binary and text formats for fields, sinograms, traces and grayscale images.

``AOTF`` (field): magic ``b"AOTF"``, little-endian ``u32 nx, u32 ny``,
``f64 x0, y0, lx, ly`` and then ``nx*ny`` ``f64`` values, one grid row of
constant ``y`` after the other.

``AOTS`` (sinogram): magic ``b"AOTS"``, ``u32 n_centers, u32 n_radii``, the
centre coordinates as ``(x, y)`` pairs of ``f64``, the radii as ``f64`` and
then the values, centre-major.
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .errors import GridMismatchError
from .grid import Grid, ScalarField

FIELD_MAGIC = b"AOTF"
SINOGRAM_MAGIC = b"AOTS"


def write_field(path, f: ScalarField) -> None:
    g = f.grid
    with open(path, "wb") as fh:
        fh.write(FIELD_MAGIC)
        fh.write(struct.pack("<II4d", g.nx, g.ny, g.x0, g.y0, g.lx, g.ly))
        fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())


def read_field(path, grid: Grid = None) -> ScalarField:
    """Read an ``AOTF`` file; with ``grid`` given, a different geometry raises :class:`GridMismatchError`."""
    data = Path(path).read_bytes()
    if data[:4] != FIELD_MAGIC:
        raise ValueError(f"{path}: not an AOTF field file")
    nx, ny, x0, y0, lx, ly = struct.unpack_from("<II4d", data, 4)
    offset = 4 + struct.calcsize("<II4d")
    expected = offset + 8 * nx * ny
    if len(data) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(data)}")
    values = np.frombuffer(data, dtype="<f8", offset=offset).reshape(ny, nx)
    g = Grid(nx, ny, lx, ly, x0, y0)
    if grid is not None and g != grid:
        raise GridMismatchError(f"{path}: field grid {g} differs from configured grid {grid}")
    return ScalarField(g, values.astype(float))


def write_sinogram(path, sino) -> None:
    centers = np.ascontiguousarray(sino.centers, dtype="<f8")
    radii = np.ascontiguousarray(sino.radii, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(SINOGRAM_MAGIC)
        fh.write(struct.pack("<II", len(centers), len(radii)))
        fh.write(centers.tobytes())
        fh.write(radii.tobytes())
        fh.write(np.ascontiguousarray(sino.values, dtype="<f8").tobytes())


def read_sinogram(path):
    from .acoustics import Sinogram

    data = Path(path).read_bytes()
    if data[:4] != SINOGRAM_MAGIC:
        raise ValueError(f"{path}: not an AOTS sinogram file")
    nc, nr = struct.unpack_from("<II", data, 4)
    expected = 12 + 8 * (2 * nc + nr + nc * nr)
    if len(data) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(data)}")
    arr = np.frombuffer(data, dtype="<f8", offset=12)
    centers = arr[: 2 * nc].reshape(nc, 2)
    radii = arr[2 * nc : 2 * nc + nr]
    values = arr[2 * nc + nr :].reshape(nc, nr)
    return Sinogram(centers.copy(), radii.copy(), values.copy())


def write_field_csv(path, f: ScalarField) -> None:
    X, Y = f.grid.coords()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "value"])
        for x, y, v in zip(X.ravel(), Y.ravel(), f.values.ravel()):
            w.writerow([repr(float(x)), repr(float(y)), repr(float(v))])


def write_sinogram_csv(path, sino) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["center_index", "radius", "value"])
        for k in range(len(sino.centers)):
            for r, v in zip(sino.radii, sino.values[k]):
                w.writerow([k, repr(float(r)), repr(float(v))])


def write_trace_csv(path, trace) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "diff_l2", "phi_min", "phi_max", "residual"])
        for row in trace.rows():
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])


def read_pgm(path) -> np.ndarray:
    """Read a binary (P5) portable graymap with ``maxval`` 255 as a ``uint8`` array, top row first."""
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    # header: magic, width, height, maxval, separated by whitespace and comments
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: only binary P5 graymaps are supported")
    width, height, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError(f"{path}: maxval must be 255, got {maxval}")
    pos += 1  # single whitespace byte before the raster
    raster = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=pos)
    return raster.reshape(height, width).copy()


def write_pgm(path, image, vmin=None, vmax=None) -> None:
    """Write an array as a P5 graymap; float input is mapped linearly from ``[vmin, vmax]`` to ``[0, 255]``."""
    img = np.asarray(image)
    if img.dtype != np.uint8:
        lo = float(img.min()) if vmin is None else vmin
        hi = float(img.max()) if vmax is None else vmax
        scale = 255.0 / (hi - lo) if hi > lo else 0.0
        img = np.clip(np.rint((img - lo) * scale), 0, 255).astype(np.uint8)
    height, width = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img).tobytes())


def field_to_image(f: ScalarField) -> np.ndarray:
    """Field values flipped so that the top image row is the largest ``y``."""
    return f.values[::-1, :]
