"""Chart windows, value grids, and the on-disk formats.

Grid binary format: a 64-byte ASCII header
    "PLGRD1 <rows> <cols> <re0> <re1> <im0> <im1> f8"
space-padded to exactly 64 bytes (window bounds printed at %.6g; exact
bounds live in the run manifest), followed by row-major little-endian
float64 values.  Rows scan the imaginary axis bottom-up, columns the real
axis left-right, cell-centered.

Images are binary PPM (P6) with log or linear scaling; non-finite cells get
a sentinel color.  Tables are RFC-4180 CSV / single-object JSON with floats
printed by repr, the shortest decimal that round-trips.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "HeaderMismatch",
    "ChartWindow",
    "ChartGrid",
    "grid_to_bytes",
    "grid_from_bytes",
    "render_ppm",
    "emit_csv",
    "emit_json",
]

_MAGIC = "PLGRD1"
_HEADER_LEN = 64


class HeaderMismatch(ValueError):
    """Grid file header is malformed or inconsistent with the payload."""


@dataclass(frozen=True)
class ChartWindow:
    """Axis-aligned box in the affine chart: center and half-width per
    complex axis.  chart = -1 means a parameter plane rather than a chart
    of P^k."""

    chart: int
    center: tuple[complex, ...]
    half: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(complex(c) for c in np.atleast_1d(self.center)))
        object.__setattr__(self, "half", tuple(float(h) for h in np.atleast_1d(self.half)))
        if len(self.center) != len(self.half):
            raise ValueError("center and half need one entry per complex axis")
        if any(h <= 0 for h in self.half):
            raise ValueError("half-widths must be positive")

    @property
    def k(self) -> int:
        return len(self.center)

    def axis_points(self, axis: int, res: int, pad: int = 0) -> np.ndarray:
        """Cell-centered complex sample points of one axis: (res+2*pad,
        res+2*pad) with [iy, ix] = re[ix] + i*im[iy]."""
        c, h = self.center[axis], self.half[axis]
        step = 2 * h / res
        t = (np.arange(-pad, res + pad) + 0.5) * step
        re = c.real - h + t
        im = c.imag - h + t
        return re[None, :] + 1j * im[:, None]

    def bounds(self, axis: int = 0) -> tuple[float, float, float, float]:
        c, h = self.center[axis], self.half[axis]
        return (c.real - h, c.real + h, c.imag - h, c.imag + h)


@dataclass
class ChartGrid:
    """Values sampled on a window.  kind='field' for pointwise values,
    'density' for a per-area density (cell mass = value * cell_area)."""

    window: ChartWindow
    values: np.ndarray
    kind: str = "field"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)

    @property
    def res(self) -> int:
        return self.values.shape[-1]

    @property
    def cell_area(self) -> float:
        h = self.window.half[0]
        step = 2 * h / self.values.shape[-1]
        return step * step

    def masses(self) -> np.ndarray:
        if self.kind != "density":
            raise ValueError("masses are defined for density grids")
        return self.values * self.cell_area

    def points(self, pad: int = 0) -> np.ndarray:
        """Complex sample points for a 2D grid (k = 1 windows)."""
        if self.window.k != 1 or self.values.ndim != 2:
            raise ValueError("points() supports 2D grids on one complex axis")
        return self.window.axis_points(0, self.values.shape[0], pad=pad)


def grid_to_bytes(grid: ChartGrid) -> bytes:
    v = grid.values
    if v.ndim != 2:
        raise ValueError("binary grid format stores 2D grids")
    rows, cols = v.shape
    re0, re1, im0, im1 = grid.window.bounds(0)
    head = f"{_MAGIC} {rows} {cols} {re0:.6g} {re1:.6g} {im0:.6g} {im1:.6g} f8"
    if len(head) > _HEADER_LEN:
        head = f"{_MAGIC} {rows} {cols} {re0:.4g} {re1:.4g} {im0:.4g} {im1:.4g} f8"
    if len(head) > _HEADER_LEN:
        raise ValueError("window bounds do not fit the 64-byte header")
    header = head.ljust(_HEADER_LEN).encode("ascii")
    return header + np.ascontiguousarray(v, dtype="<f8").tobytes()


def grid_from_bytes(data: bytes) -> ChartGrid:
    if len(data) < _HEADER_LEN:
        raise HeaderMismatch("file shorter than the 64-byte header")
    try:
        head = data[:_HEADER_LEN].decode("ascii")
    except UnicodeDecodeError as e:
        raise HeaderMismatch("header is not ASCII") from e
    parts = head.split()
    if len(parts) != 9 or parts[0] != _MAGIC:
        raise HeaderMismatch(f"bad header {head!r}")
    if parts[8] != "f8":
        raise HeaderMismatch(f"unsupported dtype {parts[8]!r}")
    try:
        rows, cols = int(parts[1]), int(parts[2])
        re0, re1, im0, im1 = (float(x) for x in parts[3:7])
    except ValueError as e:
        raise HeaderMismatch("non-numeric header fields") from e
    want = rows * cols * 8
    payload = data[_HEADER_LEN:]
    if len(payload) != want:
        raise HeaderMismatch(f"payload {len(payload)} bytes, header implies {want}")
    v = np.frombuffer(payload, dtype="<f8").reshape(rows, cols).copy()
    window = ChartWindow(chart=0, center=(complex((re0 + re1) / 2, (im0 + im1) / 2),),
                         half=((re1 - re0) / 2,))
    return ChartGrid(window=window, values=v)


def write_grid(path, grid: ChartGrid) -> None:
    with open(path, "wb") as fh:
        fh.write(grid_to_bytes(grid))


def read_grid(path) -> ChartGrid:
    with open(path, "rb") as fh:
        return grid_from_bytes(fh.read())


_SENTINEL = (255, 0, 255)


def _heat(t: np.ndarray) -> np.ndarray:
    """Black -> red -> yellow -> white ramp on t in [0,1]."""
    r = np.clip(3 * t, 0, 1)
    g = np.clip(3 * t - 1, 0, 1)
    b = np.clip(3 * t - 2, 0, 1)
    return np.stack([r, g, b], axis=-1)


def render_ppm(grid: ChartGrid, scale: str = "linear", palette: str = "heat") -> bytes:
    """PPM (P6) image of a 2D grid.  Non-finite cells use the sentinel color.

    log scaling maps non-positive finite cells to the bottom of the ramp.
    The top image row is the top of the window (max imaginary part).
    """
    v = np.asarray(grid.values, dtype=float)
    if v.ndim != 2:
        raise ValueError("can only render 2D grids")
    finite = np.isfinite(v)
    t = np.zeros_like(v)
    if finite.any():
        vals = v[finite]
        if scale == "log":
            pos = vals[vals > 0]
            if len(pos):
                lo, hi = np.log(pos.min()), np.log(pos.max())
                span = (hi - lo) or 1.0
                with np.errstate(divide="ignore", invalid="ignore"):
                    tt = (np.log(np.where(v > 0, v, np.nan)) - lo) / span
                t = np.where(finite & (v > 0), np.clip(np.nan_to_num(tt), 0, 1), 0.0)
        elif scale == "linear":
            lo, hi = vals.min(), vals.max()
            span = (hi - lo) or 1.0
            t = np.where(finite, np.clip((v - lo) / span, 0, 1), 0.0)
        else:
            raise ValueError(f"unknown scale {scale!r}")
    if palette == "heat":
        rgb = _heat(t)
    elif palette == "gray":
        rgb = np.repeat(t[..., None], 3, axis=-1)
    else:
        raise ValueError(f"unknown palette {palette!r}")
    img = (rgb * 255).astype(np.uint8)
    img[~finite] = np.array(_SENTINEL, dtype=np.uint8)
    img = img[::-1]  # row 0 of the array is min-imag: flip for image convention
    h, w = v.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + img.tobytes()


def emit_csv(path, header: list[str], rows) -> None:
    """RFC-4180 CSV with repr-shortest floats."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, quoting=csv.QUOTE_MINIMAL, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(x) for x in row])


def _cell(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (complex, np.complexfloating)):
        re, im = repr(float(x.real)), repr(float(x.imag))
        sign = "" if im.startswith("-") else "+"
        return f"{re}{sign}{im}j"
    return x


def _json_default(o):
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (complex, np.complexfloating)):
        return {"re": float(o.real), "im": float(o.imag)}
    raise TypeError(f"not JSON serializable: {type(o)}")


def emit_json(path, obj) -> None:
    """Single-object JSON, sorted keys, shortest round-trip floats."""
    text = json.dumps(obj, sort_keys=True, indent=2, default=_json_default)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text + "\n")
