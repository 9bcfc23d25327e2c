"""Block-wise reconstruction error maps.

Images are float arrays of shape ``(H, W, C)`` with ``C`` in ``{1, 3}`` and
values in ``[0, 1]``. A reconstructor maps an image to an image of the same
shape; the per-block mean squared residual between the two is the error map
every downstream statistic is computed from.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Union

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage

from .errors import InvalidInput, ParseError

PathLike = Union[str, Path]

MIN_SIDE = 8
DEFAULT_GRID = 14
LOWPASS_FACTOR = 4
DEFAULT_MEDIAN_K = 5


def as_image(pixels, *, copy: bool = False) -> np.ndarray:
    """Validate and normalise ``pixels`` to a float64 ``(H, W, C)`` array."""
    arr = np.array(pixels, dtype=np.float64, copy=copy)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise InvalidInput(f"image must be 2-D or 3-D, got shape {arr.shape}")
    h, w, c = arr.shape
    if c not in (1, 3):
        raise InvalidInput(f"unsupported channel count {c}")
    if h < MIN_SIDE or w < MIN_SIDE:
        raise InvalidInput(f"image must be at least {MIN_SIDE}x{MIN_SIDE}, got {h}x{w}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInput("image contains non-finite pixels")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise InvalidInput("pixel values must lie in [0, 1]")
    return arr


def to_gray(image: np.ndarray) -> np.ndarray:
    """Luma of an ``(H, W, C)`` image as an ``(H, W)`` array."""
    if image.shape[2] == 1:
        return image[:, :, 0]
    return image @ np.array([0.299, 0.587, 0.114])


# -- image files -------------------------------------------------------------

def load_image(path: PathLike) -> np.ndarray:
    """Read an 8-bit PNG or binary PPM and scale it to ``[0, 1]``."""
    try:
        with PILImage.open(path) as im:
            if im.mode not in ("L", "RGB"):
                im = im.convert("RGB")
            data = np.asarray(im, dtype=np.float64)
    except (OSError, SyntaxError) as exc:
        raise ParseError(f"cannot decode image {path}: {exc}") from exc
    return as_image(data / 255.0)


def save_image(image: np.ndarray, path: PathLike) -> None:
    """Write ``image`` as 8-bit PNG (or PPM when the suffix is ``.ppm``)."""
    arr = np.clip(np.rint(as_image(image) * 255.0), 0, 255).astype(np.uint8)
    if arr.shape[2] == 1:
        im = PILImage.fromarray(arr[:, :, 0], mode="L")
    else:
        im = PILImage.fromarray(arr, mode="RGB")
    fmt = "PPM" if str(path).lower().endswith(".ppm") else "PNG"
    im.save(path, format=fmt)


# -- grids -------------------------------------------------------------------

@dataclass(frozen=True)
class BlockGrid:
    """Partition of an ``height x width`` image into ``rows x cols`` blocks.

    The last block row/column may be partial; its statistics are averaged
    over the pixels it actually contains.
    """

    rows: int
    cols: int
    block_h: int
    block_w: int
    height: int
    width: int

    def __post_init__(self):
        if self.rows < 2 or self.cols < 2:
            raise InvalidInput("grid needs at least 2 rows and 2 cols")
        if self.block_h < 1 or self.block_w < 1:
            raise InvalidInput("block size must be positive")
        # every block row/col must contain at least one pixel
        if not (self.rows - 1) * self.block_h < self.height <= self.rows * self.block_h:
            raise InvalidInput(f"{self.rows} rows of {self.block_h}px do not tile height {self.height}")
        if not (self.cols - 1) * self.block_w < self.width <= self.cols * self.block_w:
            raise InvalidInput(f"{self.cols} cols of {self.block_w}px do not tile width {self.width}")

    @classmethod
    def for_image(cls, height: int, width: int, rows: int = DEFAULT_GRID, cols: int = DEFAULT_GRID) -> "BlockGrid":
        block_h = math.ceil(height / rows)
        block_w = math.ceil(width / cols)
        # ceil can leave trailing empty rows (e.g. 10px into 4 rows); shrink to fit
        rows = math.ceil(height / block_h)
        cols = math.ceil(width / block_w)
        return cls(rows, cols, block_h, block_w, height, width)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def n_blocks(self) -> int:
        return self.rows * self.cols

    def block_slice(self, r: int, c: int) -> tuple[slice, slice]:
        """Pixel slices of block ``(r, c)``, clipped to the image."""
        return (
            slice(r * self.block_h, min((r + 1) * self.block_h, self.height)),
            slice(c * self.block_w, min((c + 1) * self.block_w, self.width)),
        )


@dataclass(frozen=True)
class ErrorMap:
    """Grid of non-negative block losses."""

    grid: np.ndarray
    source: str = "computed"

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=np.float64)
        if g.ndim != 2:
            raise InvalidInput("error map must be 2-D")
        if not np.all(np.isfinite(g)) or np.any(g < 0):
            raise InvalidInput("error map entries must be finite and non-negative")
        g.setflags(write=False)
        object.__setattr__(self, "grid", g)
        if self.source not in ("computed", "imported"):
            raise InvalidInput(f"unknown source {self.source!r}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape

    @property
    def losses(self) -> np.ndarray:
        return self.grid.ravel()

    @property
    def total(self) -> float:
        return float(self.grid.sum())


# -- reconstructors ----------------------------------------------------------

def _area_matrix(n: int, factor: int) -> np.ndarray:
    """Rows average consecutive runs of ``factor`` samples (last run partial)."""
    m = math.ceil(n / factor)
    A = np.zeros((m, n))
    for i in range(m):
        lo, hi = i * factor, min((i + 1) * factor, n)
        A[i, lo:hi] = 1.0 / (hi - lo)
    return A


def _bilinear_matrix(n_out: int, n_in: int, scale: float) -> np.ndarray:
    """Linear interpolation from ``n_in`` samples to ``n_out`` (half-pixel centres)."""
    x = (np.arange(n_out) + 0.5) / scale - 0.5
    x = np.clip(x, 0.0, n_in - 1)
    lo = np.floor(x).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    t = x - lo
    U = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(U, (rows, lo), 1.0 - t)
    np.add.at(U, (rows, hi), t)
    return U


class Reconstructor:
    """Named, deterministic image -> image map."""

    name = "base"

    def __call__(self, image: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class LowpassReconstructor(Reconstructor):
    """Area-average downsampling by ``factor`` followed by bilinear upsampling."""

    name = "lowpass"

    def __init__(self, factor: int = LOWPASS_FACTOR):
        if factor < 1:
            raise InvalidInput("factor must be >= 1")
        self.factor = factor
        self._cache: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}

    def _operators(self, h: int, w: int):
        key = (h, w)
        ops = self._cache.get(key)
        if ops is None:
            f = self.factor
            Ah, Aw = _area_matrix(h, f), _area_matrix(w, f)
            Uh = _bilinear_matrix(h, Ah.shape[0], f)
            Uw = _bilinear_matrix(w, Aw.shape[0], f)
            # collapse down/up sampling into one smoothing operator per axis
            ops = (Uh @ Ah, Uw @ Aw)
            self._cache[key] = ops
        return ops

    def __call__(self, image: np.ndarray) -> np.ndarray:
        h, w, _ = image.shape
        Sh, Sw = self._operators(h, w)
        out = np.einsum("ij,jkc,lk->ilc", Sh, image, Sw, optimize=True)
        return np.clip(out, 0.0, 1.0)


class MedianReconstructor(Reconstructor):
    """``k x k`` median filter with reflected borders."""

    name = "median"

    def __init__(self, k: int = DEFAULT_MEDIAN_K):
        if k < 1 or k % 2 == 0:
            raise InvalidInput("median window must be a positive odd integer")
        self.k = k

    def __call__(self, image: np.ndarray) -> np.ndarray:
        out = ndimage.median_filter(image, size=(self.k, self.k, 1), mode="reflect")
        return np.clip(out, 0.0, 1.0)


RECONSTRUCTORS: dict[str, Callable[[], Reconstructor]] = {
    "lowpass": LowpassReconstructor,
    "median": MedianReconstructor,
}


def get_reconstructor(name: str) -> Reconstructor:
    try:
        return RECONSTRUCTORS[name.lower()]()
    except KeyError:
        raise InvalidInput(f"unknown reconstructor {name!r}; choose from {sorted(RECONSTRUCTORS)}") from None


def reconstruct(image, method: Reconstructor | str = "lowpass") -> np.ndarray:
    image = as_image(image)
    if isinstance(method, str):
        method = get_reconstructor(method)
    out = method(image)
    if out.shape != image.shape:
        raise InvalidInput(f"reconstructor {method.name} changed shape {image.shape} -> {out.shape}")
    return out


# -- losses ------------------------------------------------------------------

def block_losses(image: np.ndarray, recon: np.ndarray, grid: BlockGrid) -> ErrorMap:
    """Mean squared difference over each block (pixels and channels)."""
    image = np.asarray(image, dtype=np.float64)
    recon = np.asarray(recon, dtype=np.float64)
    if image.ndim == 2:
        image = image[:, :, None]
    if recon.ndim == 2:
        recon = recon[:, :, None]
    if image.shape != recon.shape:
        raise InvalidInput(f"shape mismatch: {image.shape} vs {recon.shape}")
    h, w, c = image.shape
    if (h, w) != (grid.height, grid.width):
        raise InvalidInput(f"grid built for {grid.height}x{grid.width}, image is {h}x{w}")
    sq = ((image - recon) ** 2).sum(axis=2)
    row_starts = np.arange(grid.rows) * grid.block_h
    col_starts = np.arange(grid.cols) * grid.block_w
    sums = np.add.reduceat(np.add.reduceat(sq, row_starts, axis=0), col_starts, axis=1)
    row_counts = np.diff(np.append(row_starts, h))
    col_counts = np.diff(np.append(col_starts, w))
    counts = np.outer(row_counts, col_counts) * c
    return ErrorMap(sums / counts)


def compute_error_map(image, method: Reconstructor | str = "lowpass", grid: BlockGrid | None = None) -> ErrorMap:
    """Reconstruct ``image`` and return its block losses on ``grid``."""
    image = as_image(image)
    if grid is None:
        grid = BlockGrid.for_image(image.shape[0], image.shape[1])
    return block_losses(image, reconstruct(image, method), grid)


# -- loss-map files ----------------------------------------------------------

def export_error_map(emap: ErrorMap, path: PathLike) -> None:
    rows, cols = emap.shape
    lines = [f"{rows} {cols}"]
    # repr round-trips float64 exactly
    lines += [" ".join(repr(float(v)) for v in row) for row in emap.grid]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def import_error_map(path: PathLike, rows: int | None = None, cols: int | None = None) -> ErrorMap:
    """Parse a loss-map file; ``rows``/``cols`` are checked against the header if given."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ParseError(f"cannot read loss map {path}: {exc}") from exc
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ParseError("empty loss-map file")
    header = lines[0].split()
    try:
        n_rows, n_cols = (int(v) for v in header)
    except ValueError:
        raise ParseError(f"bad header {lines[0]!r}; expected 'rows cols'") from None
    if (rows is not None and rows != n_rows) or (cols is not None and cols != n_cols):
        raise ParseError(f"header says {n_rows}x{n_cols}, expected {rows}x{cols}")
    if len(lines) - 1 != n_rows:
        raise ParseError(f"expected {n_rows} data rows, found {len(lines) - 1}")
    grid = np.empty((n_rows, n_cols))
    for i, line in enumerate(lines[1:]):
        fields = line.split()
        if len(fields) != n_cols:
            raise ParseError(f"row {i + 1}: expected {n_cols} values, found {len(fields)}")
        try:
            grid[i] = [float(v) for v in fields]
        except ValueError as exc:
            raise ParseError(f"row {i + 1}: {exc}") from None
    if not np.all(np.isfinite(grid)):
        raise ParseError("loss map contains NaN or infinite values")
    if np.any(grid < 0):
        raise ParseError("loss map contains negative values")
    try:
        return ErrorMap(grid, source="imported")
    except InvalidInput as exc:
        raise ParseError(str(exc)) from exc
