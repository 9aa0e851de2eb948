"""Image normalization and relief-edge weight extraction.

The preprocessing chain is a mild "cartoonification": grayscale conversion
and resize to a uniform height, total-variation smoothing, contrast limited
adaptive histogram equalization, and a second total-variation pass to remove
equalization artefacts. Relief edges are then extracted with a Laplacian
filter and restricted to a circular region that drops the coin circumference
(its shape carries no information about the die).

All operations are pure: the same input and config produce bit-identical
output, so images can be processed concurrently without coordination.
"""

from __future__ import annotations

import io
import warnings
from dataclasses import dataclass, field

import numpy as np
from PIL import Image
from scipy import ndimage


class DegenerateInputError(ValueError):
    """Raised when an input cannot produce a usable result (e.g. an
    all-zero weight field after masking)."""


class TVConvergenceWarning(UserWarning):
    """Emitted when the TV solver hits its iteration cap before converging."""


@dataclass
class GrayImage:
    """Scalar intensity grid in [0, 1], row-major, with values[y, x]."""

    width: int
    height: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.height, self.width):
            raise ValueError(
                f"grid shape {self.values.shape} does not match "
                f"(height={self.height}, width={self.width})"
            )
        if self.width < 8 or self.height < 8:
            raise ValueError("image dimensions must be at least 8x8")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("image contains non-finite values")
        if self.values.min() < 0.0 or self.values.max() > 1.0:
            raise ValueError("image values must lie in [0, 1]")

    @classmethod
    def from_array(cls, values: np.ndarray) -> "GrayImage":
        values = np.asarray(values, dtype=np.float64)
        h, w = values.shape
        return cls(width=w, height=h, values=values)


@dataclass
class WeightField:
    """Non-negative relief-edge weights on the same grid as the source image.

    ``mask_center``/``mask_radius`` describe the circular support; ``None``
    means no mask has been applied yet (full grid). Center is (cx, cy) in
    pixel coordinates.
    """

    values: np.ndarray
    mask_center: tuple[float, float] | None = None
    mask_radius: float | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("weight field must be a 2-D grid")
        if not np.all(np.isfinite(self.values)) or self.values.min() < 0.0:
            raise ValueError("weights must be finite and non-negative")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def mask_bool(self) -> np.ndarray:
        """Boolean grid of pixels inside the circular mask (all True if unmasked)."""
        if self.mask_center is None or self.mask_radius is None:
            return np.ones(self.values.shape, dtype=bool)
        h, w = self.values.shape
        cx, cy = self.mask_center
        yy, xx = np.mgrid[0:h, 0:w]
        return (xx - cx) ** 2 + (yy - cy) ** 2 <= self.mask_radius**2


@dataclass
class PreprocessConfig:
    """Knobs for the normalization chain.

    ``tv_weight_1`` smooths acquisition noise before equalization,
    ``tv_weight_2`` removes equalization artefacts afterwards.
    ``mask_radius_frac`` is the mask radius as a fraction of half the
    smaller image dimension.
    """

    target_height: int = 512
    tv_weight_1: float = 0.08
    tv_weight_2: float = 0.04
    tv_max_iters: int = 100
    clahe_clip: float = 2.0
    clahe_tiles: int = 8
    mask_radius_frac: float = 0.92

    def __post_init__(self):
        if self.target_height < 64:
            raise ValueError("target_height must be at least 64")
        if self.tv_weight_1 <= 0 or self.tv_weight_2 <= 0:
            raise ValueError("tv weights must be positive")
        if not (0.0 < self.mask_radius_frac <= 1.0):
            raise ValueError("mask_radius_frac must be in (0, 1]")
        if self.clahe_tiles < 1 or self.clahe_clip <= 0:
            raise ValueError("invalid CLAHE parameters")


def load_and_normalize(raw_image_bytes: bytes, target_height: int) -> GrayImage:
    """Decode a raster image, convert to grayscale, resize to a uniform height.

    Aspect ratio is preserved; width is rounded to the nearest pixel. Values
    are scaled to [0, 1]. A same-height grayscale input passes through with
    only quantization error.
    """
    try:
        pil = Image.open(io.BytesIO(raw_image_bytes))
        pil.load()
    except Exception as exc:
        raise ValueError(f"cannot decode image: {exc}") from exc
    pil = pil.convert("L")
    w, h = pil.size
    if h != target_height:
        new_w = int(round(w * target_height / h))
        if new_w < 8 or target_height < 8:
            raise ValueError("image degenerates below 8px after resize")
        pil = pil.resize((new_w, target_height), Image.Resampling.BILINEAR)
    arr = np.asarray(pil, dtype=np.float64) / 255.0
    return GrayImage.from_array(arr)


def total_variation(values: np.ndarray) -> float:
    """Isotropic discrete TV with forward differences."""
    dx = np.diff(values, axis=1)
    dy = np.diff(values, axis=0)
    gx = np.zeros_like(values)
    gy = np.zeros_like(values)
    gx[:, :-1] = dx
    gy[:-1, :] = dy
    return float(np.sqrt(gx**2 + gy**2).sum())


def _divergence(p: np.ndarray) -> np.ndarray:
    # p has shape (2, h, w); adjoint of the forward-difference gradient
    div = np.zeros(p.shape[1:])
    div[:-1, :] += p[0, :-1, :]
    div[1:, :] -= p[0, :-1, :]
    div[:, :-1] += p[1, :, :-1]
    div[:, 1:] -= p[1, :, :-1]
    return div


def _gradient(u: np.ndarray) -> np.ndarray:
    g = np.zeros((2,) + u.shape)
    g[0, :-1, :] = np.diff(u, axis=0)
    g[1, :, :-1] = np.diff(u, axis=1)
    return g


def tv_denoise(
    img: GrayImage, weight: float, max_iters: int = 100, tol: float = 1e-5
) -> GrayImage:
    """Rudin-Osher-Fatemi denoising via Chambolle's dual projection scheme.

    Solves min_u ||u - f||^2 / 2 + weight * TV(u). The total variation of the
    output never exceeds that of the input. If the dual iteration has not
    converged after ``max_iters`` steps the best iterate is returned and a
    TVConvergenceWarning is emitted.
    """
    if weight <= 0:
        raise ValueError("weight must be positive")
    f = img.values
    p = np.zeros((2,) + f.shape)
    tau = 0.25  # stability bound for the 2-D dual step
    u = f.copy()
    converged = False
    for _ in range(max_iters):
        u_prev = u
        g = _gradient(_divergence(p) - f / weight)
        denom = 1.0 + tau * np.sqrt(g[0] ** 2 + g[1] ** 2)
        p = (p + tau * g) / denom
        u = f - weight * _divergence(p)
        if np.abs(u - u_prev).max() < tol:
            converged = True
            break
    if not converged:
        warnings.warn(
            f"TV solver did not converge within {max_iters} iterations",
            TVConvergenceWarning,
        )
    return GrayImage.from_array(np.clip(u, 0.0, 1.0))


def _equalization_map(hist: np.ndarray, n_pixels: int) -> np.ndarray:
    """Map 256 intensity levels through the (clipped) histogram's CDF."""
    cdf = np.cumsum(hist)
    nonzero = cdf[cdf > 0]
    cdf_min = nonzero[0] if nonzero.size else 0.0
    denom = n_pixels - cdf_min
    if denom <= 0:
        # all mass in one bin: identity-like flat mapping
        return np.full(256, float(np.argmax(hist)) / 255.0)
    return np.clip((cdf - cdf_min) / denom, 0.0, 1.0)


def _clip_histogram(hist: np.ndarray, clip: float, n_pixels: int) -> np.ndarray:
    if not np.isfinite(clip):
        return hist.astype(np.float64)
    limit = max(clip * n_pixels / 256.0, 1.0)
    h = hist.astype(np.float64)
    excess = np.maximum(h - limit, 0.0).sum()
    h = np.minimum(h, limit)
    h += excess / 256.0
    return h


def clahe(img: GrayImage, clip: float, tiles: int) -> GrayImage:
    """Contrast limited adaptive histogram equalization.

    The image is divided into a ``tiles`` x ``tiles`` grid; each tile's
    256-bin histogram is clipped at ``clip`` times the mean bin count (excess
    redistributed uniformly) before equalization. Pixel values are remapped by
    bilinear interpolation between the four neighboring tile mappings. With
    ``tiles=1`` and an infinite clip this reduces to global histogram
    equalization.
    """
    if tiles < 1:
        raise ValueError("tiles must be >= 1")
    if clip <= 0:
        raise ValueError("clip must be positive")
    h, w = img.values.shape
    if h < tiles or w < tiles:
        raise ValueError(f"image {w}x{h} smaller than {tiles}x{tiles} tile grid")

    levels = np.clip((img.values * 255.0).round().astype(np.int64), 0, 255)
    row_edges = np.linspace(0, h, tiles + 1).round().astype(int)
    col_edges = np.linspace(0, w, tiles + 1).round().astype(int)

    maps = np.empty((tiles, tiles, 256))
    for ty in range(tiles):
        for tx in range(tiles):
            tile = levels[row_edges[ty] : row_edges[ty + 1], col_edges[tx] : col_edges[tx + 1]]
            hist = np.bincount(tile.ravel(), minlength=256)
            clipped = _clip_histogram(hist, clip, tile.size)
            maps[ty, tx] = _equalization_map(clipped, clipped.sum())

    # tile centers for interpolation
    cy = (row_edges[:-1] + row_edges[1:]) / 2.0
    cx = (col_edges[:-1] + col_edges[1:]) / 2.0

    ys = np.arange(h, dtype=np.float64)
    xs = np.arange(w, dtype=np.float64)
    ty_f = np.interp(ys, cy, np.arange(tiles, dtype=np.float64)) if tiles > 1 else np.zeros(h)
    tx_f = np.interp(xs, cx, np.arange(tiles, dtype=np.float64)) if tiles > 1 else np.zeros(w)

    ty0 = np.floor(ty_f).astype(int)
    tx0 = np.floor(tx_f).astype(int)
    ty1 = np.minimum(ty0 + 1, tiles - 1)
    tx1 = np.minimum(tx0 + 1, tiles - 1)
    wy = (ty_f - ty0)[:, None]
    wx = (tx_f - tx0)[None, :]

    ty0g = ty0[:, None] * np.ones((1, w), dtype=int)
    ty1g = ty1[:, None] * np.ones((1, w), dtype=int)
    tx0g = tx0[None, :] * np.ones((h, 1), dtype=int)
    tx1g = tx1[None, :] * np.ones((h, 1), dtype=int)

    v00 = maps[ty0g, tx0g, levels]
    v01 = maps[ty0g, tx1g, levels]
    v10 = maps[ty1g, tx0g, levels]
    v11 = maps[ty1g, tx1g, levels]
    out = (
        (1 - wy) * ((1 - wx) * v00 + wx * v01)
        + wy * ((1 - wx) * v10 + wx * v11)
    )
    return GrayImage.from_array(np.clip(out, 0.0, 1.0))


def preprocess(img: GrayImage, cfg: PreprocessConfig) -> GrayImage:
    """Full normalization chain: TV smooth, CLAHE, TV smooth again."""
    out = tv_denoise(img, cfg.tv_weight_1, cfg.tv_max_iters)
    out = clahe(out, cfg.clahe_clip, cfg.clahe_tiles)
    out = tv_denoise(out, cfg.tv_weight_2, cfg.tv_max_iters)
    return out


_LAPLACE_8 = np.array([[1.0, 1.0, 1.0], [1.0, -8.0, 1.0], [1.0, 1.0, 1.0]])


def laplacian_relief(img: GrayImage) -> WeightField:
    """Pointwise absolute response of the isotropic 8-neighbor Laplacian.

    Borders are handled by reflection padding. A constant image yields an
    identically zero field.
    """
    response = ndimage.convolve(img.values, _LAPLACE_8, mode="reflect")
    return WeightField(values=np.abs(response))


def apply_circular_mask(
    field: WeightField, center: tuple[float, float], radius: float
) -> WeightField:
    """Zero all weights outside the circle of ``radius`` around ``center`` (cx, cy).

    Raises DegenerateInputError if nothing non-zero survives. Idempotent for
    a fixed center and radius.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    h, w = field.values.shape
    cx, cy = center
    yy, xx = np.mgrid[0:h, 0:w]
    inside = (xx - cx) ** 2 + (yy - cy) ** 2 <= radius**2
    if not inside.any():
        raise ValueError("mask circle does not intersect the grid")
    masked = np.where(inside, field.values, 0.0)
    if not (masked > 0).any():
        raise DegenerateInputError("weight field is identically zero inside the mask")
    return WeightField(values=masked, mask_center=(float(cx), float(cy)), mask_radius=float(radius))


def default_mask(img_shape: tuple[int, int], radius_frac: float) -> tuple[tuple[float, float], float]:
    """Centered circular mask covering ``radius_frac`` of half the min dimension."""
    h, w = img_shape
    center = ((w - 1) / 2.0, (h - 1) / 2.0)
    radius = radius_frac * min(h, w) / 2.0
    return center, radius
