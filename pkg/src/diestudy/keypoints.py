"""Keypoint selection via the uncertainty field of a re-weighted Gaussian process.

The relief-edge weights act as a data-driven spectral density for a squared
exponential covariance: the kernel between two pixels is the weight-modulated
sum of half-lengthscale kernel products,

    k(x, y) = sum_z k_half(x, z) w(z) k_half(z, y),

which is positive semidefinite for any non-negative weights. Its diagonal,
the prior uncertainty at every pixel, is a single convolution of the weights
with the squared half-lengthscale kernel. Keypoints are chosen greedily at
the grid argmax of the current uncertainty field; after each choice the field
is reduced by the (normalized, squared) kernel column of the chosen pixel,
which is the exact Schur-complement update under the approximation that
kernel values between distinct selected pixels vanish. The half-lengthscale
kernel decays so fast that entries are truncated to zero beyond a few
lengthscales, making each update a local patch operation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.signal import fftconvolve

from .imaging import WeightField


@dataclass
class KernelConfig:
    lengthscale: float
    truncation_radius: float
    n_keypoints: int

    def __post_init__(self):
        if self.lengthscale <= 0:
            raise ValueError("lengthscale must be positive")
        if self.truncation_radius < 3 * self.lengthscale:
            raise ValueError("truncation_radius must be at least 3 lengthscales")
        if self.n_keypoints < 1:
            raise ValueError("n_keypoints must be at least 1")

    @classmethod
    def for_height(cls, height: int, n_keypoints: int = 300) -> "KernelConfig":
        """Defaults scaled to the image: lengthscale 2% of height, truncation 4x."""
        ell = 0.02 * height
        return cls(lengthscale=ell, truncation_radius=4.0 * ell, n_keypoints=n_keypoints)


@dataclass
class VarianceField:
    """Grid of GP uncertainty values; entries at selected pixels are zero."""

    values: np.ndarray
    n_selected: int = 0


@dataclass
class KeypointSet:
    """Ordered keypoints (x=column, y=row) with the field value at selection."""

    image_id: str
    xs: np.ndarray
    ys: np.ndarray
    variances: np.ndarray
    exhausted: bool = False  # field collapsed before the requested count

    def __len__(self) -> int:
        return len(self.xs)

    def coords(self) -> np.ndarray:
        """(n, 2) array of (x, y) positions."""
        return np.stack([self.xs, self.ys], axis=1).astype(np.float64)


def se_kernel(x, y, lengthscale: float) -> float | np.ndarray:
    """Squared exponential kernel exp(-||x-y||^2 / (2 l^2)); 1 at x == y."""
    if lengthscale <= 0:
        raise ValueError("lengthscale must be positive")
    diff = np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    r2 = (diff**2).sum(axis=-1)
    out = np.exp(-r2 / (2.0 * lengthscale**2))
    return float(out) if np.isscalar(r2) or out.ndim == 0 else out


def _half_kernel_stencil(lengthscale: float, truncation_radius: float) -> np.ndarray:
    """Half-lengthscale kernel sampled on integer offsets, zero beyond truncation."""
    r = int(np.ceil(truncation_radius))
    offs = np.arange(-r, r + 1, dtype=np.float64)
    d2 = offs[:, None] ** 2 + offs[None, :] ** 2
    half = lengthscale / 2.0
    stencil = np.exp(-d2 / (2.0 * half**2))
    stencil[d2 > truncation_radius**2] = 0.0
    return stencil


def reweighted_kernel(
    omega: WeightField,
    x,
    y,
    lengthscale: float,
    truncation_radius: float | None = None,
) -> float:
    """Weight-modulated kernel value sum_z k_half(x,z) w(z) k_half(z,y).

    Symmetric, non-negative, and zero whenever the weights vanish on the
    overlap of the two truncated supports.
    """
    if truncation_radius is None:
        truncation_radius = 4.0 * lengthscale
    w = omega.values
    h, wid = w.shape
    px, py = float(x[0]), float(x[1])
    qx, qy = float(y[0]), float(y[1])
    r = truncation_radius
    rlo = max(int(np.ceil(max(py, qy) - r)), 0)
    rhi = min(int(np.floor(min(py, qy) + r)), h - 1)
    clo = max(int(np.ceil(max(px, qx) - r)), 0)
    chi = min(int(np.floor(min(px, qx) + r)), wid - 1)
    if rlo > rhi or clo > chi:
        return 0.0
    rows = np.arange(rlo, rhi + 1, dtype=np.float64)
    cols = np.arange(clo, chi + 1, dtype=np.float64)
    half = lengthscale / 2.0

    def factor(cx, cy):
        d2 = (rows[:, None] - cy) ** 2 + (cols[None, :] - cx) ** 2
        k = np.exp(-d2 / (2.0 * half**2))
        k[d2 > truncation_radius**2] = 0.0
        return k

    block = factor(px, py) * w[rlo : rhi + 1, clo : chi + 1] * factor(qx, qy)
    return float(block.sum())


def prior_variance_field(
    omega: WeightField,
    lengthscale: float,
    truncation_radius: float | None = None,
) -> VarianceField:
    """Diagonal of the re-weighted kernel on the full grid, via one convolution.

    Pointwise equal to ``reweighted_kernel(omega, x, x, ...)``. Pixels outside
    the grid contribute nothing, so the field drops off near the borders.
    """
    if truncation_radius is None:
        truncation_radius = 4.0 * lengthscale
    if not (omega.values > 0).any():
        raise ValueError("weight field is identically zero")
    stencil = _half_kernel_stencil(lengthscale, truncation_radius)
    field = fftconvolve(omega.values, stencil**2, mode="same")
    return VarianceField(values=np.maximum(field, 0.0), n_selected=0)


def _kernel_column_patch(
    w: np.ndarray,
    stencil: np.ndarray,
    row: int,
    col: int,
) -> tuple[np.ndarray, int, int]:
    """Grid patch of k(., xi) around the pixel (row, col).

    Returns (patch, top_row, left_col) where the patch covers the truncated
    support of the kernel column, clipped to the grid.
    """
    h, wid = w.shape
    r = stencil.shape[0] // 2
    rlo, rhi = max(row - r, 0), min(row + r, h - 1)
    clo, chi = max(col - r, 0), min(col + r, wid - 1)
    sub = stencil[rlo - row + r : rhi - row + r + 1, clo - col + r : chi - col + r + 1]
    g = w[rlo : rhi + 1, clo : chi + 1] * sub
    full = fftconvolve(g, stencil, mode="full")  # covers rows rlo-r .. rhi+r
    top, left = rlo - r, clo - r
    out_rlo, out_rhi = max(top, 0), min(rhi + r, h - 1)
    out_clo, out_chi = max(left, 0), min(chi + r, wid - 1)
    patch = full[out_rlo - top : out_rhi - top + 1, out_clo - left : out_chi - left + 1]
    return patch, out_rlo, out_clo


def select_keypoints(omega: WeightField, cfg: KernelConfig, image_id: str = "") -> KeypointSet:
    """Iteratively pick grid argmax locations of the shrinking uncertainty field.

    Each step subtracts the squared kernel column of the chosen pixel divided
    by its prior variance, clamps the field at zero, and zeroes the chosen
    pixel exactly. Ties at the argmax resolve to the smallest row-major index,
    so the selection is fully deterministic. If the field collapses before
    ``n_keypoints`` are found, the shorter set is returned with
    ``exhausted=True``.
    """
    mask = omega.mask_bool()
    n_eligible = int(mask.sum())
    if cfg.n_keypoints > n_eligible:
        raise ValueError(
            f"requested {cfg.n_keypoints} keypoints but only {n_eligible} in-mask pixels"
        )
    prior = prior_variance_field(omega, cfg.lengthscale, cfg.truncation_radius).values
    stencil = _half_kernel_stencil(cfg.lengthscale, cfg.truncation_radius)
    field = prior.copy()
    neg_inf = -np.inf
    selectable = np.where(mask, field, neg_inf)
    stop_level = 1e-12 * max(selectable.max(), 0.0)

    h, w = field.shape
    xs, ys, variances = [], [], []
    exhausted = False
    for _ in range(cfg.n_keypoints):
        flat = int(np.argmax(selectable))
        row, col = divmod(flat, w)
        val = float(selectable[row, col])
        if val <= stop_level:
            exhausted = True
            break
        xs.append(col)
        ys.append(row)
        variances.append(val)
        patch, top, left = _kernel_column_patch(omega.values, stencil, row, col)
        ph, pw = patch.shape
        sl = (slice(top, top + ph), slice(left, left + pw))
        field[sl] = np.maximum(field[sl] - patch**2 / prior[row, col], 0.0)
        field[row, col] = 0.0
        selectable[sl] = np.where(mask[sl], field[sl], neg_inf)
    return KeypointSet(
        image_id=image_id,
        xs=np.array(xs, dtype=np.int64),
        ys=np.array(ys, dtype=np.int64),
        variances=np.array(variances, dtype=np.float64),
        exhausted=exhausted,
    )


def kernel_column_field(
    omega: WeightField,
    point: tuple[int, int],
    lengthscale: float,
    truncation_radius: float | None = None,
) -> np.ndarray:
    """Full-grid k(., xi) for a single pixel xi = (x, y)."""
    if truncation_radius is None:
        truncation_radius = 4.0 * lengthscale
    stencil = _half_kernel_stencil(lengthscale, truncation_radius)
    col, row = point
    patch, top, left = _kernel_column_patch(omega.values, stencil, int(row), int(col))
    out = np.zeros_like(omega.values)
    ph, pw = patch.shape
    out[top : top + ph, left : left + pw] = patch
    return out


def exact_posterior_variance(
    omega: WeightField,
    lengthscale: float,
    selected: list[tuple[int, int]],
    truncation_radius: float | None = None,
    jitter_scale: float = 1e-8,
) -> VarianceField:
    """Schur-complement uncertainty field conditioned on the selected pixels.

    field(x) = k(x,x) - v(x)^T G^{-1} v(x) with v_i(x) = k(x, xi_i) and
    G_ij = k(xi_i, xi_j). The Gram matrix gets ``jitter_scale * max(G)``
    added to its diagonal. This is the dense oracle for the iterative
    rank-one selection update; it is quadratic in the grid size and meant
    for small grids.
    """
    prior = prior_variance_field(omega, lengthscale, truncation_radius).values
    if not selected:
        return VarianceField(values=prior, n_selected=0)
    n = len(selected)
    h, w = prior.shape
    columns = np.stack(
        [
            kernel_column_field(omega, pt, lengthscale, truncation_radius).ravel()
            for pt in selected
        ]
    )  # (n, h*w)
    flat_idx = [int(y) * w + int(x) for x, y in selected]
    gram = columns[:, flat_idx]
    gram = (gram + gram.T) / 2.0
    jitter = jitter_scale * max(gram.max(), 0.0)
    gram = gram + jitter * np.eye(n)
    try:
        chol = cho_factor(gram, lower=True)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"singular Gram matrix even after jitter: {exc}")
    solved = cho_solve(chol, columns)
    quad = (columns * solved).sum(axis=0)
    field = np.maximum(prior - quad.reshape(h, w), 0.0)
    return VarianceField(values=field, n_selected=n)
