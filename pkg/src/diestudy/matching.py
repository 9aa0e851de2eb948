"""Pairwise dissimilarities from keypoint descriptors and rigid alignment.

For each unordered image pair: descriptors are pre-matched with a
nearest/second-nearest ratio test, the match set is thinned to a mutually
consistent subset under a pairwise distance-ratio (distortion) bound, and the
surviving correspondences are scored by the residual of the best rigid
alignment (rotation + translation, no scaling or reflection). The matrix
entry combines how many matches survived and how well they align; the two
statistics are min-max rescaled over the whole dataset and summed, so the
final distances live in [0, 2].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .imaging import GrayImage
from .keypoints import KeypointSet

# Alignment residual floor (height-normalized units) so log p stays finite for
# pixel-identical pairs; far below one-pixel quantization, and small enough to
# keep exact duplicates at the bottom of the rescaled range without letting a
# single zero-residual pair crush the spread of all other pairs.
P_FLOOR = 1e-4


@dataclass
class MatchingConfig:
    patch_radius: int = 24
    ratio_threshold: float = 0.8
    distortion_delta: float = 0.15
    rotation_gate_deg: float = 20.0

    def __post_init__(self):
        if not (0 < self.ratio_threshold < 1):
            raise ValueError("ratio_threshold must be in (0, 1)")
        if self.distortion_delta <= 0:
            raise ValueError("distortion_delta must be positive")
        if self.patch_radius < 2:
            raise ValueError("patch_radius must be at least 2")


@dataclass
class DescriptorSet:
    """Per-keypoint 128-dim gradient-orientation histograms (unit L2 norm).

    Flat patches produce an all-zero descriptor and a set ``flat`` flag; those
    keypoints never pre-match.
    """

    vectors: np.ndarray  # (n, 128)
    flat: np.ndarray  # (n,) bool
    keypoints: KeypointSet


@dataclass
class MatchSet:
    """One-to-one index pairs between two keypoint sets."""

    a_idx: np.ndarray
    b_idx: np.ndarray
    stage: str = "prematched"  # "prematched" | "filtered"

    def __len__(self) -> int:
        return len(self.a_idx)


@dataclass
class PairScore:
    n_matches: int
    p: float  # rigid-alignment residual; NaN until degenerate substitution
    rotation_deg: float
    degenerate: bool


@dataclass
class DistanceMatrix:
    """Symmetric dissimilarities stored as the condensed upper triangle.

    ``d[k]`` is the distance of the unordered pair with condensed index k
    (row-major over i < j). ``n_matches`` and ``p`` keep the per-pair
    provenance after degenerate substitution. ``rescale_params`` is
    (min 1/n, max 1/n, min log p, max log p) used for the final rescaling.
    """

    ids: list[str]
    d: np.ndarray
    n_matches: np.ndarray
    p: np.ndarray
    rescale_params: tuple[float, float, float, float]

    @property
    def n(self) -> int:
        return len(self.ids)

    def pair_index(self, i: int, j: int) -> int:
        if i == j:
            raise ValueError("diagonal entries are not stored")
        if i > j:
            i, j = j, i
        return i * (2 * self.n - i - 1) // 2 + (j - i - 1)

    def get(self, i: int, j: int) -> float:
        if i == j:
            return 0.0
        return float(self.d[self.pair_index(i, j)])

    def square(self) -> np.ndarray:
        out = np.zeros((self.n, self.n))
        k = 0
        for i in range(self.n):
            for j in range(i + 1, self.n):
                out[i, j] = out[j, i] = self.d[k]
                k += 1
        return out


def compute_descriptors(
    img: GrayImage, kps: KeypointSet, patch_radius: int = 24
) -> DescriptorSet:
    """Gradient-orientation histograms: 4x4 spatial cells x 8 orientation bins.

    Orientations are kept in the image frame (no dominant-orientation
    normalization; the global rotation of properly photographed coins varies
    little). Contributions are magnitude-weighted with a Gaussian window over
    the patch; pixels falling outside the image are skipped.
    """
    gy, gx = np.gradient(img.values)
    mag = np.sqrt(gx**2 + gy**2)
    ori = np.arctan2(gy, gx)  # (-pi, pi]
    obin_grid = np.minimum((ori + np.pi) / (2 * np.pi) * 8.0, 7.999).astype(np.int64)

    r = patch_radius
    offs = np.arange(-r, r, dtype=np.int64)
    cell = np.minimum((offs + r) // max(r // 2, 1), 3)
    oy, ox = np.meshgrid(offs, offs, indexing="ij")
    window = np.exp(-(ox.astype(np.float64) ** 2 + oy.astype(np.float64) ** 2) / (2.0 * r**2))
    cell_y, cell_x = np.meshgrid(cell, cell, indexing="ij")

    h, w = img.values.shape
    n = len(kps)
    vectors = np.zeros((n, 128))
    flat = np.zeros(n, dtype=bool)
    for idx in range(n):
        cx, cy = int(kps.xs[idx]), int(kps.ys[idx])
        rows = cy + oy
        cols = cx + ox
        valid = (rows >= 0) & (rows < h) & (cols >= 0) & (cols < w)
        rr, cc = rows[valid], cols[valid]
        weights = mag[rr, cc] * window[valid]
        bins = (cell_y[valid] * 4 + cell_x[valid]) * 8 + obin_grid[rr, cc]
        hist = np.bincount(bins, weights=weights, minlength=128)
        norm = np.linalg.norm(hist)
        if norm < 1e-12:
            flat[idx] = True
        else:
            vectors[idx] = hist / norm
    return DescriptorSet(vectors=vectors, flat=flat, keypoints=kps)


def prematch(descA: DescriptorSet, descB: DescriptorSet, ratio_threshold: float = 0.8) -> MatchSet:
    """Nearest-neighbor matching with a second-nearest ratio test.

    Each A keypoint is paired with its closest B descriptor and kept only if
    nearest/second-nearest < ``ratio_threshold``. Several A keypoints claiming
    the same B keypoint are resolved in favor of the smallest distance, so the
    result is one-to-one. Ambiguous zero-distance duplicates are dropped.
    """
    if len(descA.vectors) == 0 or len(descB.vectors) == 0:
        raise ValueError("descriptor sets must be non-empty")
    a_ok = np.flatnonzero(~descA.flat)
    b_ok = np.flatnonzero(~descB.flat)
    if len(a_ok) == 0 or len(b_ok) < 2:
        return MatchSet(np.array([], dtype=np.int64), np.array([], dtype=np.int64))

    dist = cdist(descA.vectors[a_ok], descB.vectors[b_ok])
    order = np.argsort(dist, axis=1, kind="stable")
    nearest = order[:, 0]
    d1 = dist[np.arange(len(a_ok)), nearest]
    d2 = dist[np.arange(len(a_ok)), order[:, 1]]

    best: dict[int, tuple[float, int]] = {}
    for row in range(len(a_ok)):
        if d2[row] <= 0.0:
            continue  # duplicate descriptors; ambiguous
        if d1[row] / d2[row] >= ratio_threshold:
            continue
        b = int(b_ok[nearest[row]])
        a = int(a_ok[row])
        cand = (float(d1[row]), a)
        if b not in best or cand < best[b]:
            best[b] = cand
    pairs = sorted((a, b) for b, (_, a) in best.items())
    a_idx = np.array([a for a, _ in pairs], dtype=np.int64)
    b_idx = np.array([b for _, b in pairs], dtype=np.int64)
    return MatchSet(a_idx=a_idx, b_idx=b_idx)


def _ratio_consistency(ptsA: np.ndarray, ptsB: np.ndarray, delta: float) -> np.ndarray:
    """Boolean matrix: matches m, m' whose inter-point distance ratio is within
    [1/(1+delta), 1+delta]. Coincident pairs on both sides count as consistent."""
    da = cdist(ptsA, ptsA)
    db = cdist(ptsB, ptsB)
    hi = 1.0 + delta
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = da / db
    ok = (ratio <= hi) & (ratio >= 1.0 / hi)
    both_zero = (da == 0) & (db == 0)
    ok |= both_zero
    np.fill_diagonal(ok, True)
    return ok


def low_distortion_filter(
    matches: MatchSet,
    ptsA: np.ndarray,
    ptsB: np.ndarray,
    distortion_bound: float = 0.15,
) -> MatchSet:
    """Greedy consensus thinning to a pairwise distance-ratio-consistent subset.

    Repeatedly drops the match agreeing with the fewest others until every
    retained pair of matches has its A-side / B-side distance ratio within the
    bound. Ties remove the later match. Inputs of size <= 2 pass through
    unchanged (the constraint is vacuous at that size).
    """
    m = len(matches)
    if m <= 2:
        return MatchSet(matches.a_idx.copy(), matches.b_idx.copy(), stage="filtered")
    a = np.asarray(ptsA, dtype=np.float64)[matches.a_idx]
    b = np.asarray(ptsB, dtype=np.float64)[matches.b_idx]
    ok = _ratio_consistency(a, b, distortion_bound)

    alive = np.ones(m, dtype=bool)
    while True:
        sub = ok[np.ix_(alive, alive)]
        if sub.all():
            break
        scores = sub.sum(axis=1)
        worst_local = int(np.flatnonzero(scores == scores.min())[-1])
        alive[np.flatnonzero(alive)[worst_local]] = False
    keep = np.flatnonzero(alive)
    return MatchSet(matches.a_idx[keep], matches.b_idx[keep], stage="filtered")


def max_consistent_subset(
    ptsA: np.ndarray, ptsB: np.ndarray, distortion_bound: float
) -> int:
    """Exhaustive size of the largest pairwise-consistent match subset.

    Exponential in the match count; only usable as a verification oracle for
    small inputs.
    """
    m = len(ptsA)
    ok = _ratio_consistency(np.asarray(ptsA, float), np.asarray(ptsB, float), distortion_bound)
    best = 0
    for mask in range(1 << m):
        idx = [i for i in range(m) if mask >> i & 1]
        if len(idx) <= best:
            continue
        sub = ok[np.ix_(idx, idx)]
        if sub.all():
            best = len(idx)
    return best


def procrustes_distance(ptsA: np.ndarray, ptsB: np.ndarray) -> tuple[float, float]:
    """Closed-form best rigid alignment of matched 2-D point lists.

    Returns (residual, rotation_deg): the square root of the summed squared
    distances after the optimal rotation + translation of A onto B (scaling
    and reflection excluded), and the rotation angle in (-180, 180].
    """
    a = np.asarray(ptsA, dtype=np.float64)
    b = np.asarray(ptsB, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2 or a.shape[1] != 2:
        raise ValueError("point lists must be matched (n, 2) arrays")
    n = a.shape[0]
    if n == 0:
        raise ValueError("empty point lists")
    ac = a - a.mean(axis=0)
    bc = b - b.mean(axis=0)
    num = float((ac[:, 0] * bc[:, 1] - ac[:, 1] * bc[:, 0]).sum())
    den = float((ac * bc).sum())
    if num == 0.0 and den == 0.0:
        theta = 0.0
    else:
        theta = np.arctan2(num, den)
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    residual = float(np.sqrt(((ac @ rot.T - bc) ** 2).sum()))
    deg = float(np.degrees(theta))
    if deg <= -180.0:
        deg += 360.0
    return residual, deg


def score_pair(
    kpsA: KeypointSet,
    descA: DescriptorSet,
    heightA: int,
    kpsB: KeypointSet,
    descB: DescriptorSet,
    heightB: int,
    cfg: MatchingConfig,
) -> PairScore:
    """Match, filter, and rigidly align one unordered image pair.

    Pairs with at most two surviving matches carry no geometric signal and are
    marked degenerate (their residual is substituted at assembly time). A
    best-fit rotation beyond the gate marks the pair as a non-match.
    """
    matches = prematch(descA, descB, cfg.ratio_threshold)
    coordsA, coordsB = kpsA.coords(), kpsB.coords()
    filtered = low_distortion_filter(matches, coordsA, coordsB, cfg.distortion_delta)
    n = len(filtered)
    if n <= 2:
        return PairScore(n_matches=n, p=float("nan"), rotation_deg=float("nan"), degenerate=True)
    a = coordsA[filtered.a_idx] / float(heightA)
    b = coordsB[filtered.b_idx] / float(heightB)
    p, rotation = procrustes_distance(a, b)
    if abs(rotation) > cfg.rotation_gate_deg:
        return PairScore(n_matches=0, p=float("nan"), rotation_deg=rotation, degenerate=True)
    return PairScore(n_matches=n, p=p, rotation_deg=rotation, degenerate=False)


def assemble_distance_matrix(ids: list[str], scores: dict[tuple[int, int], PairScore]) -> DistanceMatrix:
    """Combine all pair scores into the final [0, 2] dissimilarity matrix.

    Two passes: the maximum alignment residual over non-degenerate pairs is
    substituted into degenerate ones (whose match-count statistic is likewise
    pinned to its maximum 1/n = 1), then 1/n and log p are independently
    min-max rescaled to [0, 1] and summed. A statistic that is constant across
    all pairs rescales to 0.
    """
    n = len(ids)
    m = n * (n - 1) // 2
    expected = {(i, j) for i in range(n) for j in range(i + 1, n)}
    if set(scores.keys()) != expected:
        raise ValueError("scores must cover every unordered pair exactly once")

    inv_n = np.empty(m)
    p = np.empty(m)
    n_arr = np.empty(m, dtype=np.int64)
    degenerate = np.empty(m, dtype=bool)
    k = 0
    for i in range(n):
        for j in range(i + 1, n):
            s = scores[(i, j)]
            degenerate[k] = s.degenerate
            n_arr[k] = s.n_matches
            inv_n[k] = 1.0 if s.degenerate else 1.0 / s.n_matches
            p[k] = np.nan if s.degenerate else s.p
            k += 1

    if degenerate.all():
        raise ValueError("all pairs are degenerate; no alignment residual to substitute")
    p_max = float(np.nanmax(p[~degenerate]))
    p = np.where(degenerate, p_max, p)
    logp = np.log(np.maximum(p, P_FLOOR))

    # Rescale ranges come from the informative (non-degenerate) pairs, so a
    # handful of degenerate pairs cannot compress everyone else's spread;
    # degenerate pairs sit at the maximum of both channels, i.e. at d = 2.
    def rescale(v: np.ndarray) -> tuple[np.ndarray, float, float]:
        lo, hi = float(v[~degenerate].min()), float(v[~degenerate].max())
        if hi - lo < 1e-300:
            return np.where(degenerate, 1.0, 0.0), lo, hi
        out = np.clip((v - lo) / (hi - lo), 0.0, 1.0)
        return np.where(degenerate, 1.0, out), lo, hi

    r_inv, inv_lo, inv_hi = rescale(inv_n)
    r_logp, lp_lo, lp_hi = rescale(logp)
    d = r_inv + r_logp
    return DistanceMatrix(
        ids=list(ids),
        d=d,
        n_matches=n_arr,
        p=p,
        rescale_params=(inv_lo, inv_hi, lp_lo, lp_hi),
    )
