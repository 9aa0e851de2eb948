"""Synthetic coin benchmark with planted die labels.

Each die is a procedural template: a disk (the flan) carrying a portrait-like
ellipse with hair arcs in the middle and letter-like glyphs arranged around
the rim. Dies of one benchmark share the same glyph slots and portrait pose
(same "type"), but every die draws its own stroke geometry, which is what a
die study has to pick up. Per coin, the template is degraded: small rotation,
wear blur, contrast jitter, and sensor noise. A duplicate coin is the same
degraded relief re-photographed, i.e. re-rendered with different lighting
gain and noise only.

Grades mimic preservation labels and are derived from the wear draw.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .imaging import GrayImage

GRADES = ["extremely fine", "very fine", "fine", "very good", "good"]


@dataclass
class SyntheticBenchmarkSpec:
    n_dies: int = 20
    coins_per_die_mean: float = 5.0
    coins_per_die_variance: float = 15.0
    image_size: int = 256
    wear_blur_range: tuple[float, float] = (0.25, 0.9)
    noise_level: float = 0.025
    contrast_jitter: float = 0.15
    rotation_jitter_deg: float = 4.0
    duplicate_prob: float = 0.0

    def __post_init__(self):
        if self.n_dies < 2:
            raise ValueError("need at least two dies")
        if not (0.0 <= self.duplicate_prob <= 1.0):
            raise ValueError("duplicate_prob must be a probability")
        if self.wear_blur_range[0] > self.wear_blur_range[1] or self.wear_blur_range[0] < 0:
            raise ValueError("invalid wear blur range")


@dataclass
class SynthRecord:
    image_id: str
    die_id: str
    coin_id: str
    grade: str
    is_duplicate: bool = False


def _draw_segment(canvas: np.ndarray, p0, p1, thickness: float, intensity: float) -> None:
    """Accumulate an anti-aliased line segment onto the canvas."""
    h, w = canvas.shape
    x0, y0 = p0
    x1, y1 = p1
    pad = thickness + 2.0
    rlo = max(int(np.floor(min(y0, y1) - pad)), 0)
    rhi = min(int(np.ceil(max(y0, y1) + pad)), h - 1)
    clo = max(int(np.floor(min(x0, x1) - pad)), 0)
    chi = min(int(np.ceil(max(x0, x1) + pad)), w - 1)
    if rlo > rhi or clo > chi:
        return
    yy, xx = np.mgrid[rlo : rhi + 1, clo : chi + 1].astype(np.float64)
    dx, dy = x1 - x0, y1 - y0
    seg_len2 = dx * dx + dy * dy
    if seg_len2 == 0:
        t = np.zeros_like(xx)
    else:
        t = np.clip(((xx - x0) * dx + (yy - y0) * dy) / seg_len2, 0.0, 1.0)
    dist = np.hypot(xx - (x0 + t * dx), yy - (y0 + t * dy))
    alpha = np.clip(thickness / 2.0 + 0.75 - dist, 0.0, 1.0) * intensity
    region = canvas[rlo : rhi + 1, clo : chi + 1]
    np.maximum(region, alpha, out=region)


def _draw_arc(canvas, center, radius, a0, a1, thickness, intensity, n_seg=16):
    angles = np.linspace(a0, a1, n_seg + 1)
    pts = [
        (center[0] + radius * np.cos(a), center[1] + radius * np.sin(a)) for a in angles
    ]
    for p0, p1 in zip(pts[:-1], pts[1:]):
        _draw_segment(canvas, p0, p1, thickness, intensity)


def _glyph(canvas, rng, cx, cy, box, thickness):
    """A letter-like mark: 2 to 4 strokes inside a small box."""
    n_strokes = int(rng.integers(2, 5))
    for _ in range(n_strokes):
        p0 = (cx + rng.uniform(-box, box), cy + rng.uniform(-box, box))
        p1 = (cx + rng.uniform(-box, box), cy + rng.uniform(-box, box))
        _draw_segment(canvas, p0, p1, thickness, rng.uniform(0.8, 1.0))


def render_die_template(
    size: int,
    type_seed: int,
    die_seed: int,
    slot_jitter: float = 0.1,
    radius_jitter: float = 0.03,
) -> np.ndarray:
    """Procedural die face: shared type layout, die-specific stroke geometry."""
    type_rng = np.random.default_rng(type_seed)
    die_rng = np.random.default_rng(die_seed)
    s = float(size)
    center = (s / 2.0, s / 2.0)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    rr = np.hypot(xx - center[0], yy - center[1])

    flan_radius = 0.47 * s
    img = np.full((size, size), 0.08)
    disk = rr <= flan_radius
    img[disk] = 0.42 + 0.08 * (1.0 - (rr[disk] / flan_radius) ** 2)

    relief = np.zeros((size, size))
    thickness = max(s / 130.0, 1.2)

    # rim ring (die independent; carries no class information)
    _draw_arc(relief, center, 0.45 * s, 0.0, 2 * np.pi, thickness, 0.7, n_seg=64)

    # portrait: ellipse outline with die-specific axes and a low-frequency
    # radial modulation (no two engravers cut the same profile), hair arcs,
    # neck line
    ax = 0.16 * s * (1.0 + 0.1 * die_rng.uniform(-1, 1))
    by = 0.22 * s * (1.0 + 0.1 * die_rng.uniform(-1, 1))
    px = center[0] - 0.03 * s
    mod_amp = die_rng.uniform(0.04, 0.09, 3)
    mod_phase = die_rng.uniform(0, 2 * np.pi, 3)
    angles = np.linspace(0, 2 * np.pi, 49)
    wobble = 1.0 + sum(
        mod_amp[k] / (k + 1) * np.cos((k + 2) * angles + mod_phase[k]) for k in range(3)
    )
    pts = [
        (px + ax * w * np.cos(a), center[1] + by * w * np.sin(a))
        for a, w in zip(angles, wobble)
    ]
    for p0, p1 in zip(pts[:-1], pts[1:]):
        _draw_segment(relief, p0, p1, thickness, 0.9)
    for _ in range(int(die_rng.integers(3, 6))):
        a0 = die_rng.uniform(-2.4, -0.7)
        _draw_arc(
            relief,
            (px + die_rng.uniform(-0.05, 0.05) * s, center[1] + die_rng.uniform(-0.08, 0.0) * s),
            die_rng.uniform(0.08, 0.16) * s,
            a0,
            a0 + die_rng.uniform(0.6, 1.6),
            thickness * 0.8,
            die_rng.uniform(0.6, 0.9),
        )
    _draw_segment(
        relief,
        (px - 0.05 * s, center[1] + by),
        (px + die_rng.uniform(0.02, 0.08) * s, center[1] + by + 0.06 * s),
        thickness,
        0.8,
    )

    # legend: glyph slots shared by the type, but each die arranges them with
    # small positional offsets and cuts its own strokes (the discriminative
    # signal a die study keys on)
    n_glyphs = 14
    slot_angles = type_rng.uniform(0, 2 * np.pi) + np.linspace(0, 2 * np.pi, n_glyphs + 1)[:-1]
    slot_angles = slot_angles + type_rng.uniform(-0.05, 0.05, n_glyphs)
    legend_radius = 0.37 * s
    box = 0.024 * s
    for a in slot_angles:
        a_die = a + die_rng.uniform(-slot_jitter, slot_jitter)
        r_die = legend_radius + die_rng.uniform(-radius_jitter, radius_jitter) * s
        gx = center[0] + r_die * np.cos(a_die)
        gy = center[1] + r_die * np.sin(a_die)
        _glyph(relief, die_rng, gx, gy, box, thickness)

    out = img + 0.45 * relief * disk
    return np.clip(out, 0.0, 1.0)


def _grade_from_wear(sigma: float, blur_range: tuple[float, float]) -> str:
    lo, hi = blur_range
    if hi <= lo:
        return GRADES[0]
    frac = np.clip((sigma - lo) / (hi - lo), 0.0, 1.0)
    return GRADES[min(int(frac * len(GRADES)), len(GRADES) - 1)]


def _photograph(relief: np.ndarray, rng, spec: SyntheticBenchmarkSpec) -> np.ndarray:
    """Photometric-only variation: lighting gain, offset, sensor noise."""
    out = relief
    if spec.contrast_jitter > 0:
        gain = 1.0 + rng.uniform(-spec.contrast_jitter, spec.contrast_jitter)
        offset = rng.uniform(-0.3, 0.3) * spec.contrast_jitter
        out = (out - 0.5) * gain + 0.5 + offset
    if spec.noise_level > 0:
        out = out + rng.normal(0.0, spec.noise_level, out.shape)
    return np.clip(out, 0.0, 1.0)


def generate_synthetic_benchmark(
    spec: SyntheticBenchmarkSpec, seed: int = 0
) -> tuple[dict[str, GrayImage], list[SynthRecord]]:
    """Render the benchmark: per-die templates, per-coin degradations.

    Coin counts per die follow the same shifted negative binomial family used
    by the clustering size prior, so singletons occur naturally. With
    ``duplicate_prob`` > 0 a coin may appear twice: identical relief state,
    different lighting and noise.
    """
    rng = np.random.default_rng(seed)
    m = spec.coins_per_die_mean - 1.0
    v = spec.coins_per_die_variance
    images: dict[str, GrayImage] = {}
    records: list[SynthRecord] = []
    type_seed = int(rng.integers(2**31))

    for die_idx in range(spec.n_dies):
        die_id = f"die{die_idx:03d}"
        template = render_die_template(spec.image_size, type_seed, int(rng.integers(2**31)))
        if m <= 0:
            n_coins = 1
        elif v <= m * (1 + 1e-12):
            n_coins = 1 + int(rng.poisson(m))
        else:
            p = m / v
            r = m * m / (v - m)
            n_coins = 1 + int(rng.negative_binomial(r, p))
        for coin_idx in range(n_coins):
            coin_id = f"{die_id}_coin{coin_idx:02d}"
            worn = template
            rot = rng.uniform(-spec.rotation_jitter_deg, spec.rotation_jitter_deg)
            if rot != 0.0:
                worn = np.clip(
                    ndimage.rotate(worn, rot, reshape=False, order=1, mode="constant", cval=0.08),
                    0.0,
                    1.0,
                )
            sigma = rng.uniform(*spec.wear_blur_range)
            if sigma > 0.0:
                worn = ndimage.gaussian_filter(worn, sigma, mode="nearest")
            grade = _grade_from_wear(sigma, spec.wear_blur_range)

            photo = _photograph(worn, rng, spec)
            images[coin_id] = GrayImage.from_array(photo)
            records.append(SynthRecord(coin_id, die_id, coin_id, grade))
            if rng.random() < spec.duplicate_prob:
                # same published photograph under different lighting gain
                gain = 1.0 + rng.uniform(0.1, 0.25) * rng.choice([-1.0, 1.0])
                offset = rng.uniform(-0.06, 0.06)
                dup = np.clip((photo - 0.5) * gain + 0.5 + offset, 0.0, 1.0)
                dup_id = f"{coin_id}_b"
                images[dup_id] = GrayImage.from_array(dup)
                records.append(SynthRecord(dup_id, die_id, coin_id, grade, is_duplicate=True))
    return images, records


def duplicate_pairs(records: list[SynthRecord]) -> list[tuple[str, str]]:
    """Unordered image-id pairs that show the same physical coin."""
    by_coin: dict[str, list[str]] = {}
    for rec in records:
        by_coin.setdefault(rec.coin_id, []).append(rec.image_id)
    pairs = []
    for image_ids in by_coin.values():
        for i in range(len(image_ids)):
            for j in range(i + 1, len(image_ids)):
                pairs.append((image_ids[i], image_ids[j]))
    return pairs
