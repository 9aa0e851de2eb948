"""On-disk formats for pipeline artifacts.

Binary containers (all little-endian):

* grid ``DCW1``: magic, u32 width, u32 height, row-major f32 values.
* distances ``DCD1``: magic, u32 N, N image ids (u32 byte length + UTF-8),
  then the N(N-1)/2 upper-triangular entries in row-major order three times:
  f32 d_ij, u16 n_ij, f32 p_ij, then 4 x f64 rescale parameters
  (min/max of 1/n, min/max of log p).
* co-clustering ``DCQ1``: magic, u32 N, upper-triangular f32 probabilities.

Grids are additionally exported as 16-bit PNG (min-max scaled, scale in a
JSON sidecar) for visual inspection.
"""

from __future__ import annotations

import csv
import io
import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

GRID_MAGIC = b"DCW1"
DIST_MAGIC = b"DCD1"
COCLUST_MAGIC = b"DCQ1"


def save_grid(values: np.ndarray, path: str | Path) -> None:
    values = np.asarray(values, dtype=np.float32)
    h, w = values.shape
    with open(path, "wb") as fh:
        fh.write(GRID_MAGIC)
        fh.write(struct.pack("<II", w, h))
        fh.write(values.astype("<f4").tobytes())


def load_grid(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != GRID_MAGIC:
            raise ValueError(f"bad grid magic {magic!r}")
        w, h = struct.unpack("<II", fh.read(8))
        data = np.frombuffer(fh.read(4 * w * h), dtype="<f4")
    return data.reshape(h, w).astype(np.float64)


def save_png16(values: np.ndarray, path: str | Path) -> None:
    """Lossless 16-bit PNG with the original value range in a sidecar JSON."""
    values = np.asarray(values, dtype=np.float64)
    vmin, vmax = float(values.min()), float(values.max())
    span = vmax - vmin
    scaled = (values - vmin) / span if span > 0 else np.zeros_like(values)
    arr16 = (scaled * 65535.0).round().astype(np.uint16)
    Image.fromarray(arr16).save(path)
    sidecar = Path(path).with_suffix(Path(path).suffix + ".json")
    sidecar.write_text(json.dumps({"min": vmin, "max": vmax}))


def load_png16(path: str | Path) -> np.ndarray:
    arr = np.asarray(Image.open(path), dtype=np.float64) / 65535.0
    sidecar = Path(path).with_suffix(Path(path).suffix + ".json")
    meta = json.loads(sidecar.read_text())
    return arr * (meta["max"] - meta["min"]) + meta["min"]


def _write_str(fh, s: str) -> None:
    b = s.encode("utf-8")
    fh.write(struct.pack("<I", len(b)))
    fh.write(b)


def _read_str(fh) -> str:
    (n,) = struct.unpack("<I", fh.read(4))
    return fh.read(n).decode("utf-8")


def save_distances(dm, path: str | Path) -> None:
    from .matching import DistanceMatrix  # local import to avoid a cycle

    assert isinstance(dm, DistanceMatrix)
    with open(path, "wb") as fh:
        fh.write(DIST_MAGIC)
        fh.write(struct.pack("<I", dm.n))
        for image_id in dm.ids:
            _write_str(fh, image_id)
        fh.write(np.asarray(dm.d, dtype="<f4").tobytes())
        fh.write(np.asarray(np.minimum(dm.n_matches, 65535), dtype="<u2").tobytes())
        fh.write(np.asarray(dm.p, dtype="<f4").tobytes())
        fh.write(struct.pack("<4d", *dm.rescale_params))


def load_distances(path: str | Path):
    from .matching import DistanceMatrix

    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != DIST_MAGIC:
            raise ValueError(f"bad distance-matrix magic {magic!r}")
        (n,) = struct.unpack("<I", fh.read(4))
        ids = [_read_str(fh) for _ in range(n)]
        m = n * (n - 1) // 2
        d = np.frombuffer(fh.read(4 * m), dtype="<f4").astype(np.float64)
        n_matches = np.frombuffer(fh.read(2 * m), dtype="<u2").astype(np.int64)
        p = np.frombuffer(fh.read(4 * m), dtype="<f4").astype(np.float64)
        rescale = struct.unpack("<4d", fh.read(32))
    return DistanceMatrix(ids=ids, d=d, n_matches=n_matches, p=p, rescale_params=rescale)


def save_coclustering(q: np.ndarray, n: int, path: str | Path) -> None:
    q = np.asarray(q, dtype="<f4")
    if q.shape != (n * (n - 1) // 2,):
        raise ValueError("q must be the condensed upper triangle")
    with open(path, "wb") as fh:
        fh.write(COCLUST_MAGIC)
        fh.write(struct.pack("<I", n))
        fh.write(q.tobytes())


def load_coclustering(path: str | Path) -> tuple[np.ndarray, int]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != COCLUST_MAGIC:
            raise ValueError(f"bad co-clustering magic {magic!r}")
        (n,) = struct.unpack("<I", fh.read(4))
        q = np.frombuffer(fh.read(4 * n * (n - 1) // 2), dtype="<f4").astype(np.float64)
    return q, n


def save_keypoints_csv(kps, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "rank", "x", "y", "variance"])
        for rank, (x, y, var) in enumerate(zip(kps.xs, kps.ys, kps.variances)):
            writer.writerow([kps.image_id, rank, int(x), int(y), repr(float(var))])


def load_keypoints_csv(path: str | Path):
    from .keypoints import KeypointSet

    xs, ys, variances = [], [], []
    image_id = ""
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            image_id = row["image_id"]
            xs.append(int(row["x"]))
            ys.append(int(row["y"]))
            variances.append(float(row["variance"]))
    return KeypointSet(
        image_id=image_id,
        xs=np.array(xs, dtype=np.int64),
        ys=np.array(ys, dtype=np.int64),
        variances=np.array(variances, dtype=np.float64),
    )


def save_partition_csv(ids: list[str], labels, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "cluster_id"])
        for image_id, label in zip(ids, labels):
            writer.writerow([image_id, int(label)])


def load_partition_csv(path: str | Path) -> tuple[list[str], np.ndarray]:
    ids, labels = [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            ids.append(row["image_id"])
            labels.append(int(row["cluster_id"]))
    return ids, np.array(labels, dtype=np.int64)


def distances_to_csv(dm) -> str:
    """Human-readable pairwise export (one row per unordered pair)."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["id_a", "id_b", "d", "n_matches", "procrustes"])
    k = 0
    for i in range(dm.n):
        for j in range(i + 1, dm.n):
            writer.writerow(
                [dm.ids[i], dm.ids[j], repr(float(dm.d[k])), int(dm.n_matches[k]), repr(float(dm.p[k]))]
            )
            k += 1
    return buf.getvalue()
