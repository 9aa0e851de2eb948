"""Stage orchestration: normalize, keypoints, distances, cluster, evaluate.

Artifacts land under the configured output directory:

    preprocessed/<id>.dcw (+ .png with .json sidecar)
    weights/<id>.dcw
    keypoints/<id>.csv
    distances.dcd, distances.csv
    coclustering.dcq, chain.jsonl, partition.csv
    manifest.json

Every stage is cached on a content hash of its inputs and config; a rerun
with unchanged inputs skips all work and reproduces the identical manifest.
Per-image work and pair scoring fan out over a thread pool (the heavy lifting
is in numpy); results are keyed, so the outcome does not depend on
scheduling. Pair scoring and matrix assembly are separated by a barrier
because degenerate pairs borrow the dataset-wide maximum alignment residual
and the final rescaling is global.
"""

from __future__ import annotations

import csv
import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import formats
from .clustering import (
    Partition,
    PriorConfig,
    enforce_size_cap,
    estimate_likelihood_params,
    kmedoids_init,
    run_mcmc,
    salso_point_estimate,
)
from .config import PipelineConfig, config_fingerprint
from .imaging import (
    GrayImage,
    apply_circular_mask,
    default_mask,
    laplacian_relief,
    load_and_normalize,
    preprocess,
)
from .keypoints import select_keypoints
from .matching import (
    DistanceMatrix,
    MatchingConfig,
    assemble_distance_matrix,
    compute_descriptors,
    score_pair,
)
from .metrics import nmi, per_class_report, weighted_summary

STAGES = ("preprocess", "keypoints", "distances", "cluster")


def _sha(*parts: bytes | str) -> str:
    h = hashlib.sha256()
    for part in parts:
        h.update(part.encode() if isinstance(part, str) else part)
    return h.hexdigest()


def read_manifest(path: str | Path) -> list[dict]:
    """Input manifest: JSON {"images": [{"id", "path", optional "grade"}]}."""
    data = json.loads(Path(path).read_text())
    images = data["images"]
    seen = set()
    for entry in images:
        if entry["id"] in seen:
            raise ValueError(f"duplicate image id {entry['id']!r}")
        seen.add(entry["id"])
    return images


def _map_over(executor_width: int, fn, items):
    if executor_width > 1:
        with ThreadPoolExecutor(max_workers=executor_width) as pool:
            return dict(zip(items, pool.map(lambda item: fn(item), items)))
    return {item: fn(item) for item in items}


class PipelineRun:
    """One orchestrated run over an input manifest."""

    def __init__(self, cfg: PipelineConfig):
        if not cfg.manifest:
            raise ValueError("pipeline config needs a manifest path")
        self.cfg = cfg
        self.out = Path(cfg.out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.images = read_manifest(cfg.manifest)
        self.ids = [entry["id"] for entry in self.images]
        base = Path(cfg.manifest).parent
        self.paths = {
            e["id"]: (base / e["path"] if not Path(e["path"]).is_absolute() else Path(e["path"]))
            for e in self.images
        }
        self.input_hashes = {
            image_id: _sha(Path(p).read_bytes()) for image_id, p in self.paths.items()
        }
        self._stage_keys_file = self.out / "stage_keys.json"
        self._stage_keys = (
            json.loads(self._stage_keys_file.read_text())
            if self._stage_keys_file.exists()
            else {}
        )
        self.executed: list[str] = []  # stages actually recomputed this run

    # -- caching helpers -------------------------------------------------------

    def _inputs_key(self) -> str:
        return _sha(json.dumps([self.input_hashes[i] for i in self.ids]))

    def _stage_key(self, stage: str) -> str:
        cfg = self.cfg
        parts = [self._inputs_key(), str(cfg.seed)]
        if stage == "preprocess":
            parts.append(config_fingerprint(cfg.preprocess))
        elif stage == "keypoints":
            parts += [self._stage_key("preprocess"), config_fingerprint(cfg.gp)]
        elif stage == "distances":
            parts += [self._stage_key("keypoints"), config_fingerprint(cfg.matching)]
        elif stage == "cluster":
            parts += [self._stage_key("distances"), config_fingerprint(cfg.clustering)]
        return _sha(*parts)

    def _fresh(self, stage: str, artifacts: list[Path]) -> bool:
        key = self._stage_key(stage)
        return self._stage_keys.get(stage) == key and all(a.exists() for a in artifacts)

    def _mark(self, stage: str) -> None:
        self._stage_keys[stage] = self._stage_key(stage)
        self._stage_keys_file.write_text(json.dumps(self._stage_keys, indent=1))
        self.executed.append(stage)

    # -- stages ----------------------------------------------------------------

    def stage_preprocess(self) -> None:
        pre_dir = self.out / "preprocessed"
        weight_dir = self.out / "weights"
        artifacts = [pre_dir / f"{i}.dcw" for i in self.ids]
        if self._fresh("preprocess", artifacts):
            return
        pre_dir.mkdir(exist_ok=True)
        weight_dir.mkdir(exist_ok=True)
        cfg = self.cfg.preprocess

        def work(image_id: str):
            raw = Path(self.paths[image_id]).read_bytes()
            img = load_and_normalize(raw, cfg.target_height)
            processed = preprocess(img, cfg)
            relief = laplacian_relief(processed)
            center, radius = default_mask(relief.values.shape, cfg.mask_radius_frac)
            masked = apply_circular_mask(relief, center, radius)
            formats.save_grid(processed.values, pre_dir / f"{image_id}.dcw")
            formats.save_png16(processed.values, pre_dir / f"{image_id}.png")
            formats.save_grid(masked.values, weight_dir / f"{image_id}.dcw")
            formats.save_png16(masked.values, weight_dir / f"{image_id}.png")
            return True

        _map_over(self.cfg.parallelism, work, self.ids)
        self._mark("preprocess")

    def stage_keypoints(self) -> None:
        self.stage_preprocess()
        kp_dir = self.out / "keypoints"
        artifacts = [kp_dir / f"{i}.csv" for i in self.ids]
        if self._fresh("keypoints", artifacts):
            return
        kp_dir.mkdir(exist_ok=True)
        cfg = self.cfg

        def work(image_id: str):
            weights = formats.load_grid(self.out / "weights" / f"{image_id}.dcw")
            center, radius = default_mask(weights.shape, cfg.preprocess.mask_radius_frac)
            from .imaging import WeightField

            field = WeightField(values=weights, mask_center=center, mask_radius=radius)
            kcfg = cfg.gp.kernel_config(weights.shape[0])
            kps = select_keypoints(field, kcfg, image_id=image_id)
            formats.save_keypoints_csv(kps, kp_dir / f"{image_id}.csv")
            return len(kps)

        _map_over(cfg.parallelism, work, self.ids)
        self._mark("keypoints")

    def stage_distances(self) -> DistanceMatrix:
        self.stage_keypoints()
        dist_file = self.out / "distances.dcd"
        if self._fresh("distances", [dist_file]):
            return formats.load_distances(dist_file)
        mcfg: MatchingConfig = self.cfg.matching

        def prep(image_id: str):
            img = GrayImage.from_array(
                np.clip(formats.load_grid(self.out / "preprocessed" / f"{image_id}.dcw"), 0, 1)
            )
            kps = formats.load_keypoints_csv(self.out / "keypoints" / f"{image_id}.csv")
            desc = compute_descriptors(img, kps, mcfg.patch_radius)
            return kps, desc, img.height

        per_image = _map_over(self.cfg.parallelism, prep, self.ids)
        pairs = [(i, j) for i in range(len(self.ids)) for j in range(i + 1, len(self.ids))]

        def score(pair):
            i, j = pair
            a = per_image[self.ids[i]]
            b = per_image[self.ids[j]]
            return score_pair(a[0], a[1], a[2], b[0], b[1], b[2], mcfg)

        scores = _map_over(self.cfg.parallelism, score, pairs)
        dm = assemble_distance_matrix(self.ids, scores)
        formats.save_distances(dm, dist_file)
        (self.out / "distances.csv").write_text(formats.distances_to_csv(dm))
        self._mark("distances")
        return dm

    def stage_cluster(self) -> Partition:
        dm = self.stage_distances()
        part_file = self.out / "partition.csv"
        if self._fresh("cluster", [part_file, self.out / "coclustering.dcq"]):
            _, labels = formats.load_partition_csv(part_file)
            return Partition(labels=labels)
        ccfg = self.cfg.clustering
        prior = PriorConfig(ccfg.size_mean, ccfg.size_variance, ccfg.max_cluster_size)
        n = dm.n
        k0 = ccfg.init_k or int(np.clip(round(n / ccfg.size_mean), 1, n))
        init = enforce_size_cap(kmedoids_init(dm, k0), prior.max_cluster_size)
        like = estimate_likelihood_params(dm, init)
        q, summary = run_mcmc(
            dm,
            prior,
            like,
            iters=ccfg.iters,
            burn_in=ccfg.effective_burn_in,
            thin=ccfg.thin,
            seed=self.cfg.seed,
            init=init,
        )
        part = salso_point_estimate(q, n_restarts=ccfg.salso_restarts, seed=self.cfg.seed)
        formats.save_coclustering(q.q, q.n, self.out / "coclustering.dcq")
        formats.save_partition_csv(self.ids, part.canonical(), part_file)
        with open(self.out / "chain.jsonl", "w") as fh:
            rates = summary.acceptance_rates()
            stride = max(len(summary.k_trajectory) // 1000, 1)
            for it in range(0, len(summary.k_trajectory), stride):
                fh.write(
                    json.dumps(
                        {
                            "iteration": it,
                            "k": int(summary.k_trajectory[it]),
                            "acceptance": {m: round(r, 4) for m, r in rates.items()},
                        }
                    )
                    + "\n"
                )
            fh.write(
                json.dumps(
                    {
                        "retained": summary.n_retained,
                        "max_cluster_size": summary.max_cluster_size_seen,
                        "log_posterior_last": (
                            float(summary.log_posterior_trace[-1])
                            if len(summary.log_posterior_trace)
                            else None
                        ),
                    }
                )
                + "\n"
            )
        self._mark("cluster")
        return part

    def write_manifest(self) -> dict:
        manifest = {
            "images": self.ids,
            "stage_keys": dict(sorted(self._stage_keys.items())),
            "artifacts": sorted(
                str(p.relative_to(self.out))
                for p in self.out.rglob("*")
                if p.is_file() and p.name != "manifest.json"
            ),
        }
        (self.out / "manifest.json").write_text(json.dumps(manifest, indent=1))
        return manifest


def run_pipeline(cfg: PipelineConfig, upto: str = "cluster") -> dict:
    """Execute stages up to ``upto`` and return the artifact manifest."""
    if upto not in STAGES:
        raise ValueError(f"unknown stage {upto!r}")
    run = PipelineRun(cfg)
    if upto == "preprocess":
        run.stage_preprocess()
    elif upto == "keypoints":
        run.stage_keypoints()
    elif upto == "distances":
        run.stage_distances()
    else:
        run.stage_cluster()
    manifest = run.write_manifest()
    manifest["executed"] = run.executed
    return manifest


def load_truth_csv(path: str | Path) -> dict[str, str]:
    """labels.csv with at least image_id and die_id columns."""
    truth = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            truth[row["image_id"]] = row["die_id"]
    return truth


def evaluate_run(out_dir: str | Path, truth_csv: str | Path) -> dict:
    """Compare the run's partition against planted labels."""
    ids, labels = formats.load_partition_csv(Path(out_dir) / "partition.csv")
    truth_map = load_truth_csv(truth_csv)
    missing = [i for i in ids if i not in truth_map]
    if missing:
        raise ValueError(f"truth labels missing for {missing[:5]}")
    truth = [truth_map[i] for i in ids]
    reports = per_class_report(truth, labels)
    sens, fdr = weighted_summary(reports)
    from .metrics import ari as ari_fn

    result = {
        "n_images": len(ids),
        "n_classes": len(set(truth)),
        "n_clusters": int(len(np.unique(labels))),
        "nmi": nmi(truth, labels),
        "ari": ari_fn(truth, labels),
        "sensitivity": sens,
        "fdr": fdr,
        "per_class": [asdict(r) | {"class_id": str(r.class_id)} for r in reports],
    }
    return result


def sweep_clustering(
    dm: DistanceMatrix,
    truth: list | None,
    size_means: list[float],
    variance_factors: list[float],
    iters: int = 500_000,
    thin: int = 10,
    max_cluster_size: int = 25,
    seed: int = 0,
    salso_restarts: int = 16,
) -> list[dict]:
    """Clustering hyper-parameter grid over (size mean, variance factor).

    Each cell runs the full chain on the same distance matrix and reports the
    estimated cluster count plus NMI / sensitivity / FDR against the truth
    labels when provided.
    """
    n = dm.n
    cells = []
    for mu in size_means:
        for factor in variance_factors:
            nu = factor * mu
            prior = PriorConfig(mu, nu, max_cluster_size)
            init = enforce_size_cap(kmedoids_init(dm, int(np.clip(round(n / mu), 1, n))), max_cluster_size)
            like = estimate_likelihood_params(dm, init)
            q, _ = run_mcmc(
                dm, prior, like, iters=iters, burn_in=iters // 2, thin=thin, seed=seed, init=init
            )
            part = salso_point_estimate(q, n_restarts=salso_restarts, seed=seed)
            cell = {
                "size_mean": mu,
                "size_variance": nu,
                "variance_factor": factor,
                "n_clusters": part.n_clusters,
            }
            if truth is not None:
                reports = per_class_report(truth, part.labels)
                sens, fdr = weighted_summary(reports)
                cell |= {"nmi": nmi(truth, part.labels), "sensitivity": sens, "fdr": fdr}
            cells.append(cell)
    return cells
