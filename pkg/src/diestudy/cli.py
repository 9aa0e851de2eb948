"""Command-line entry points for the die-analysis pipeline."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import click
import numpy as np

from . import formats
from .config import load_config
from .pipeline import evaluate_run, load_truth_csv, run_pipeline, sweep_clustering
from .synth import SyntheticBenchmarkSpec, generate_synthetic_benchmark


def _cfg_from(ctx_params: dict):
    overrides = {
        key: ctx_params[flag]
        for flag, key in (
            ("manifest", "manifest"),
            ("out_dir", "out_dir"),
            ("seed", "seed"),
            ("parallelism", "parallelism"),
        )
        if ctx_params.get(flag) is not None
    }
    for item in ctx_params.get("set_", ()):
        key, _, value = item.partition("=")
        if not _:
            raise click.UsageError(f"--set expects key=value, got {item!r}")
        overrides[key] = json.loads(value)
    return load_config(ctx_params.get("config"), overrides)


def _common_options(fn):
    fn = click.option("--config", type=click.Path(exists=True), help="global JSON config")(fn)
    fn = click.option("--manifest", type=click.Path(exists=True), help="input image manifest")(fn)
    fn = click.option("--out-dir", type=click.Path(), help="artifact directory")(fn)
    fn = click.option("--seed", type=int, default=None, help="global RNG seed")(fn)
    fn = click.option("--parallelism", type=int, default=None, help="worker threads")(fn)
    fn = click.option(
        "--set",
        "set_",
        multiple=True,
        help="dotted config override, e.g. --set gp.n_keypoints=190",
    )(fn)
    return fn


@click.group()
def main():
    """Cluster coin-face images by the die that struck them."""


def _stage_command(name: str, doc: str):
    @main.command(name=name, help=doc)
    @_common_options
    def cmd(**params):
        cfg = _cfg_from(params)
        manifest = run_pipeline(cfg, upto=name if name != "cluster" else "cluster")
        skipped = [s for s in ("preprocess", "keypoints", "distances", "cluster") if s not in manifest["executed"]]
        click.echo(f"stage keys: {json.dumps(manifest['stage_keys'], indent=1)}")
        click.echo(f"executed: {manifest['executed'] or 'nothing (all cached)'}")
        if skipped:
            click.echo(f"cached: {skipped}")

    return cmd


_stage_command("preprocess", "Normalize images and extract relief-edge weight fields.")
_stage_command("keypoints", "Select uncertainty-driven keypoints per image.")
_stage_command("distances", "Compute the pairwise dissimilarity matrix.")
_stage_command("cluster", "Run the Bayesian microclustering and point estimate.")


@main.command()
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--truth", required=True, type=click.Path(exists=True), help="labels CSV")
def evaluate(out_dir, truth):
    """Score a finished run against planted labels."""
    result = evaluate_run(out_dir, truth)
    out_path = Path(out_dir) / "metrics.json"
    out_path.write_text(json.dumps(result, indent=1))
    click.echo(
        f"NMI={result['nmi']:.4f} ARI={result['ari']:.4f} "
        f"sens={result['sensitivity']:.4f} FDR={result['fdr']:.4f} "
        f"K={result['n_clusters']} (true {result['n_classes']})"
    )
    click.echo(f"wrote {out_path}")


@main.command()
@click.option("--config", type=click.Path(exists=True), help="global JSON config")
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--seed", type=int, default=0)
@click.option("--set", "set_", multiple=True, help="dotted override, e.g. --set synth.n_dies=10")
def synth(config, out_dir, seed, set_):
    """Generate a synthetic benchmark with known die labels."""
    cfg = load_config(config, {k: json.loads(v) for k, _, v in (s.partition("=") for s in set_)})
    spec: SyntheticBenchmarkSpec = cfg.synth
    images, records = generate_synthetic_benchmark(spec, seed=seed)
    out = Path(out_dir)
    img_dir = out / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    from PIL import Image

    manifest = {"images": []}
    for image_id, img in images.items():
        arr = (img.values * 255.0).round().astype(np.uint8)
        Image.fromarray(arr, mode="L").save(img_dir / f"{image_id}.png")
        manifest["images"].append({"id": image_id, "path": f"images/{image_id}.png"})
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1))
    with open(out / "labels.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "die_id", "coin_id", "grade", "is_duplicate"])
        for rec in records:
            writer.writerow([rec.image_id, rec.die_id, rec.coin_id, rec.grade, int(rec.is_duplicate)])
    click.echo(f"wrote {len(images)} images of {spec.n_dies} dies to {out}")


@main.command()
@click.option("--distances", "distances_path", required=True, type=click.Path(exists=True))
@click.option("--truth", type=click.Path(exists=True), help="labels CSV for scoring")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--size-means", default="4,5,6,7", show_default=True)
@click.option("--variance-factors", default="2.4,1.5", show_default=True)
@click.option("--iters", default=500_000, show_default=True)
@click.option("--max-cluster-size", default=25, show_default=True)
@click.option("--seed", type=int, default=0)
def sweep(distances_path, truth, out_path, size_means, variance_factors, iters, max_cluster_size, seed):
    """Grid over clustering size-prior settings on a fixed distance matrix."""
    dm = formats.load_distances(distances_path)
    truth_list = None
    if truth:
        truth_map = load_truth_csv(truth)
        truth_list = [truth_map[i] for i in dm.ids]
    cells = sweep_clustering(
        dm,
        truth_list,
        size_means=[float(x) for x in size_means.split(",")],
        variance_factors=[float(x) for x in variance_factors.split(",")],
        iters=iters,
        max_cluster_size=max_cluster_size,
        seed=seed,
    )
    Path(out_path).write_text(json.dumps(cells, indent=1))
    for cell in cells:
        line = f"mu={cell['size_mean']:<4} nu={cell['size_variance']:<6} K={cell['n_clusters']}"
        if "nmi" in cell:
            line += f" NMI={cell['nmi']:.4f} sens={cell['sensitivity']:.4f} FDR={cell['fdr']:.4f}"
        click.echo(line)
    click.echo(f"wrote {out_path}")


@main.command("review-serve")
@click.option("--partition", "partition_path", required=True, type=click.Path(exists=True))
@click.option("--distances", "distances_path", type=click.Path(exists=True))
@click.option("--images", "image_dir", type=click.Path(exists=True), help="directory of PNG/JPEG files")
@click.option("--grades", "grades_csv", type=click.Path(exists=True), help="CSV with image_id,grade")
@click.option("--static", "static_dir", type=click.Path(exists=True), help="built UI to serve at /")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8077, show_default=True)
def review_serve(partition_path, distances_path, image_dir, grades_csv, static_dir, host, port):
    """Serve the verification-loop API (and optionally the browser UI)."""
    import uvicorn

    from .clustering import Partition
    from .review import ReviewSession
    from .service import create_app

    ids, labels = formats.load_partition_csv(partition_path)
    dm = formats.load_distances(distances_path) if distances_path else None
    if dm is not None and dm.ids != ids:
        raise click.UsageError("partition and distance matrix list different images")
    grades = {}
    if grades_csv:
        with open(grades_csv, newline="") as fh:
            for row in csv.DictReader(fh):
                if "grade" in row:
                    grades[row["image_id"]] = row["grade"]
    session = ReviewSession(ids=ids, base=Partition(labels=labels), distances=dm, grades=grades)
    app = create_app(session, image_dir=image_dir, static_dir=static_dir)
    click.echo(f"review service on http://{host}:{port}  (api under /api/v1)")
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
