"""Dataclass configs for every stage plus JSON loading.

One JSON file configures the whole run; every field can be overridden from
the command line. Keys: "preprocess", "gp", "matching", "clustering",
"synth", plus top-level "seed", "parallelism", "out_dir", "manifest".
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .imaging import PreprocessConfig
from .keypoints import KernelConfig
from .matching import MatchingConfig
from .synth import SyntheticBenchmarkSpec


@dataclass
class GpConfig:
    """Keypoint-stage knobs; the lengthscale defaults to a height fraction."""

    lengthscale: float | None = None  # pixels; overrides lengthscale_frac
    lengthscale_frac: float = 0.02
    truncation_factor: float = 4.0
    n_keypoints: int = 300

    def kernel_config(self, height: int) -> KernelConfig:
        ell = self.lengthscale if self.lengthscale else self.lengthscale_frac * height
        return KernelConfig(
            lengthscale=ell,
            truncation_radius=self.truncation_factor * ell,
            n_keypoints=self.n_keypoints,
        )


@dataclass
class ClusteringConfig:
    size_mean: float = 5.0
    size_variance: float = 15.0
    max_cluster_size: int = 25
    iters: int = 750_000
    burn_in: int | None = None  # default: half of iters
    thin: int = 10
    salso_restarts: int = 16
    init_k: int | None = None  # default: round(N / size_mean)

    @property
    def effective_burn_in(self) -> int:
        return self.burn_in if self.burn_in is not None else self.iters // 2


@dataclass
class PipelineConfig:
    manifest: str = ""
    out_dir: str = "out"
    seed: int = 0
    parallelism: int = 1
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    gp: GpConfig = field(default_factory=GpConfig)
    matching: MatchingConfig = field(default_factory=MatchingConfig)
    clustering: ClusteringConfig = field(default_factory=ClusteringConfig)
    synth: SyntheticBenchmarkSpec = field(default_factory=SyntheticBenchmarkSpec)


_SECTION_TYPES = {
    "preprocess": PreprocessConfig,
    "gp": GpConfig,
    "matching": MatchingConfig,
    "clustering": ClusteringConfig,
    "synth": SyntheticBenchmarkSpec,
}


def _build_section(cls, data: dict):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = dict(data)
    for f in dataclasses.fields(cls):
        if f.name in kwargs and isinstance(kwargs[f.name], list):
            kwargs[f.name] = tuple(kwargs[f.name])
    return cls(**kwargs)


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> PipelineConfig:
    """Build a PipelineConfig from a JSON file plus flat override pairs.

    Overrides use dotted keys ("gp.n_keypoints", "seed"). JSON sections and
    overrides both validate against the dataclass fields.
    """
    data: dict = {}
    if path is not None:
        data = json.loads(Path(path).read_text())
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if "." in key:
            section, name = key.split(".", 1)
            data.setdefault(section, {})[name] = value
        else:
            data[key] = value

    cfg_kwargs: dict = {}
    for key, value in data.items():
        if key in _SECTION_TYPES:
            cfg_kwargs[key] = _build_section(_SECTION_TYPES[key], value)
        elif key in ("manifest", "out_dir", "seed", "parallelism"):
            cfg_kwargs[key] = value
        else:
            raise ValueError(f"unknown config key: {key}")
    return PipelineConfig(**cfg_kwargs)


def config_fingerprint(obj) -> str:
    """Stable JSON of a dataclass for content-hash cache keys."""
    return json.dumps(dataclasses.asdict(obj), sort_keys=True)
