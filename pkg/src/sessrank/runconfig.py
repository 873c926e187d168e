"""Run configuration: every tunable of every stage, as flat ``key = value`` pairs.

Precedence is command-line flag > config file > built-in default. Unknown
keys are rejected. ``docs/config.md`` lists every key with its default.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Mapping

from . import flatcfg
from .corpus import GEN_KEYS, GenConfig
from .errors import ConfigError
from .models import ModelConfig
from .preprocess import PipelineConfig


@dataclass
class RunConfig:
    seed: int = 2020
    # paths, relative to the pipeline output directory
    corpus_dir: str = "corpus"
    stats_dir: str = "stats"
    dataset: str = "dataset.csv"
    model: str = "model.json"
    report_dir: str = "report"
    # aggregation
    shard_count: int = 4
    # preprocessing
    nzv_freq_ratio: float = 19.0
    nzv_unique_pct: float = 10.0
    corr_cutoff: float = 0.9
    pca_variance: float = 0.95
    use_pca: bool = True
    # models
    knn_k: int = 5
    mlr_l2: float = 1e-4
    mlr_tol: float = 1e-6
    mlr_max_iter: int = 10_000
    # evaluation
    cv_folds: int = 5
    cv_repeats: int = 3
    eval_folds: int = 5
    per_engine_total: int = 200
    gen: GenConfig = field(default_factory=GenConfig)

    def __post_init__(self):
        self.gen.seed = self.seed

    @classmethod
    def run_keys(cls) -> list[str]:
        return [f.name for f in fields(cls) if f.name != "gen"]

    def apply(self, values: Mapping[str, str]) -> "RunConfig":
        run_keys = set(self.run_keys())
        gen_values = {}
        for key, text in values.items():
            if key in run_keys:
                setattr(self, key, flatcfg.coerce_like(key, text, getattr(self, key)))
            elif key in GEN_KEYS or key.startswith(("quota.", "engine_skill.")):
                gen_values[key] = text
            else:
                raise ConfigError(f"unknown configuration key {key!r}")
        if gen_values:
            self.gen = GenConfig.from_flat(gen_values, base=self.gen)
        self.gen.seed = self.seed
        self.validate()
        return self

    def validate(self) -> None:
        if self.shard_count < 1:
            raise ConfigError("shard_count must be >= 1")
        if self.cv_folds < 2 or self.eval_folds < 2:
            raise ConfigError("cv_folds and eval_folds must be >= 2")
        if self.cv_repeats < 0:
            raise ConfigError("cv_repeats must be >= 0 (0 skips cross-validation)")
        if self.per_engine_total < 1:
            raise ConfigError("per_engine_total must be >= 1")
        self.gen.validate()

    def to_flat(self) -> dict[str, object]:
        out: dict[str, object] = {k: getattr(self, k) for k in self.run_keys()}
        out.update((k, v) for k, v in self.gen.to_flat().items() if k != "seed")
        return out

    @property
    def pipeline_config(self) -> PipelineConfig:
        return PipelineConfig(
            freq_ratio_cutoff=self.nzv_freq_ratio,
            unique_pct_cutoff=self.nzv_unique_pct,
            corr_cutoff=self.corr_cutoff,
            variance_retained=self.pca_variance,
            use_pca=self.use_pca,
        )

    @property
    def model_config(self) -> ModelConfig:
        return ModelConfig(
            knn_k=self.knn_k, mlr_l2=self.mlr_l2, mlr_tol=self.mlr_tol, mlr_max_iter=self.mlr_max_iter
        )

    def copy(self) -> "RunConfig":
        return copy.deepcopy(self)


def load_config(path: str | Path | None = None, overrides: Mapping[str, str] | None = None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        cfg.apply(flatcfg.read_flat(path))
    if overrides:
        cfg.apply(overrides)
    cfg.validate()
    return cfg
