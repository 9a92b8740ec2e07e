"""Run configuration: typed sections with defaults, JSON round-trip and hashing."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .learners.forest import ForestParams
from .learners.stacking import ForestMember, LassoMember, Member

__all__ = [
    "LearnerConfig",
    "MetaLearnerConfig",
    "TestConfig",
    "RankingConfig",
    "SimbenchConfig",
    "Config",
    "ConfigError",
]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LearnerConfig:
    members: tuple[str, ...] = ("lasso", "cforest")
    cv_folds: int = 10
    forest_ntree: int = 500
    forest_mtry: int | None = None
    forest_alpha_split: float = 0.05
    forest_min_leaf: int = 7

    def __post_init__(self):
        bad = set(self.members) - {"lasso", "cforest"}
        if bad or not self.members:
            raise ConfigError(f"learners.members must be a non-empty subset of lasso, cforest (got {list(self.members)})")
        if self.cv_folds < 2:
            raise ConfigError("learners.cv_folds must be >= 2")

    def forest_params(self) -> ForestParams:
        return ForestParams(
            ntree=self.forest_ntree, mtry=self.forest_mtry,
            alpha_split=self.forest_alpha_split, min_leaf=self.forest_min_leaf,
        )

    def build(self) -> tuple[Member, ...]:
        table = {"lasso": LassoMember(cv_folds=self.cv_folds), "cforest": ForestMember(self.forest_params())}
        return tuple(table[m] for m in self.members)


@dataclass(frozen=True)
class MetaLearnerConfig:
    folds: int = 5
    propensity: str = "estimated"
    clip_lo: float = 0.025
    clip_hi: float = 0.975

    def __post_init__(self):
        if self.propensity not in ("estimated", "fixed_randomization"):
            raise ConfigError(f"metalearner.propensity: unknown mode {self.propensity!r}")
        if not 0 < self.clip_lo < self.clip_hi < 1:
            raise ConfigError("metalearner clip bounds must satisfy 0 < lo < hi < 1")


@dataclass(frozen=True)
class TestConfig:
    __test__ = False  # keep pytest from collecting it

    statistic: str = "max_type"
    method: str = "permutation_mc"
    B: int = 9999
    alpha: float = 0.05

    def __post_init__(self):
        if self.statistic not in ("max_type", "quadratic"):
            raise ConfigError(f"test.statistic: unknown kind {self.statistic!r}")
        if self.method not in ("permutation_mc", "asymptotic"):
            raise ConfigError(f"test.method: unknown method {self.method!r}")


@dataclass(frozen=True)
class RankingConfig:
    ntree: int = 500
    mtry: int | None = None
    alpha_split: float = 1.0
    min_leaf: int = 7
    n_perm_repeats: int = 5
    top_k: int = 5

    def forest_params(self) -> ForestParams:
        return ForestParams(ntree=self.ntree, mtry=self.mtry, alpha_split=self.alpha_split, min_leaf=self.min_leaf)


@dataclass(frozen=True)
class SimbenchConfig:
    scenarios: tuple[int, ...] = (1, 2, 3, 4)
    multipliers: tuple[float, ...] = (0.0, 0.5, 1.0, 1.5, 2.0)
    replicates: int = 500
    n: int = 500
    methods: tuple[str, ...] = ("dr_learner", "univariate", "multivariate")
    cate_variants: tuple[str, ...] = ("oob",)
    alpha: float = 0.10
    target_r2: float = 0.32
    calib_n: int = 100_000
    calib_reps: int = 20_000
    fast_replicates: int = 100
    fast_n: int = 200

    def __post_init__(self):
        if set(self.scenarios) - {1, 2, 3, 4}:
            raise ConfigError("simbench.scenarios must be within 1..4")
        if set(self.methods) - {"dr_learner", "univariate", "multivariate"}:
            raise ConfigError("simbench.methods must be within dr_learner, univariate, multivariate")
        if set(self.cate_variants) - {"oob", "ipw", "t"}:
            raise ConfigError("simbench.cate_variants must be within oob, ipw, t")

    def fast(self) -> "SimbenchConfig":
        return dataclasses.replace(self, replicates=self.fast_replicates, n=self.fast_n)


_SECTIONS = {
    "learners": LearnerConfig,
    "metalearner": MetaLearnerConfig,
    "test": TestConfig,
    "ranking": RankingConfig,
    "simbench": SimbenchConfig,
}


def _section(cls, doc: dict | None, name: str):
    doc = dict(doc or {})
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(doc) - set(fields)
    if unknown:
        raise ConfigError(f"unknown keys in section {name!r}: {sorted(unknown)}")
    for key, value in doc.items():
        if isinstance(value, list):
            doc[key] = tuple(value)
    try:
        return cls(**doc)
    except TypeError as exc:
        raise ConfigError(f"section {name!r}: {exc}") from exc


@dataclass(frozen=True)
class Config:
    learners: LearnerConfig = field(default_factory=LearnerConfig)
    metalearner: MetaLearnerConfig = field(default_factory=MetaLearnerConfig)
    test: TestConfig = field(default_factory=TestConfig)
    ranking: RankingConfig = field(default_factory=RankingConfig)
    simbench: SimbenchConfig = field(default_factory=SimbenchConfig)

    @classmethod
    def from_dict(cls, doc: dict[str, Any] | None) -> "Config":
        doc = doc or {}
        unknown = set(doc) - set(_SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        return cls(**{name: _section(kind, doc.get(name), name) for name, kind in _SECTIONS.items()})

    @classmethod
    def from_json(cls, path: str | Path | None) -> "Config":
        if path is None:
            return cls()
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path}: invalid JSON ({exc})") from exc

    def to_dict(self) -> dict[str, Any]:
        return json.loads(json.dumps(dataclasses.asdict(self)))

    def replace(self, **sections) -> "Config":
        return dataclasses.replace(self, **sections)

    def hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()
