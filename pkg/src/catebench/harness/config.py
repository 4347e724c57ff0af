"""Experiment configuration: YAML files mirroring :class:`ExperimentConfig`.

A config names one or more *settings* (a DGP plus its covariates, split
and knobs) and a list of estimators run on every draw of every setting::

    name: ihdp
    master_seed: 2021
    preset: desk
    repetitions: 1
    settings:
      - name: ihdp-original
        dgp: ihdp
        n_draws: 20
        covariates: {profile: ihdp, n: 747}
        split: {kind: holdout, fraction: 0.1, shuffle: true}
        params: {variant: original}
    estimators: [trf, cf, {name: tnet, repetitions: 10, overrides: {max_epochs: 100}}]

Unknown keys anywhere raise :class:`ConfigError`.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import yaml

from ..data import (CovariateMatrix, ExplicitIndices, FixedPrefix, HoldoutFraction,
                    TrainTestSplit, acic_like_profile, ihdp_like_profile, load_covariates,
                    make_split, synthesize_covariates)
from ..dgp.ihdp import IhdpConfig, IhdpVariant
from ..dgp.knobbed import ACIC_TRAIN_FRACTION, PRESETS, KnobConfig
from ..strategies import NAMED, EstimatorSpec, named_estimator


class ConfigError(ValueError):
    pass


PROFILES = {"ihdp": ihdp_like_profile, "acic": acic_like_profile}
DGPS = ("ihdp", "knobbed")
INPUTS = ("raw", "transformed")


def _check_keys(section: str, got: dict, allowed) -> None:
    if not isinstance(got, dict):
        raise ConfigError(f"{section}: expected a mapping, got {type(got).__name__}")
    extra = sorted(set(got) - set(allowed))
    if extra:
        raise ConfigError(f"{section}: unknown keys {extra}; allowed {sorted(allowed)}")


@dataclass(frozen=True)
class CovariateSource:
    """Synthetic profile (``profile`` + ``n``) or a file on disk (``path``)."""

    profile: str | None = None
    n: int | None = None
    path: str | None = None
    schema: str | None = None

    def __post_init__(self):
        if (self.profile is None) == (self.path is None):
            raise ConfigError("covariates: give exactly one of 'profile' or 'path'")
        if self.profile is not None:
            if self.profile not in PROFILES:
                raise ConfigError(f"covariates: unknown profile {self.profile!r}; known {sorted(PROFILES)}")
            if self.n is None or self.n < 1:
                raise ConfigError("covariates: a synthetic profile needs n >= 1")

    def load(self, seed: int, base_dir: Path | None = None) -> CovariateMatrix:
        if self.profile is not None:
            return synthesize_covariates(self.n, PROFILES[self.profile](), seed)
        path = Path(self.path)
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        schema = self.schema
        if schema is not None and base_dir is not None and not Path(schema).is_absolute():
            schema = base_dir / schema
        return load_covariates(path, schema)


@dataclass(frozen=True)
class SplitSpec:
    kind: str = "holdout"
    fraction: float = 0.1
    shuffle: bool = True
    n_train: int | None = None
    train: tuple[int, ...] | None = None
    test: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("holdout", "prefix", "explicit"):
            raise ConfigError(f"split: unknown kind {self.kind!r}")
        if self.kind == "explicit" and (self.train is None or self.test is None):
            raise ConfigError("split: explicit splits need 'train' and 'test'")

    def build(self, n: int, seed: int) -> TrainTestSplit:
        if self.kind == "holdout":
            return make_split(n, HoldoutFraction(self.fraction), seed=seed if self.shuffle else None)
        if self.kind == "prefix":
            n_train = self.n_train if self.n_train is not None else int(round(n * ACIC_TRAIN_FRACTION))
            return make_split(n, FixedPrefix(n_train))
        return make_split(n, ExplicitIndices(tuple(self.train), tuple(self.test)))


@dataclass(frozen=True)
class SettingConfig:
    name: str
    dgp: str
    n_draws: int
    covariates: CovariateSource
    split: SplitSpec
    params: dict = field(default_factory=dict)
    estimator_inputs: str = "raw"
    data_stream: int | None = None

    def __post_init__(self):
        if self.dgp not in DGPS:
            raise ConfigError(f"setting {self.name!r}: unknown dgp {self.dgp!r}; known {DGPS}")
        if self.n_draws < 1:
            raise ConfigError(f"setting {self.name!r}: n_draws must be >= 1")
        if self.estimator_inputs not in INPUTS:
            raise ConfigError(f"setting {self.name!r}: estimator_inputs must be one of {INPUTS}")
        if self.dgp == "ihdp" and self.estimator_inputs == "transformed":
            raise ConfigError(f"setting {self.name!r}: the ihdp dgp has no transformed design")
        self.dgp_config()  # validates params early

    def dgp_config(self) -> IhdpConfig | KnobConfig:
        params = dict(self.params)
        try:
            if self.dgp == "ihdp":
                allowed = {f.name for f in fields(IhdpConfig)}
                _check_keys(f"setting {self.name!r} params", params, allowed)
                if "variant" in params:
                    params["variant"] = IhdpVariant(params["variant"])
                for k in ("coefficient_support", "coefficient_probs"):
                    if k in params:
                        params[k] = tuple(params[k])
                return IhdpConfig(**params)
            preset = params.pop("preset", None)
            allowed = {f.name for f in fields(KnobConfig)}
            _check_keys(f"setting {self.name!r} params", params, allowed)
            if preset is not None:
                if preset not in PRESETS:
                    raise ConfigError(f"setting {self.name!r}: unknown preset {preset!r}; known {sorted(PRESETS)}")
                return replace(PRESETS[preset], **params)
            return KnobConfig(**params)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"setting {self.name!r}: {exc}") from exc


@dataclass(frozen=True)
class EstimatorEntry:
    name: str
    overrides: dict = field(default_factory=dict)
    cross_fit: bool = False
    label: str | None = None
    # overrides the experiment-wide repetition count for this estimator
    repetitions: int | None = None

    def __post_init__(self):
        if self.name not in NAMED:
            raise ConfigError(f"unknown estimator {self.name!r}; known {sorted(NAMED)}")
        if self.repetitions is not None and self.repetitions < 1:
            raise ConfigError(f"estimator {self.display!r}: repetitions must be >= 1")

    @property
    def display(self) -> str:
        return self.label or self.name

    def spec(self, preset: str) -> EstimatorSpec:
        try:
            return named_estimator(self.name, preset, self.overrides, self.cross_fit)
        except TypeError as exc:
            raise ConfigError(f"estimator {self.display!r}: {exc}") from exc


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    settings: tuple[SettingConfig, ...]
    estimators: tuple[EstimatorEntry, ...]
    master_seed: int = 0
    preset: str = "desk"
    repetitions: int = 5
    output_dir: str = "results"

    def __post_init__(self):
        if self.preset not in ("desk", "paper"):
            raise ConfigError(f"preset must be 'desk' or 'paper', got {self.preset!r}")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if not 0 <= self.master_seed < 2 ** 64:
            raise ConfigError("master_seed must lie in [0, 2**64)")
        if not self.settings or not self.estimators:
            raise ConfigError("a config needs at least one setting and one estimator")
        for kind, names in (("setting", [s.name for s in self.settings]),
                            ("estimator", [e.display for e in self.estimators])):
            dupes = sorted({x for x in names if names.count(x) > 1})
            if dupes:
                raise ConfigError(f"duplicate {kind} names {dupes}")
        for e in self.estimators:
            e.spec(self.preset)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def repetitions_of(self, estimator: int) -> int:
        reps = self.estimators[estimator].repetitions
        return self.repetitions if reps is None else reps


def _setting(raw: dict) -> SettingConfig:
    _check_keys("setting", raw, {f.name for f in fields(SettingConfig)})
    raw = dict(raw)
    for key in ("name", "dgp", "n_draws", "covariates"):
        if key not in raw:
            raise ConfigError(f"setting: missing required key {key!r}")
    cov = raw.pop("covariates")
    _check_keys(f"setting {raw['name']!r} covariates", cov, {f.name for f in fields(CovariateSource)})
    split = raw.pop("split", None)
    if split is None:
        split = {"kind": "holdout"} if raw["dgp"] == "ihdp" else {"kind": "prefix"}
    _check_keys(f"setting {raw['name']!r} split", split, {f.name for f in fields(SplitSpec)})
    split = dict(split)
    for k in ("train", "test"):
        if split.get(k) is not None:
            split[k] = tuple(int(i) for i in split[k])
    return SettingConfig(covariates=CovariateSource(**cov), split=SplitSpec(**split),
                         params=dict(raw.pop("params", None) or {}), **raw)


def _estimator(raw) -> EstimatorEntry:
    if isinstance(raw, str):
        return EstimatorEntry(raw)
    _check_keys("estimator", raw, {f.name for f in fields(EstimatorEntry)})
    raw = dict(raw)
    raw["overrides"] = dict(raw.get("overrides") or {})
    for k, v in raw["overrides"].items():
        if isinstance(v, list):
            raw["overrides"][k] = tuple(v)
    return EstimatorEntry(**raw)


def config_from_dict(raw: dict) -> ExperimentConfig:
    _check_keys("config", raw, {f.name for f in fields(ExperimentConfig)})
    raw = dict(raw)
    if "name" not in raw:
        raise ConfigError("config: missing required key 'name'")
    raw["settings"] = tuple(_setting(s) for s in raw.get("settings") or ())
    raw["estimators"] = tuple(_estimator(e) for e in raw.get("estimators") or ())
    return ExperimentConfig(**raw)


def load_config(path: str | Path) -> ExperimentConfig:
    text = Path(path).read_text()
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(raw)


BUILTIN_DIR = Path(__file__).resolve().parent.parent / "configs"


def builtin_config(name: str) -> ExperimentConfig:
    """Load one of the shipped configs (``ihdp``, ``ihdp_additive``, ``acic``, ...)."""
    path = BUILTIN_DIR / f"{name}.yaml"
    if not path.exists():
        known = sorted(p.stem for p in BUILTIN_DIR.glob("*.yaml"))
        raise ConfigError(f"no built-in config {name!r}; known {known}")
    return load_config(path)


def resolve_config(ref: str | Path) -> ExperimentConfig:
    """A path to a YAML file, or the name of a built-in config."""
    path = Path(ref)
    if path.suffix in (".yaml", ".yml") or path.exists():
        return load_config(path)
    return builtin_config(str(ref))
