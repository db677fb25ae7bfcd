"""JSON job configuration shared by every CLI command."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .corpus import SyntheticLangSpec
from .model import ModelConfig, preset
from .tokenizer import NormalizerConfig
from .training import TrainPlan

STAGES = ("teachers", "hl", "hl_balanced", "student")


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SyntheticLanguage(_Strict):
    name: str
    chars: int = Field(gt=0)
    vocab_size: int = Field(default=300, gt=0)
    zipf_exponent: float = Field(default=1.1, gt=0.0)
    chain_weight: float = Field(default=0.85, ge=0.0, le=1.0)
    successors: int = Field(default=4, gt=0)
    bigram_seed: int = 0
    script_offset: int = 0x61
    overlap: float = 0.0
    reference: Optional[str] = None
    tag_arity: int = Field(default=4, gt=0)
    alphabet_size: int = Field(default=16, gt=1)
    min_words: int = Field(default=6, gt=0)
    max_words: int = Field(default=14, gt=0)

    def spec(self) -> SyntheticLangSpec:
        d = self.model_dump(exclude={"chars"})
        return SyntheticLangSpec(**d)


class SyntheticSection(_Strict):
    languages: list[SyntheticLanguage]
    tagged_sentences: int = Field(default=200, ge=0)
    # characters of independent held-out text per language; 0 carves the test set out of the corpus
    test_chars: int = Field(default=0, ge=0)


class TokenizerSection(_Strict):
    target_size: int = Field(default=8192, gt=0)
    lowercase: bool = True
    strip_accents: dict[str, bool] = Field(default_factory=dict)


class ModelSection(_Strict):
    preset: str = "desk"
    overrides: dict[str, float | int] = Field(default_factory=dict)


class PlanFields(_Strict):
    epochs: Optional[int] = Field(default=None, gt=0)
    batch_size: Optional[int] = Field(default=None, gt=0)
    base_lr: Optional[float] = Field(default=None, gt=0)
    patience: Optional[int] = Field(default=None, ge=0)
    alpha: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    temperature: Optional[float] = Field(default=None, gt=0)
    mask_rate: Optional[float] = Field(default=None, gt=0.0, le=1.0)
    max_len: Optional[int] = Field(default=None, gt=2)
    mono_distill_lr_factor: Optional[float] = Field(default=None, gt=0)

    def values(self) -> dict:
        return {k: v for k, v in self.model_dump().items() if v is not None}


class TrainSection(PlanFields):
    """Shared plan fields plus optional per-stage overrides."""
    stages: dict[str, PlanFields] = Field(default_factory=dict)

    @field_validator("stages")
    @classmethod
    def _known_stages(cls, v):
        unknown = set(v) - set(STAGES)
        if unknown:
            raise ValueError(f"unknown stage(s) {sorted(unknown)}; expected {list(STAGES)}")
        return v


class ProbeSection(_Strict):
    enabled: bool = True
    runs: int = Field(default=5, gt=0)
    epochs: int = Field(default=20, gt=0)
    lr: float = Field(default=1e-3, gt=0)
    batch_size: int = Field(default=32, gt=0)
    test_fraction: float = Field(default=0.2, gt=0.0, lt=1.0)
    # task -> language -> CoNLL path; synthetic jobs default to one "tags" task
    tasks: dict[str, dict[str, str]] = Field(default_factory=dict)


class MetricsSection(_Strict):
    eval_seed: int = 1234
    mask_rate: float = Field(default=0.15, gt=0.0, le=1.0)


class SplitSection(_Strict):
    dev_fraction: float = Field(default=0.05, ge=0.0, lt=1.0)
    test_fraction: float = Field(default=0.05, gt=0.0, lt=1.0)


class JobConfig(_Strict):
    seed: int = 0
    languages: list[str]
    groups: dict[str, list[str]] = Field(default_factory=dict)
    corpora: dict[str, str] = Field(default_factory=dict)
    test_corpora: dict[str, str] = Field(default_factory=dict)
    synthetic: Optional[SyntheticSection] = None
    tokenizer: TokenizerSection = Field(default_factory=TokenizerSection)
    model: ModelSection = ModelSection()
    train: TrainSection = TrainSection()
    split: SplitSection = SplitSection()
    probe: ProbeSection = ProbeSection()
    metrics: MetricsSection = MetricsSection()
    # directory that relative input paths are resolved against
    base_dir: str = "."

    @model_validator(mode="after")
    def _consistent(self):
        langs = self.languages
        if not langs:
            raise ValueError("languages must not be empty")
        if len(set(langs)) != len(langs):
            raise ValueError(f"duplicate languages in {langs}")
        if bool(self.corpora) == (self.synthetic is not None):
            raise ValueError("give exactly one of 'corpora' (file paths) or 'synthetic' (generator specs)")
        if self.corpora and set(self.corpora) != set(langs):
            raise ValueError(f"corpora keys {sorted(self.corpora)} != languages {sorted(langs)}")
        if self.test_corpora and set(self.test_corpora) != set(langs):
            raise ValueError(f"test_corpora keys {sorted(self.test_corpora)} != languages {sorted(langs)}")
        if self.test_corpora and self.synthetic is not None and self.synthetic.test_chars:
            raise ValueError("give at most one of 'test_corpora' and 'synthetic.test_chars'")
        if self.synthetic is not None:
            names = [s.name for s in self.synthetic.languages]
            if sorted(names) != sorted(langs):
                raise ValueError(f"synthetic languages {names} != languages {langs}")
        for group, members in self.groups.items():
            unknown = set(members) - set(langs)
            if unknown or not members:
                raise ValueError(f"group {group!r} must be a non-empty subset of languages, "
                                 f"unknown: {sorted(unknown)}")
        for task, paths in self.probe.tasks.items():
            if not set(paths) <= set(langs):
                raise ValueError(f"probe task {task!r} names unknown languages {sorted(set(paths) - set(langs))}")
        unknown = set(self.tokenizer.strip_accents) - set(langs)
        if unknown:
            raise ValueError(f"strip_accents names unknown languages {sorted(unknown)}")
        try:
            preset(self.model.preset, 10, **self.model.overrides)
        except (TypeError, ValueError) as exc:
            raise ValueError(f"model: {exc}") from None
        return self

    # ------------------------------------------------------------ derived

    def normalizers(self) -> dict[str, NormalizerConfig]:
        return {l: NormalizerConfig(lowercase=self.tokenizer.lowercase,
                                    strip_accents=self.tokenizer.strip_accents.get(l, True))
                for l in self.languages}

    def build_model_config(self, vocab_size: int, seed: int) -> ModelConfig:
        return preset(self.model.preset, vocab_size, seed=seed, **self.model.overrides).validate()

    def plan(self, stage: str) -> TrainPlan:
        mode = "teacher" if stage == "teachers" else stage
        fields = self.train.values()
        fields.pop("stages", None)
        if stage in self.train.stages:
            fields.update(self.train.stages[stage].values())
        return TrainPlan(mode, seed=self.seed, **fields)

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def echo(self) -> dict:
        """Config as plain JSON data, without the machine-specific base_dir."""
        return self.model_dump(exclude={"base_dir"})


def load_config(path) -> JobConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    raw.setdefault("base_dir", str(path.parent))
    return parse_config(raw)


def parse_config(raw: dict) -> JobConfig:
    try:
        return JobConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(f"invalid config: {exc}") from None
