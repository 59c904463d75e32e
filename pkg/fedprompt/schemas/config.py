"""Experiment configuration schemas."""
import json
import math
from typing import Literal, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

DEFAULT_LABEL_WORDS = [["terrible"], ["great"]]


class OptimizerConfig(BaseModel):
    """Local optimizer; Adam at lr 0.3 by default, SGD for analytic checks."""
    kind: Literal["adam", "sgd"] = "adam"
    lr: float = Field(default=0.3, gt=0)
    beta1: float = Field(default=0.9, ge=0, lt=1)
    beta2: float = Field(default=0.999, ge=0, lt=1)
    eps: float = Field(default=1e-8, gt=0)


class ModelConfig(BaseModel):
    """Backbone dimensions, soft prompt length and verbalizer words."""
    vocab_size: int = Field(default=1024, gt=4)
    hidden: int = Field(default=32, gt=0)
    ffn: int = Field(default=64, gt=0)
    prompt_len: int = Field(default=20, ge=1)
    max_len: int = Field(default=32, ge=1)
    label_words: list[list[str]] = Field(default_factory=lambda: [list(w) for w in DEFAULT_LABEL_WORDS])

    @field_validator("label_words")
    @classmethod
    def validate_label_words(cls, v: list[list[str]]) -> list[list[str]]:
        """Every class needs a label word; no word may serve two classes."""
        if len(v) < 2:
            raise ValueError("At least two classes are required")
        seen: set[str] = set()
        cleaned = []
        for words in v:
            words = [w.strip().lower() for w in words if w.strip()]
            if not words:
                raise ValueError("Every class needs at least one label word")
            overlap = seen.intersection(words)
            if overlap:
                raise ValueError(f"Label words shared across classes: {sorted(overlap)}")
            seen.update(words)
            cleaned.append(words)
        return cleaned

    @property
    def total_len(self) -> int:
        """L_total: soft positions + text + the three template literals."""
        return self.prompt_len + self.max_len + 3

    @property
    def num_classes(self) -> int:
        return len(self.label_words)


class DataConfig(BaseModel):
    """Where training/test data comes from: files, or the synthetic task."""
    n_train: int = Field(default=2000, ge=2)
    n_test: int = Field(default=400, ge=2)
    words_per_text: int = Field(default=12, ge=1)
    contamination: float = Field(default=0.1, ge=0, le=1)
    data_seed: int = Field(default=0, ge=0)
    train_path: Optional[str] = None
    test_path: Optional[str] = None
    partition_path: Optional[str] = None


class AttackSpec(BaseModel):
    """Backdoor poisoning: trigger word, target label, poison rate, attackers."""
    trigger: str = "cf"
    target_label: int = Field(default=0, ge=0)
    poison_rate: float = Field(default=1.0, ge=0, le=1)
    malicious_clients: tuple[int, ...] = ()

    @field_validator("trigger")
    @classmethod
    def validate_trigger(cls, v: str) -> str:
        """Trigger must be a single word."""
        v = v.strip()
        if not v or len(v.split()) != 1:
            raise ValueError("Trigger must be a single word")
        return v

    @field_validator("malicious_clients")
    @classmethod
    def validate_malicious(cls, v: tuple[int, ...]) -> tuple[int, ...]:
        if any(k < 0 for k in v):
            raise ValueError("Client ids are non-negative")
        return tuple(sorted(set(v)))


class LdpSpec(BaseModel):
    """Local DP: per-batch gradient clip norm and Laplace scale on uploads."""
    clip_norm: float = Field(default=1.0, gt=0)
    laplace_scale: float = Field(default=0.0, ge=0)
    noise_seed: int = Field(default=0, ge=0)


class ScreenSpec(BaseModel):
    """Robust z-score cutoff for screening uploaded prompt statistics."""
    mad_threshold: float = Field(default=3.0, gt=0)


class FedConfig(BaseModel):
    """Full experiment configuration (K, C, T, B, E', optimizer, seeds, ...)."""
    clients: int = Field(default=10, ge=1)
    fraction: float = Field(default=1.0, gt=0, le=1)
    rounds: int = Field(default=20, ge=1)
    batch: int = Field(default=16, ge=1)
    local_steps: int = Field(default=100, ge=0)
    seed: int = Field(default=0, ge=0)
    backbone_seed: Optional[int] = Field(default=None, ge=0)
    prompt_seed: Optional[int] = Field(default=None, ge=0)
    alpha: Optional[float] = Field(default=None, gt=0)
    timeout: Optional[float] = Field(default=None, gt=0)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    attack: Optional[AttackSpec] = None
    ldp: Optional[LdpSpec] = None
    screen: Optional[ScreenSpec] = None

    @model_validator(mode="after")
    def check_consistency(self) -> "FedConfig":
        if self.attack is not None:
            if self.attack.target_label >= self.model.num_classes:
                raise ValueError(
                    f"Target label {self.attack.target_label} is not a valid class"
                )
            bad = [k for k in self.attack.malicious_clients if k >= self.clients]
            if bad:
                raise ValueError(f"Malicious client ids out of range: {bad}")
        return self

    @property
    def per_round(self) -> int:
        """⌈C·K⌉ clients take part in each round."""
        return max(1, math.ceil(self.fraction * self.clients - 1e-9))

    @property
    def screen_enabled(self) -> bool:
        return self.screen is not None

    @property
    def backbone_seed_value(self) -> int:
        return self.seed if self.backbone_seed is None else self.backbone_seed

    @property
    def prompt_seed_value(self) -> int:
        return self.seed if self.prompt_seed is None else self.prompt_seed

    def to_json(self) -> str:
        """JSON for the CONFIG frame; infinities survive as JSON Infinity."""
        return json.dumps(self.model_dump(mode="python"), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "FedConfig":
        return cls.model_validate(json.loads(text))
