"""
Pydantic contracts echo_asr.

Основные контракты:
- ReservoirConfig: всё, что нужно, чтобы детерминированно перегенерировать ESN слой
- LayerSpec / ModelConfig: проводка encoder / prediction network (trainable vs esn)
- SynthConfig: синтетический корпус frames -> tokens
- TrainReportEntry: одна строка JSON-lines лога обучения
- WerReport: результат eval по одному split
- ExperimentConfig: resolved config, который каждая команда пишет рядом с выходами
"""

from __future__ import annotations

import json
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

U64_MAX = 2**64 - 1

LayerKind = Literal["lstm", "simple-rnn", "esn"]


def canonical_json(model: BaseModel) -> bytes:
    """Канонический UTF-8 JSON: sorted keys, без пробелов. Годится для байтового сравнения."""
    return json.dumps(model.model_dump(mode="json"), sort_keys=True, separators=(",", ":")).encode("utf-8")


class ReservoirConfig(BaseModel):
    """
    Fixed random ESN layer.

    sparsity - доля НУЛЕВЫХ элементов (0.8 => 20% ненулевых), одинаково для w_res и w_in.
    init_dist:
      - uniform: U[init_lo, init_hi)
      - gaussian: N(center, std) с тем же центром и std, что у uniform
    """
    model_config = ConfigDict(frozen=True)

    state_dim: int = Field(..., ge=1)
    input_dim: int = Field(..., ge=1)
    sparsity: float = Field(default=0.80, ge=0.0, lt=1.0)
    init_lo: float = -1.0
    init_hi: float = 1.0
    init_dist: Literal["uniform", "gaussian"] = "uniform"
    seed: int = Field(default=0, ge=0, le=U64_MAX)
    normalize_radius: bool = True
    rho_init: float = 0.9
    gamma_init: float = 1.0

    @model_validator(mode="after")
    def _check_range(self) -> "ReservoirConfig":
        if not self.init_lo < self.init_hi:
            raise ValueError("init_lo must be < init_hi")
        return self


class LayerSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: LayerKind
    dim: int = Field(..., ge=1)


class ModelConfig(BaseModel):
    """
    RNN-T wiring.

    vocab_size не включает blank; выходной слой имеет vocab_size + 1 классов, blank = 0.
    subsample_factor - склейка соседних кадров (вместо conv frontend).
    """
    model_config = ConfigDict(frozen=True)

    name: str = "custom"
    feature_dim: int = Field(..., ge=1)
    encoder_layers: List[LayerSpec]
    decoder_layers: List[LayerSpec]
    embed_dim: int = Field(default=32, ge=1)
    joint_dim: int = Field(default=64, ge=1)
    vocab_size: int = Field(..., ge=1)
    subsample_factor: int = Field(default=1, ge=1)
    master_seed: int = Field(default=0, ge=0, le=U64_MAX)

    esn_sparsity: float = Field(default=0.80, ge=0.0, lt=1.0)
    esn_init_dist: Literal["uniform", "gaussian"] = "uniform"
    esn_normalize_radius: bool = True

    @field_validator("encoder_layers", "decoder_layers")
    @classmethod
    def _non_empty(cls, v: List[LayerSpec]) -> List[LayerSpec]:
        if not v:
            raise ValueError("at least one layer is required")
        return v

    @property
    def num_classes(self) -> int:
        return self.vocab_size + 1

    @property
    def encoder_input_dim(self) -> int:
        return self.feature_dim * self.subsample_factor


class SynthConfig(BaseModel):
    """
    Синтетический корпус: каждый токен = фиксированный случайный embedding,
    повторённый frames_per_token раз, плюс гауссов шум noise_sigma.

    start_index сдвигает индексы примеров: train/test одного и того же seed
    делят embeddings токенов, но не пересекаются по примерам.
    """
    model_config = ConfigDict(frozen=True)

    vocab_size: int = Field(..., ge=2)
    feature_dim: int = Field(..., ge=1)
    frames_per_token: int = Field(default=3, ge=1)
    noise_sigma: float = Field(default=0.3, ge=0.0)
    min_label_len: int = Field(default=2, ge=1)
    max_label_len: int = Field(default=6, ge=1)
    num_examples: int = Field(default=100, ge=0)
    seed: int = Field(default=0, ge=0, le=U64_MAX)
    start_index: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _check_lengths(self) -> "SynthConfig":
        if self.min_label_len > self.max_label_len:
            raise ValueError("min_label_len must be <= max_label_len")
        return self


class TrainReportEntry(BaseModel):
    """Одна строка JSON-lines лога обучения."""
    step: int
    loss: float
    wall_ms: float
    grad_norm: float
    updated_tensors: int


class WerReport(BaseModel):
    split: str
    utterances: int
    ref_tokens: int
    wer: float
    substitutions: int
    insertions: int
    deletions: int


class ExperimentConfig(BaseModel):
    """
    Resolved config одной команды. Пишется как JSON рядом с её выходами.
    """
    command: Literal["train", "eval", "bench", "inspect", "gen-data"]
    seed: int = 0
    preset: Optional[str] = None
    model: Optional[ModelConfig] = None
    synth: Optional[SynthConfig] = None
    steps: int = 0
    batch_size: int = 8
    optimizer: Literal["sgd", "adam"] = "adam"
    learning_rate: float = 1e-3
    clip_norm: float = 5.0
    longform_k: int = 10
    longform_examples: int = 50
    eval_seeds: List[int] = Field(default_factory=list)
    outputs: Dict[str, str] = Field(default_factory=dict)
    extra: Dict[str, Any] = Field(default_factory=dict)
