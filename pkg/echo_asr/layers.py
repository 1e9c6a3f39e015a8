"""
Общий контракт рекуррентных слоёв (ESN и trainable cells).

Слой умеет:
- прогнать последовательность целиком (forward_sequence) и вернуть кэш
- сделать backward по кэшу, накопив градиенты ТОЛЬКО trainable тензоров
- шагать по одному входу (step) - это нужно greedy decoding
- перечислить свои тензоры с тегом trainable / frozen
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, List, Optional, Protocol, Union

import numpy as np

from echo_asr.errors import ContractViolationError
from echo_asr.numerics.linalg import SparseMatrix

TensorValue = Union[np.ndarray, SparseMatrix]


@dataclass
class Parameter:
    """
    Тензор модели.

    frozen тензоры не имеют grad-буфера вообще: backward их не трогает
    и optimizer о них не знает.
    """
    name: str
    value: TensorValue
    grad: Optional[np.ndarray]
    trainable: bool

    @property
    def shape(self) -> tuple:
        return tuple(self.value.shape)

    @property
    def size(self) -> int:
        rows_cols = self.value.shape
        return int(np.prod(rows_cols)) if rows_cols else 1


@dataclass
class SequenceCache:
    """Кэш forward_sequence. Одноразовый: второй backward по нему - ошибка."""
    owner: int
    xs: np.ndarray
    hs: np.ndarray
    extras: dict = field(default_factory=dict)
    consumed: bool = False

    def claim(self, layer: Any) -> None:
        if self.owner != id(layer):
            raise ContractViolationError("cache belongs to a different layer")
        if self.consumed:
            raise ContractViolationError("cache was already consumed by a previous backward")
        self.consumed = True


class RecurrentLayer(Protocol):
    kind: str
    input_dim: int
    state_dim: int

    def parameters(self) -> List[Parameter]: ...

    def zero_grad(self) -> None: ...

    def init_state(self) -> Any: ...

    def step(self, state: Any, x: np.ndarray) -> Any: ...

    def output(self, state: Any) -> np.ndarray: ...

    def forward_sequence(self, xs: np.ndarray) -> tuple[np.ndarray, SequenceCache]: ...

    def backward_sequence(
        self, dhs: np.ndarray, cache: SequenceCache, need_input_grad: bool = True
    ) -> Optional[np.ndarray]: ...
