"""
Greedy RNN-T decoding.

На каждом кадре: argmax по V+1; не-blank => эмитим токен и двигаем prediction
network, blank (или лимит символов) => следующий кадр.
"""

from __future__ import annotations

from typing import List, Optional

import numpy as np

from echo_asr.errors import InvalidConfigError
from echo_asr.settings import settings
from echo_asr.transducer.model import BLANK, TransducerModel, encode, joint


class _PredictionState:
    """Пошаговое состояние decoder-стека: один токен на вход, один dec-вектор на выход."""

    def __init__(self, model: TransducerModel):
        self.model = model
        self.states = [layer.init_state() for layer in model.decoder]
        self.output = self.advance(BLANK)

    def advance(self, token: int) -> np.ndarray:
        x = self.model.head["embedding"][token]
        for i, layer in enumerate(self.model.decoder):
            self.states[i] = layer.step(self.states[i], x)
            x = layer.output(self.states[i])
        self.output = x
        return x


def greedy_decode(
    model: TransducerModel,
    frames: np.ndarray,
    max_symbols_per_frame: Optional[int] = None,
) -> List[int]:
    cap = settings.max_symbols_per_frame if max_symbols_per_frame is None else max_symbols_per_frame
    if cap < 1:
        raise InvalidConfigError("max_symbols_per_frame must be >= 1", max_symbols_per_frame=cap)

    enc = encode(model, frames)
    pred = _PredictionState(model)
    out: List[int] = []
    for t in range(enc.shape[0]):
        for _ in range(cap):
            # np.argmax берёт первый максимум => ничья уходит к меньшему индексу (blank)
            k = int(np.argmax(joint(model, enc[t], pred.output)))
            if k == BLANK:
                break
            out.append(k)
            pred.advance(k)
    return out
