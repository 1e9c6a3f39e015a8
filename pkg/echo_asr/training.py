"""
Обучение: optimizer, BPTT train step, цикл с JSON-lines логом,
finite-difference проверка и классический ridge readout.

Frozen контракт:
- optimizer создаёт моменты ТОЛЬКО для trainable тензоров
- backward вообще не строит градиенты для W_res / W_in (у них нет grad-буфера)
"""

from __future__ import annotations

import itertools
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg as sla

from echo_asr.data import Utterance, corpus_wer
from echo_asr.errors import (
    DivergenceError,
    EmptyInputError,
    InvalidConfigError,
    InvalidRangeError,
    ModelIOError,
    OracleTooLargeError,
    ShapeError,
    SingularSystemError,
)
from echo_asr.layers import Parameter
from echo_asr.logger import log
from echo_asr.models import TrainReportEntry, WerReport
from echo_asr.numerics.prng import Prng
from echo_asr.settings import settings
from echo_asr.transducer.decode import greedy_decode
from echo_asr.transducer.loss import transducer_loss
from echo_asr.transducer.model import TransducerModel, forward_with_cache, model_backward, model_forward

FD_MAX_PARAMS = 5000

ReadoutBatch = Tuple[np.ndarray, np.ndarray]
Batch = Union[Sequence[Utterance], ReadoutBatch]


# =============================================================================
# Linear readout (gradient-trained counterpart of ridge_readout)
# =============================================================================

class LinearReadout:
    """
    Y_hat = S W + b, loss = 0.5 * mean_rows ||Y_hat - Y||^2.

    Batch = (features (N, in_dim), targets (N, out_dim)).
    """

    def __init__(self, in_dim: int, out_dim: int, seed: int = 0):
        if in_dim < 1 or out_dim < 1:
            raise InvalidConfigError("readout dims must be positive", in_dim=in_dim, out_dim=out_dim)
        k = 1.0 / math.sqrt(in_dim)
        self.W = Prng(seed).split("readout/W").uniform_array(in_dim * out_dim, -k, k).reshape(in_dim, out_dim)
        self.b = np.zeros(out_dim)
        self.W_grad = np.zeros_like(self.W)
        self.b_grad = np.zeros_like(self.b)

    def parameters(self) -> List[Parameter]:
        return [
            Parameter("W", self.W, self.W_grad, trainable=True),
            Parameter("b", self.b, self.b_grad, trainable=True),
        ]

    def trainable_parameters(self) -> List[Parameter]:
        return self.parameters()

    def zero_grad(self) -> None:
        self.W_grad[...] = 0.0
        self.b_grad[...] = 0.0

    def predict(self, features: np.ndarray) -> np.ndarray:
        return np.asarray(features, dtype=np.float64) @ self.W + self.b

    def _check(self, batch: ReadoutBatch) -> Tuple[np.ndarray, np.ndarray]:
        s = np.asarray(batch[0], dtype=np.float64)
        y = np.asarray(batch[1], dtype=np.float64)
        if s.ndim != 2 or s.shape[0] == 0:
            raise EmptyInputError("readout batch needs a nonempty (N, in_dim) feature matrix")
        if s.shape[1] != self.W.shape[0] or y.shape != (s.shape[0], self.W.shape[1]):
            raise ShapeError("readout batch shape mismatch", features=list(s.shape), targets=list(y.shape))
        return s, y

    def loss(self, batch: ReadoutBatch) -> float:
        s, y = self._check(batch)
        r = self.predict(s) - y
        return float(0.5 * np.sum(r * r) / s.shape[0])

    def loss_and_grad(self, batch: ReadoutBatch) -> float:
        s, y = self._check(batch)
        n = s.shape[0]
        r = self.predict(s) - y
        self.W_grad += s.T @ r / n
        self.b_grad += r.sum(axis=0) / n
        return float(0.5 * np.sum(r * r) / n)


Trainable = Union[TransducerModel, LinearReadout]


# =============================================================================
# Batch loss
# =============================================================================

def batch_loss(model: Trainable, batch: Batch) -> float:
    """Средний loss по батчу, без backward."""
    if isinstance(model, LinearReadout):
        return model.loss(batch)  # type: ignore[arg-type]
    if not batch:
        raise EmptyInputError("batch is empty")
    total = 0.0
    for u in batch:
        loss, _ = transducer_loss(model_forward(model, u.frames, u.labels), u.labels)
        total += loss
    return total / len(batch)


def batch_loss_and_grads(model: Trainable, batch: Batch) -> float:
    """Средний loss; градиенты среднего НАКАПЛИВАЮТСЯ в grad-буферах."""
    if isinstance(model, LinearReadout):
        return model.loss_and_grad(batch)  # type: ignore[arg-type]
    if not batch:
        raise EmptyInputError("batch is empty")
    total = 0.0
    scale = 1.0 / len(batch)
    for u in batch:
        lattice, cache = forward_with_cache(model, u.frames, u.labels)
        loss, dlogits = transducer_loss(lattice, u.labels)
        model_backward(model, cache, dlogits * scale)
        total += loss
    return total * scale


def count_gradient_tensors(model: Trainable) -> int:
    """Сколько тензоров вообще несут grad-буфер (frozen ESN матрицы - нет)."""
    return sum(1 for p in model.parameters() if p.grad is not None)


def global_grad_norm(params: Iterable[Parameter]) -> float:
    return math.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params if p.grad is not None))


# =============================================================================
# Optimizer
# =============================================================================

@dataclass
class OptimizerState:
    kind: Literal["sgd", "adam"]
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def create(
        cls,
        model: Trainable,
        kind: str = "adam",
        learning_rate: Optional[float] = None,
    ) -> "OptimizerState":
        if kind not in ("sgd", "adam"):
            raise InvalidConfigError("optimizer must be sgd|adam", optimizer=kind)
        lr = settings.adam_lr if learning_rate is None else learning_rate
        if lr < 0 or not math.isfinite(lr):
            raise InvalidRangeError("learning rate must be a finite value >= 0", learning_rate=lr)
        state = cls(kind=kind, learning_rate=lr, beta1=settings.adam_beta1,  # type: ignore[arg-type]
                    beta2=settings.adam_beta2, eps=settings.adam_eps)
        if kind == "adam":
            for p in model.trainable_parameters():
                state.m[p.name] = np.zeros(p.shape)
                state.v[p.name] = np.zeros(p.shape)
        return state

    def check_matches(self, params: Sequence[Parameter]) -> None:
        if self.kind != "adam":
            return
        names = {p.name for p in params}
        if names != set(self.m):
            raise InvalidConfigError("optimizer state does not match model trainable tensors",
                                     missing=sorted(names - set(self.m)), extra=sorted(set(self.m) - names))

    def apply(self, params: Sequence[Parameter]) -> None:
        self.step += 1
        lr = self.learning_rate
        if self.kind == "sgd":
            for p in params:
                p.value -= lr * p.grad
            return
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.step
        c2 = 1.0 - b2 ** self.step
        for p in params:
            m, v = self.m[p.name], self.v[p.name]
            m *= b1
            m += (1.0 - b1) * p.grad
            v *= b2
            v += (1.0 - b2) * p.grad * p.grad
            p.value -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# =============================================================================
# Train step / loop
# =============================================================================

@dataclass
class TrainReport:
    entries: List[TrainReportEntry] = field(default_factory=list)

    @property
    def losses(self) -> List[float]:
        return [e.loss for e in self.entries]

    def wall_stats(self) -> Tuple[float, float]:
        if not self.entries:
            return 0.0, 0.0
        w = np.array([e.wall_ms for e in self.entries])
        return float(w.mean()), float(w.std())


def train_step(
    model: Trainable,
    batch: Batch,
    opt: OptimizerState,
    clip_norm: Optional[float] = None,
) -> TrainReportEntry:
    clip = settings.clip_norm if clip_norm is None else clip_norm
    params = model.trainable_parameters()
    opt.check_matches(params)

    t0 = time.perf_counter()
    model.zero_grad()
    loss = batch_loss_and_grads(model, batch)
    if not math.isfinite(loss):
        raise DivergenceError("non-finite loss", step=opt.step + 1, loss=str(loss))

    norm = global_grad_norm(params)
    if not math.isfinite(norm):
        raise DivergenceError("non-finite gradient norm", step=opt.step + 1)
    if clip > 0 and norm > clip:
        scale = clip / norm
        for p in params:
            p.grad *= scale

    opt.apply(params)
    wall_ms = (time.perf_counter() - t0) * 1000.0
    return TrainReportEntry(step=opt.step, loss=loss, wall_ms=wall_ms, grad_norm=norm,
                            updated_tensors=len(params))


def iterate_batches(dataset: Sequence[Utterance], batch_size: int, seed: int) -> Iterator[List[Utterance]]:
    """Бесконечный поток батчей; порядок эпохи e - перестановка из Prng(seed).split(epoch/e)."""
    if not dataset:
        raise EmptyInputError("training dataset is empty")
    if batch_size < 1:
        raise InvalidConfigError("batch_size must be >= 1", batch_size=batch_size)
    root = Prng(seed)
    for epoch in itertools.count():
        order = list(range(len(dataset)))
        root.split(f"epoch/{epoch}").shuffle(order)
        for i in range(0, len(order), batch_size):
            yield [dataset[j] for j in order[i:i + batch_size]]


def train_loop(
    model: Trainable,
    batches: Iterable[Batch],
    opt: OptimizerState,
    steps: int,
    log_path: Optional[Union[str, Path]] = None,
    clip_norm: Optional[float] = None,
) -> TrainReport:
    """
    steps шагов train_step. Каждая запись пишется JSON-строкой в log_path сразу,
    так что при DivergenceError на диске остаётся всё до сбоя.
    """
    report = TrainReport()
    sink = None
    if log_path is not None:
        try:
            Path(log_path).parent.mkdir(parents=True, exist_ok=True)
            sink = Path(log_path).open("w", encoding="utf-8")
        except OSError as e:
            raise ModelIOError("failed to open training log", path=str(log_path), reason=str(e)) from e
    try:
        for batch in itertools.islice(batches, steps):
            try:
                entry = train_step(model, batch, opt, clip_norm)
            except DivergenceError as e:
                e.report = report
                log.error("training diverged", step=opt.step + 1, completed=len(report.entries))
                raise
            report.entries.append(entry)
            if sink is not None:
                sink.write(json.dumps(entry.model_dump(), separators=(",", ":")) + "\n")
            if settings.log_every > 0 and entry.step % settings.log_every == 0:
                log.info("train step", step=entry.step, loss=entry.loss, grad_norm=entry.grad_norm,
                         wall_ms=entry.wall_ms)
    finally:
        if sink is not None:
            sink.close()
    return report


# =============================================================================
# Evaluation
# =============================================================================

def evaluate_wer(
    model: TransducerModel,
    dataset: Sequence[Utterance],
    split: str,
    max_symbols_per_frame: Optional[int] = None,
) -> WerReport:
    if not dataset:
        raise EmptyInputError("evaluation split is empty", split=split)
    hyps = [greedy_decode(model, u.frames, max_symbols_per_frame) for u in dataset]
    result = corpus_wer([u.labels for u in dataset], hyps)
    return WerReport(split=split, utterances=len(dataset), ref_tokens=result.ref_len, wer=result.rate,
                     substitutions=result.substitutions, insertions=result.insertions,
                     deletions=result.deletions)


# =============================================================================
# Verification / classical readout
# =============================================================================

def finite_diff_check(
    model: Trainable,
    batch: Batch,
    epsilon: float = 1e-5,
    floor: float = 1e-4,
) -> float:
    """
    Max по всем trainable скалярам (включая rho / gamma ESN слоёв) от
    |analytic - numeric| / max(|analytic|, |numeric|, floor), numeric - центральная разность.
    """
    params = model.trainable_parameters()
    total = sum(p.size for p in params)
    if total > FD_MAX_PARAMS:
        raise OracleTooLargeError("finite-difference check limited to 5000 trainable scalars", params=total)

    model.zero_grad()
    batch_loss_and_grads(model, batch)
    analytic = {p.name: np.array(p.grad, copy=True) for p in params}

    worst = 0.0
    for p in params:
        value = p.value
        for idx in np.ndindex(value.shape):
            saved = float(value[idx])
            value[idx] = saved + epsilon
            plus = batch_loss(model, batch)
            value[idx] = saved - epsilon
            minus = batch_loss(model, batch)
            value[idx] = saved
            numeric = (plus - minus) / (2.0 * epsilon)
            a = float(analytic[p.name][idx])
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
    model.zero_grad()
    return worst


def ridge_readout(states: np.ndarray, targets: np.ndarray, lam: float) -> np.ndarray:
    """W_out = (SᵀS + λI)⁻¹ SᵀY через Cholesky, без явного обращения."""
    s = np.asarray(states, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    if s.ndim != 2 or s.shape[0] != y.shape[0]:
        raise ShapeError("states and targets must have the same number of rows",
                         states=list(s.shape), targets=list(y.shape))
    if not lam >= 0.0:
        raise InvalidRangeError("lambda must be >= 0", lam=lam)
    if lam == 0.0 and np.linalg.matrix_rank(s) < s.shape[1]:
        raise SingularSystemError("SᵀS is singular with lambda = 0; use lambda > 0", rank_deficient=True)
    gram = s.T @ s + lam * np.eye(s.shape[1])
    try:
        factor = sla.cho_factor(gram, lower=False, check_finite=True)
    except np.linalg.LinAlgError as e:
        raise SingularSystemError("ridge system is not positive definite; use lambda > 0", lam=lam) from e
    return sla.cho_solve(factor, s.T @ y)
