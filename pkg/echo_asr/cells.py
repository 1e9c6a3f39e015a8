"""
Trainable recurrent cells (simple RNN, LSTM) с ручным forward/backward.

Используются везде, где модель НЕ рандомизирована.

simple-rnn:  h = tanh(W_hh h_prev + W_xh x + b)
lstm:        z = W_xh x + W_hh h_prev + b, гейты в порядке [i, f, g, o]
             c = f * c_prev + i * g,  h = o * tanh(c)
             (без peephole; bias forget-гейта стартует с 1.0)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from scipy.special import expit

from echo_asr.errors import ContractViolationError, InvalidConfigError, ShapeError
from echo_asr.layers import Parameter, SequenceCache
from echo_asr.numerics.prng import Prng

CellKind = Literal["simple-rnn", "lstm"]

_GATES = {"simple-rnn": 1, "lstm": 4}


def _gates(kind: str) -> int:
    if kind not in _GATES:
        raise InvalidConfigError("unknown cell kind", kind=kind)
    return _GATES[kind]


def param_count(kind: CellKind, input_dim: int, state_dim: int) -> int:
    d, i = state_dim, input_dim
    return _gates(kind) * (d * d + d * i + d)


@dataclass
class StepCache:
    owner: int
    kind: str
    x: np.ndarray
    h_prev: np.ndarray
    c_prev: Optional[np.ndarray]
    pre: np.ndarray
    acts: np.ndarray
    h: np.ndarray
    c: Optional[np.ndarray]
    consumed: bool = field(default=False)


class CellParams:
    def __init__(self, kind: CellKind, input_dim: int, state_dim: int, weights: Dict[str, np.ndarray]):
        if input_dim < 1 or state_dim < 1:
            raise InvalidConfigError("cell dims must be positive", input_dim=input_dim, state_dim=state_dim)
        self.kind: str = kind
        self.input_dim = input_dim
        self.state_dim = state_dim
        g = _gates(kind) * state_dim
        expected = {"W_hh": (g, state_dim), "W_xh": (g, input_dim), "b": (g,)}
        for name, shape in expected.items():
            if weights[name].shape != shape:
                raise ShapeError("cell weight has wrong shape", name=name,
                                 expected=list(shape), got=list(weights[name].shape))
        self.weights = {k: np.asarray(weights[k], dtype=np.float64) for k in expected}
        self.grads = {k: np.zeros_like(v) for k, v in self.weights.items()}

    @classmethod
    def initialize(cls, kind: CellKind, input_dim: int, state_dim: int, rng: Prng) -> "CellParams":
        g = _gates(kind) * state_dim
        k = 1.0 / math.sqrt(state_dim)
        w_hh = rng.split("W_hh").uniform_array(g * state_dim, -k, k).reshape(g, state_dim)
        w_xh = rng.split("W_xh").uniform_array(g * input_dim, -k, k).reshape(g, input_dim)
        b = np.zeros(g)
        if kind == "lstm":
            b[state_dim:2 * state_dim] = 1.0
        return cls(kind, input_dim, state_dim, {"W_hh": w_hh, "W_xh": w_xh, "b": b})

    @classmethod
    def zeros(cls, kind: CellKind, input_dim: int, state_dim: int) -> "CellParams":
        g = _gates(kind) * state_dim
        return cls(kind, input_dim, state_dim, {
            "W_hh": np.zeros((g, state_dim)), "W_xh": np.zeros((g, input_dim)), "b": np.zeros(g),
        })

    # ---------------------------
    # Parameters
    # ---------------------------
    def parameters(self) -> List[Parameter]:
        return [Parameter(k, self.weights[k], self.grads[k], trainable=True) for k in ("W_hh", "W_xh", "b")]

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g[...] = 0.0

    def param_count(self) -> int:
        return param_count(self.kind, self.input_dim, self.state_dim)  # type: ignore[arg-type]

    # ---------------------------
    # Step API
    # ---------------------------
    def init_state(self):
        h = np.zeros(self.state_dim)
        return (h, np.zeros(self.state_dim)) if self.kind == "lstm" else h

    def step(self, state, x: np.ndarray):
        if self.kind == "lstm":
            h, c, _ = cell_forward(self, state[0], x, state[1])
            return (h, c)
        h, _, _ = cell_forward(self, state, x)
        return h

    def output(self, state) -> np.ndarray:
        return state[0] if self.kind == "lstm" else state

    # ---------------------------
    # Sequence API (BPTT)
    # ---------------------------
    def forward_sequence(self, xs: np.ndarray) -> Tuple[np.ndarray, SequenceCache]:
        T = xs.shape[0]
        hs = np.empty((T, self.state_dim))
        steps: List[StepCache] = []
        h = np.zeros(self.state_dim)
        c = np.zeros(self.state_dim) if self.kind == "lstm" else None
        for t in range(T):
            h, c, sc = cell_forward(self, h, xs[t], c)
            hs[t] = h
            steps.append(sc)
        return hs, SequenceCache(owner=id(self), xs=xs, hs=hs, extras={"steps": steps})

    def backward_sequence(
        self, dhs: np.ndarray, cache: SequenceCache, need_input_grad: bool = True
    ) -> Optional[np.ndarray]:
        cache.claim(self)
        if dhs.shape != cache.hs.shape:
            raise ShapeError("upstream gradient shape must match forward states",
                             expected=list(cache.hs.shape), got=list(dhs.shape))
        steps: List[StepCache] = cache.extras["steps"]
        T = len(steps)
        dxs = np.empty((T, self.input_dim))
        dh_next = np.zeros(self.state_dim)
        dc_next = np.zeros(self.state_dim) if self.kind == "lstm" else None
        for t in range(T - 1, -1, -1):
            dx, dh_next, dc_next = cell_backward(self, steps[t], dhs[t] + dh_next, dc_next)
            dxs[t] = dx
        return dxs if need_input_grad else None


# =============================================================================
# Operations
# =============================================================================

def cell_forward(
    cell: CellParams,
    h_prev: np.ndarray,
    x: np.ndarray,
    c_prev: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, Optional[np.ndarray], StepCache]:
    h_prev = np.asarray(h_prev, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if h_prev.shape != (cell.state_dim,) or x.shape != (cell.input_dim,):
        raise ShapeError("cell_forward shape mismatch", state_dim=cell.state_dim, input_dim=cell.input_dim,
                         h_prev=list(h_prev.shape), x=list(x.shape))
    w = cell.weights
    pre = w["W_hh"] @ h_prev + w["W_xh"] @ x + w["b"]

    if cell.kind == "simple-rnn":
        h = np.tanh(pre)
        return h, None, StepCache(id(cell), cell.kind, x, h_prev, None, pre, h, h, None)

    if c_prev is None:
        c_prev = np.zeros(cell.state_dim)
    elif c_prev.shape != (cell.state_dim,):
        raise ShapeError("c_prev length must equal state_dim", state_dim=cell.state_dim, got=list(c_prev.shape))
    d = cell.state_dim
    acts = np.empty_like(pre)
    acts[0:d] = expit(pre[0:d])
    acts[d:2 * d] = expit(pre[d:2 * d])
    acts[2 * d:3 * d] = np.tanh(pre[2 * d:3 * d])
    acts[3 * d:4 * d] = expit(pre[3 * d:4 * d])
    i, f, g, o = acts[0:d], acts[d:2 * d], acts[2 * d:3 * d], acts[3 * d:4 * d]
    c = f * c_prev + i * g
    h = o * np.tanh(c)
    return h, c, StepCache(id(cell), cell.kind, x, h_prev, c_prev, pre, acts, h, c)


def cell_backward(
    cell: CellParams,
    cache: StepCache,
    dh: np.ndarray,
    dc: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray, Optional[np.ndarray]]:
    """
    Returns (dx, dh_prev, dc_prev). Градиенты параметров НАКАПЛИВАЮТСЯ (BPTT).
    """
    if cache.owner != id(cell) or cache.kind != cell.kind:
        raise ContractViolationError("cache was produced by a different cell")
    if cache.consumed:
        raise ContractViolationError("cache was already consumed by a previous backward")
    if dh.shape != (cell.state_dim,):
        raise ShapeError("upstream gradient length must equal state_dim", state_dim=cell.state_dim)
    cache.consumed = True
    w, gr = cell.weights, cell.grads

    if cell.kind == "simple-rnn":
        dz = dh * (1.0 - cache.h * cache.h)
        dc_prev = None
    else:
        d = cell.state_dim
        acts = cache.acts
        i, f, g, o = acts[0:d], acts[d:2 * d], acts[2 * d:3 * d], acts[3 * d:4 * d]
        tc = np.tanh(cache.c)
        dc_total = dh * o * (1.0 - tc * tc)
        if dc is not None:
            dc_total = dc_total + dc
        dz = np.empty(4 * d)
        dz[0:d] = dc_total * g * i * (1.0 - i)
        dz[d:2 * d] = dc_total * cache.c_prev * f * (1.0 - f)
        dz[2 * d:3 * d] = dc_total * i * (1.0 - g * g)
        dz[3 * d:4 * d] = dh * tc * o * (1.0 - o)
        dc_prev = dc_total * f

    gr["W_hh"] += np.outer(dz, cache.h_prev)
    gr["W_xh"] += np.outer(dz, cache.x)
    gr["b"] += dz
    dx = w["W_xh"].T @ dz
    dh_prev = w["W_hh"].T @ dz
    return dx, dh_prev, dc_prev
