"""
Fixed random ESN layers.

    h_t = tanh(rho * W_res h_{t-1} + gamma * W_in x_t)

W_res / W_in генерируются из ReservoirConfig.seed и никогда не обучаются.
Обучаются только два скаляра на слой: rho и gamma.

Генерация:
- позиции ненулевых элементов: выборка без возвращения (точное число, не Bernoulli)
- значения: uniform [init_lo, init_hi) или gaussian с тем же центром/std
- normalize_radius: W_res делится на свой спектральный радиус => rho(W_res) = 1
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from echo_asr.errors import (
    EmptyInputError,
    GenerationError,
    InvalidConfigError,
    NonConvergenceError,
    ShapeError,
)
from echo_asr.layers import Parameter, SequenceCache
from echo_asr.logger import log
from echo_asr.models import ReservoirConfig
from echo_asr.numerics.linalg import SparseMatrix, estimate_spectral_radius
from echo_asr.numerics.prng import Prng, derive_seed
from echo_asr.settings import settings


def nonzero_count(sparsity: float, rows: int, cols: int) -> int:
    # round half up, чтобы 0.2 * 100^2 давало ровно 2000
    return int(math.floor((1.0 - sparsity) * rows * cols + 0.5))


def _sample_sparse(rng: Prng, rows: int, cols: int, cfg: ReservoirConfig) -> SparseMatrix:
    k = nonzero_count(cfg.sparsity, rows, cols)
    positions = sorted(rng.sample_without_replacement(rows * cols, k))
    if cfg.init_dist == "uniform":
        values = [rng.uniform(cfg.init_lo, cfg.init_hi) for _ in positions]
    else:
        center = 0.5 * (cfg.init_lo + cfg.init_hi)
        std = (cfg.init_hi - cfg.init_lo) / math.sqrt(12.0)
        values = [rng.gauss(center, std) for _ in positions]
    pos = np.array(positions, dtype=np.int64)
    return SparseMatrix(
        rows=rows,
        cols=cols,
        row_idx=pos // cols,
        col_idx=pos % cols,
        values=np.array(values, dtype=np.float64),
    )


def _validate(config: ReservoirConfig) -> None:
    if config.state_dim < 1 or config.input_dim < 1:
        raise InvalidConfigError("reservoir dims must be positive",
                                 state_dim=config.state_dim, input_dim=config.input_dim)
    if not 0.0 <= config.sparsity < 1.0:
        raise InvalidConfigError("sparsity must be in [0, 1)", sparsity=config.sparsity)
    if not config.init_lo < config.init_hi:
        raise InvalidConfigError("init_lo must be < init_hi", init_lo=config.init_lo, init_hi=config.init_hi)


class ReservoirLayer:
    kind = "esn"

    def __init__(self, config: ReservoirConfig, w_res: SparseMatrix, w_in: SparseMatrix):
        self.config = config
        self.w_res = w_res
        self.w_in = w_in
        self.input_dim = config.input_dim
        self.state_dim = config.state_dim
        self.rho = np.array(config.rho_init, dtype=np.float64)
        self.gamma = np.array(config.gamma_init, dtype=np.float64)
        self.rho_grad = np.zeros((), dtype=np.float64)
        self.gamma_grad = np.zeros((), dtype=np.float64)

    # ---------------------------
    # Parameters
    # ---------------------------
    def parameters(self) -> List[Parameter]:
        return [
            Parameter("w_res", self.w_res, None, trainable=False),
            Parameter("w_in", self.w_in, None, trainable=False),
            Parameter("rho", self.rho, self.rho_grad, trainable=True),
            Parameter("gamma", self.gamma, self.gamma_grad, trainable=True),
        ]

    def zero_grad(self) -> None:
        self.rho_grad[...] = 0.0
        self.gamma_grad[...] = 0.0

    # ---------------------------
    # Step API
    # ---------------------------
    def init_state(self) -> np.ndarray:
        return np.zeros(self.state_dim)

    def step(self, state: np.ndarray, x: np.ndarray) -> np.ndarray:
        return esn_step(self, state, x)

    def output(self, state: np.ndarray) -> np.ndarray:
        return state

    # ---------------------------
    # Sequence API (training)
    # ---------------------------
    def forward_sequence(self, xs: np.ndarray, h0: Optional[np.ndarray] = None) -> tuple[np.ndarray, SequenceCache]:
        T = xs.shape[0]
        h = self.init_state() if h0 is None else np.asarray(h0, dtype=np.float64)
        hs = np.empty((T, self.state_dim))
        rec = np.empty((T, self.state_dim))
        inp = np.empty((T, self.state_dim))
        h_prev0 = h
        rho, gamma = float(self.rho), float(self.gamma)
        for t in range(T):
            rec[t] = self.w_res.matvec(h)
            inp[t] = self.w_in.matvec(xs[t])
            h = np.tanh(rho * rec[t] + gamma * inp[t])
            hs[t] = h
        cache = SequenceCache(owner=id(self), xs=xs, hs=hs, extras={"rec": rec, "inp": inp, "h0": h_prev0})
        return hs, cache

    def backward_sequence(
        self, dhs: np.ndarray, cache: SequenceCache, need_input_grad: bool = True
    ) -> Optional[np.ndarray]:
        """
        Градиенты только по rho и gamma. Для W_res / W_in ничего не считается:
        через них протекает только градиент по состоянию (W_resᵀ da, W_inᵀ da).
        """
        cache.claim(self)
        if dhs.shape != cache.hs.shape:
            raise ShapeError("upstream gradient shape must match forward states",
                             expected=list(cache.hs.shape), got=list(dhs.shape))
        rho, gamma = float(self.rho), float(self.gamma)
        rec, inp, hs = cache.extras["rec"], cache.extras["inp"], cache.hs
        T = hs.shape[0]
        dxs = np.empty((T, self.input_dim)) if need_input_grad else None
        dh_next = np.zeros(self.state_dim)
        drho = 0.0
        dgamma = 0.0
        for t in range(T - 1, -1, -1):
            da = (dhs[t] + dh_next) * (1.0 - hs[t] * hs[t])
            drho += float(da @ rec[t])
            dgamma += float(da @ inp[t])
            dh_next = rho * self.w_res.rmatvec(da)
            if dxs is not None:
                dxs[t] = gamma * self.w_in.rmatvec(da)
        self.rho_grad += drho
        self.gamma_grad += dgamma
        return dxs


# =============================================================================
# Operations
# =============================================================================

def generate_reservoir(
    config: ReservoirConfig,
    *,
    max_iters: Optional[int] = None,
    tol: Optional[float] = None,
) -> ReservoirLayer:
    _validate(config)
    rng = Prng(config.seed)
    w_res = _sample_sparse(rng.split("w_res"), config.state_dim, config.state_dim, config)
    w_in = _sample_sparse(rng.split("w_in"), config.state_dim, config.input_dim, config)

    if config.normalize_radius:
        try:
            radius = estimate_spectral_radius(
                w_res,
                max_iters or settings.spectral_max_iters,
                tol or settings.spectral_tol,
                seed=derive_seed(config.seed, "radius"),
            )
        except NonConvergenceError as e:
            raise GenerationError(
                "spectral radius did not converge while normalizing reservoir",
                seed=config.seed,
                best_estimate=e.best_estimate,
            ) from e
        if radius <= 0.0:
            raise GenerationError("reservoir has zero spectral radius; cannot normalize",
                                  seed=config.seed, nnz=w_res.nnz)
        w_res = w_res.scaled(1.0 / radius)

    log.debug("reservoir generated", seed=config.seed, state_dim=config.state_dim,
              nnz_res=w_res.nnz, nnz_in=w_in.nnz)
    return ReservoirLayer(config, w_res, w_in)


def regenerate_from(config: ReservoirConfig) -> ReservoirLayer:
    return generate_reservoir(config)


def frozen_weights_match(layer: ReservoirLayer) -> bool:
    fresh = regenerate_from(layer.config)
    return fresh.w_res == layer.w_res and fresh.w_in == layer.w_in


def esn_step(layer: ReservoirLayer, h_prev: np.ndarray, x: np.ndarray) -> np.ndarray:
    h_prev = np.asarray(h_prev, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if h_prev.shape != (layer.state_dim,):
        raise ShapeError("h_prev length must equal state_dim", state_dim=layer.state_dim, got=list(h_prev.shape))
    if x.shape != (layer.input_dim,):
        raise ShapeError("x length must equal input_dim", input_dim=layer.input_dim, got=list(x.shape))
    return np.tanh(float(layer.rho) * layer.w_res.matvec(h_prev) + float(layer.gamma) * layer.w_in.matvec(x))


@dataclass
class DeepEsn:
    layers: List[ReservoirLayer]

    def __post_init__(self) -> None:
        for l in range(1, len(self.layers)):
            if self.layers[l].input_dim != self.layers[l - 1].state_dim:
                raise ShapeError("deep ESN wiring: layer input_dim must equal previous state_dim",
                                 layer=l, input_dim=self.layers[l].input_dim,
                                 prev_state_dim=self.layers[l - 1].state_dim)


def esn_forward(
    stack: DeepEsn,
    inputs: Sequence[np.ndarray],
    h0: Optional[Sequence[np.ndarray]] = None,
) -> List[np.ndarray]:
    """Per-layer state sequences, each (T, state_dim). Layer l reads layer l-1 at the same t."""
    if len(inputs) == 0:
        raise EmptyInputError("esn_forward needs a nonempty input sequence")
    states = [layer.init_state() if h0 is None else np.asarray(h0[i], dtype=np.float64)
              for i, layer in enumerate(stack.layers)]
    T = len(inputs)
    out = [np.empty((T, layer.state_dim)) for layer in stack.layers]
    for t in range(T):
        x = np.asarray(inputs[t], dtype=np.float64)
        for i, layer in enumerate(stack.layers):
            states[i] = esn_step(layer, states[i], x)
            out[i][t] = states[i]
            x = states[i]
    return out


def check_echo_state_property(
    layer: ReservoirLayer,
    inputs: Sequence[np.ndarray],
    seed_a: int,
    seed_b: int,
) -> np.ndarray:
    """
    Один и тот же вход из двух случайных начальных состояний.
    curve[0] - начальное расстояние, curve[t] - после t-го входа.
    """
    if len(inputs) == 0:
        raise EmptyInputError("echo state check needs at least one input")
    ha = Prng(seed_a).uniform_array(layer.state_dim, -1.0, 1.0)
    hb = Prng(seed_b).uniform_array(layer.state_dim, -1.0, 1.0)
    curve = [float(np.linalg.norm(ha - hb))]
    for x in inputs:
        ha = esn_step(layer, ha, x)
        hb = esn_step(layer, hb, x)
        curve.append(float(np.linalg.norm(ha - hb)))
    return np.array(curve)


def spectral_radius(layer: ReservoirLayer) -> float:
    return estimate_spectral_radius(
        layer.w_res, settings.spectral_max_iters, settings.spectral_tol,
        seed=derive_seed(layer.config.seed, "radius"),
    )


def effective_radius(layer: ReservoirLayer) -> float:
    return abs(float(layer.rho)) * spectral_radius(layer)
