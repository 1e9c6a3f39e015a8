"""
RNN-T model: encoder stack + prediction network + joint network.

Проводка:
  frames --stack_frames--> encoder layers --> enc (T, De)
  [blank/start] + labels --embedding--> decoder layers --> dec (U+1, Dd)
  joint(t, u) = W_out tanh(W_enc enc_t + W_dec dec_u + b) + b_out   -> V+1 logits, blank = 0

Каждый слой encoder / decoder - либо trainable cell (lstm / simple-rnn), либо
fixed ESN. Frozen тензоры (W_res, W_in) не имеют grad-буферов.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from echo_asr.cells import CellParams
from echo_asr.errors import (
    ConfigInconsistencyError,
    EmptyInputError,
    InvalidConfigError,
    ShapeError,
    VocabError,
)
from echo_asr.layers import Parameter, SequenceCache
from echo_asr.models import LayerSpec, ModelConfig, ReservoirConfig
from echo_asr.numerics.prng import Prng, derive_seed
from echo_asr.reservoir import ReservoirLayer, generate_reservoir

BLANK = 0

Layer = Union[CellParams, ReservoirLayer]

PRESETS = ("baseline", "rnnt-e", "rnnt-d")


# =============================================================================
# Config presets
# =============================================================================

def preset_config(
    preset: str,
    *,
    feature_dim: int,
    vocab_size: int,
    enc_dim: int = 64,
    dec_dim: int = 64,
    embed_dim: Optional[int] = None,
    joint_dim: int = 64,
    num_layers: int = 2,
    subsample_factor: int = 1,
    seed: int = 0,
    trainable_position: str = "first",
) -> ModelConfig:
    """
    baseline        - всё trainable (LSTM)
    rnnt-e          - encoder целиком ESN
    rnnt-d          - decoder целиком ESN
    progressive-K   - decoder ESN, в encoder K слоёв ESN и num_layers-K LSTM;
                      trainable_position=first кладёт LSTM снизу, last - сверху
    """
    lstm_enc = [LayerSpec(kind="lstm", dim=enc_dim)] * num_layers
    lstm_dec = [LayerSpec(kind="lstm", dim=dec_dim)] * num_layers
    esn_enc = [LayerSpec(kind="esn", dim=enc_dim)] * num_layers
    esn_dec = [LayerSpec(kind="esn", dim=dec_dim)] * num_layers

    if preset == "baseline":
        enc, dec = lstm_enc, lstm_dec
    elif preset == "rnnt-e":
        enc, dec = esn_enc, lstm_dec
    elif preset == "rnnt-d":
        enc, dec = lstm_enc, esn_dec
    elif preset.startswith("progressive-"):
        try:
            k = int(preset.split("-", 1)[1])
        except ValueError as e:
            raise InvalidConfigError("progressive preset must be progressive-K", preset=preset) from e
        if not 0 <= k <= num_layers:
            raise InvalidConfigError("progressive K must be within encoder depth", k=k, num_layers=num_layers)
        if trainable_position not in ("first", "last"):
            raise InvalidConfigError("trainable_position must be first|last", trainable_position=trainable_position)
        trainable = [LayerSpec(kind="lstm", dim=enc_dim)] * (num_layers - k)
        random = [LayerSpec(kind="esn", dim=enc_dim)] * k
        enc = trainable + random if trainable_position == "first" else random + trainable
        dec = esn_dec
    else:
        raise InvalidConfigError("unknown model preset", preset=preset)

    return ModelConfig(
        name=preset,
        feature_dim=feature_dim,
        encoder_layers=list(enc),
        decoder_layers=list(dec),
        embed_dim=embed_dim or dec_dim,
        joint_dim=joint_dim,
        vocab_size=vocab_size,
        subsample_factor=subsample_factor,
        master_seed=seed,
    )


def reservoir_config_for(config: ModelConfig, stack: str, index: int, input_dim: int) -> ReservoirConfig:
    spec = (config.encoder_layers if stack == "encoder" else config.decoder_layers)[index]
    return ReservoirConfig(
        state_dim=spec.dim,
        input_dim=input_dim,
        sparsity=config.esn_sparsity,
        init_dist=config.esn_init_dist,
        seed=derive_seed(config.master_seed, f"{stack}/{index}/esn"),
        normalize_radius=config.esn_normalize_radius,
    )


# =============================================================================
# Model
# =============================================================================

@dataclass
class LogitLattice:
    logits: np.ndarray  # (T, U+1, V+1)

    def __post_init__(self) -> None:
        if self.logits.ndim != 3:
            raise ShapeError("lattice must be T x (U+1) x (V+1)", shape=list(self.logits.shape))

    @property
    def T(self) -> int:
        return int(self.logits.shape[0])

    @property
    def U(self) -> int:
        return int(self.logits.shape[1]) - 1

    @property
    def num_classes(self) -> int:
        return int(self.logits.shape[2])


@dataclass
class ForwardCache:
    enc_caches: List[SequenceCache]
    dec_caches: List[SequenceCache]
    enc_out: np.ndarray
    dec_out: np.ndarray
    z: np.ndarray
    tokens: np.ndarray


class TransducerModel:
    def __init__(self, config: ModelConfig, reservoirs: Optional[Dict[str, ReservoirLayer]] = None):
        """
        reservoirs: уже сгенерированные ESN слои по имени "encoder.0" / "decoder.1"
        (load_model); их config обязан совпасть с тем, что выводится из ModelConfig.
        """
        self.config = config
        self._prebuilt = dict(reservoirs or {})
        rng = Prng(config.master_seed)
        self.encoder: List[Layer] = self._build_stack("encoder", config.encoder_layers,
                                                      config.encoder_input_dim, rng)
        self.decoder: List[Layer] = self._build_stack("decoder", config.decoder_layers,
                                                      config.embed_dim, rng)
        if self._prebuilt:
            raise ConfigInconsistencyError("stored reservoirs do not match any ESN layer",
                                           layers=sorted(self._prebuilt))

        de = self.encoder[-1].state_dim
        dd = self.decoder[-1].state_dim
        J, E, C = config.joint_dim, config.embed_dim, config.num_classes

        def init(label: str, rows: int, cols: int) -> np.ndarray:
            k = 1.0 / math.sqrt(cols)
            return rng.split(label).uniform_array(rows * cols, -k, k).reshape(rows, cols)

        # строка 0 embedding = start-of-sequence (вход prediction network при u=0)
        self.head: Dict[str, np.ndarray] = {
            "embedding": init("embedding", C, E),
            "W_enc": init("joint/W_enc", J, de),
            "W_dec": init("joint/W_dec", J, dd),
            "b_joint": np.zeros(J),
            "W_out": init("joint/W_out", C, J),
            "b_out": np.zeros(C),
        }
        self.head_grads: Dict[str, np.ndarray] = {k: np.zeros_like(v) for k, v in self.head.items()}

    def _build_stack(self, stack: str, specs: Sequence[LayerSpec], input_dim: int, rng: Prng) -> List[Layer]:
        layers: List[Layer] = []
        in_dim = input_dim
        for i, spec in enumerate(specs):
            if spec.kind == "esn":
                expected = reservoir_config_for(self.config, stack, i, in_dim)
                layer = self._prebuilt.pop(f"{stack}.{i}", None)
                if layer is None:
                    layer = generate_reservoir(expected)
                elif layer.config != expected:
                    raise ConfigInconsistencyError("stored reservoir config disagrees with model config",
                                                   layer=f"{stack}.{i}")
                layers.append(layer)
            else:
                layers.append(CellParams.initialize(spec.kind, in_dim, spec.dim, rng.split(f"{stack}/{i}")))
            in_dim = spec.dim
        return layers

    # ---------------------------
    # Parameters
    # ---------------------------
    def parameters(self) -> List[Parameter]:
        out: List[Parameter] = []
        for stack, layers in (("encoder", self.encoder), ("decoder", self.decoder)):
            for i, layer in enumerate(layers):
                for p in layer.parameters():
                    out.append(Parameter(f"{stack}.{i}.{p.name}", p.value, p.grad, p.trainable))
        for name, value in self.head.items():
            prefix = "" if name == "embedding" else "joint."
            out.append(Parameter(f"{prefix}{name}", value, self.head_grads[name], trainable=True))
        return out

    def trainable_parameters(self) -> List[Parameter]:
        return [p for p in self.parameters() if p.trainable]

    def frozen_parameters(self) -> List[Parameter]:
        return [p for p in self.parameters() if not p.trainable]

    def reservoirs(self) -> List[Tuple[str, ReservoirLayer]]:
        out = []
        for stack, layers in (("encoder", self.encoder), ("decoder", self.decoder)):
            for i, layer in enumerate(layers):
                if isinstance(layer, ReservoirLayer):
                    out.append((f"{stack}.{i}", layer))
        return out

    def zero_grad(self) -> None:
        for layer in self.encoder + self.decoder:
            layer.zero_grad()
        for g in self.head_grads.values():
            g[...] = 0.0

    def round_to_f32(self) -> None:
        """Trainable тензоры -> float32 -> float64 in place (нормализация перед save)."""
        for p in self.trainable_parameters():
            p.value[...] = p.value.astype(np.float32).astype(np.float64)


def build_model(
    config: ModelConfig, reservoirs: Optional[Dict[str, ReservoirLayer]] = None
) -> TransducerModel:
    return TransducerModel(config, reservoirs)


# =============================================================================
# Forward
# =============================================================================

def stack_frames(frames: np.ndarray, factor: int) -> np.ndarray:
    """Склейка factor соседних кадров; хвост добивается нулевыми кадрами (T = ceil(N / factor))."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] == 0:
        raise EmptyInputError("frames must be a nonempty (N, feature_dim) array", shape=list(frames.shape))
    n, f = frames.shape
    t = -(-n // factor)
    pad = t * factor - n
    if pad:
        frames = np.vstack([frames, np.zeros((pad, f))])
    return frames.reshape(t, factor * f)


def encode(model: TransducerModel, frames: np.ndarray) -> np.ndarray:
    x, _ = _run_encoder(model, frames)
    return x


def _run_encoder(model: TransducerModel, frames: np.ndarray) -> Tuple[np.ndarray, List[SequenceCache]]:
    cfg = model.config
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] == 0:
        raise EmptyInputError("frames must be nonempty")
    if frames.shape[1] != cfg.feature_dim:
        raise ShapeError("frame dim must equal feature_dim", feature_dim=cfg.feature_dim, got=int(frames.shape[1]))
    x = stack_frames(frames, cfg.subsample_factor)
    caches = []
    for layer in model.encoder:
        x, c = layer.forward_sequence(x)
        caches.append(c)
    return x, caches


def _run_decoder(model: TransducerModel, tokens: np.ndarray) -> Tuple[np.ndarray, List[SequenceCache]]:
    x = model.head["embedding"][tokens]
    caches = []
    for layer in model.decoder:
        x, c = layer.forward_sequence(x)
        caches.append(c)
    return x, caches


def _check_labels(model: TransducerModel, labels: Sequence[int]) -> np.ndarray:
    arr = np.asarray(list(labels), dtype=np.int64)
    if arr.size and (arr.min() < 1 or arr.max() > model.config.vocab_size):
        raise VocabError("label tokens must be in [1, V]", vocab_size=model.config.vocab_size)
    return arr


def joint(model: TransducerModel, enc_t: np.ndarray, dec_u: np.ndarray) -> np.ndarray:
    """Logits over V+1 (без softmax)."""
    h = model.head
    enc_t = np.asarray(enc_t, dtype=np.float64)
    dec_u = np.asarray(dec_u, dtype=np.float64)
    if enc_t.shape != (h["W_enc"].shape[1],) or dec_u.shape != (h["W_dec"].shape[1],):
        raise ShapeError("joint input dims mismatch",
                         enc_dim=int(h["W_enc"].shape[1]), dec_dim=int(h["W_dec"].shape[1]))
    z = np.tanh(h["W_enc"] @ enc_t + h["W_dec"] @ dec_u + h["b_joint"])
    return h["W_out"] @ z + h["b_out"]


def forward_with_cache(
    model: TransducerModel, frames: np.ndarray, labels: Sequence[int]
) -> Tuple[LogitLattice, ForwardCache]:
    lab = _check_labels(model, labels)
    enc_out, enc_caches = _run_encoder(model, frames)
    tokens = np.concatenate([[BLANK], lab]).astype(np.int64)
    dec_out, dec_caches = _run_decoder(model, tokens)

    h = model.head
    a = enc_out @ h["W_enc"].T
    b = dec_out @ h["W_dec"].T
    z = np.tanh(a[:, None, :] + b[None, :, :] + h["b_joint"])
    logits = z @ h["W_out"].T + h["b_out"]
    cache = ForwardCache(enc_caches, dec_caches, enc_out, dec_out, z, tokens)
    return LogitLattice(logits), cache


def model_forward(model: TransducerModel, frames: np.ndarray, labels: Sequence[int]) -> LogitLattice:
    lattice, _ = forward_with_cache(model, frames, labels)
    return lattice


# =============================================================================
# Backward
# =============================================================================

def model_backward(model: TransducerModel, cache: ForwardCache, dlogits: np.ndarray) -> None:
    """
    Накапливает градиенты всех trainable тензоров по dLoss/dLogits.
    Frozen ESN матрицы сами по себе градиентов не получают (см. ReservoirLayer.backward_sequence).
    """
    h, g = model.head, model.head_grads
    z = cache.z

    g["b_out"] += dlogits.sum(axis=(0, 1))
    g["W_out"] += np.einsum("tuk,tuj->kj", dlogits, z)
    dz = dlogits @ h["W_out"]
    dpre = dz * (1.0 - z * z)
    g["b_joint"] += dpre.sum(axis=(0, 1))
    da = dpre.sum(axis=1)
    db = dpre.sum(axis=0)
    g["W_enc"] += da.T @ cache.enc_out
    g["W_dec"] += db.T @ cache.dec_out

    d_dec = db @ h["W_dec"]
    for layer, c in zip(reversed(model.decoder), reversed(cache.dec_caches)):
        d_dec = layer.backward_sequence(d_dec, c, need_input_grad=True)
    np.add.at(g["embedding"], cache.tokens, d_dec)

    d_enc = da @ h["W_enc"]
    n = len(model.encoder)
    for i in range(n - 1, -1, -1):
        # кадры не обучаются: входной градиент нижнего слоя не нужен
        d_enc = model.encoder[i].backward_sequence(d_enc, cache.enc_caches[i], need_input_grad=i > 0)
