"""
ModelFile: бинарная сериализация модели, где ESN слой хранится как seed + config.

Формат (все целые little-endian):

    b"ESRM" | u32 version
    u32 len | ModelConfig canonical JSON
    u32 n_esn   x { u16 len | name | u64 seed | u32 len | ReservoirConfig JSON | f32 rho | f32 gamma }
    u32 n_tensor x { u16 len | name | u8 ndim | u32 dims[ndim] | f32 values[prod(dims)] }
    u32 CRC32 всех предыдущих байт

Значения W_res / W_in в файл не попадают никогда: load_model перегенерирует их
через generate_reservoir из сохранённого ReservoirConfig.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np
from pydantic import ValidationError

from echo_asr.errors import (
    BadMagicError,
    ConfigInconsistencyError,
    CorruptModelError,
    ModelIOError,
    UnsupportedVersionError,
)
from echo_asr.logger import log
from echo_asr.models import ModelConfig, ReservoirConfig, canonical_json
from echo_asr.reservoir import ReservoirLayer, generate_reservoir
from echo_asr.transducer.model import TransducerModel, build_model

MAGIC = b"ESRM"
FORMAT_VERSION = 1

PathLike = Union[str, Path]


# =============================================================================
# Encoding
# =============================================================================

def _name(name: str) -> bytes:
    raw = name.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def _blob(raw: bytes) -> bytes:
    return struct.pack("<I", len(raw)) + raw


def _tensor_params(model: TransducerModel):
    """Trainable тензоры кроме ESN скаляров (rho / gamma живут в ESN записях)."""
    esn_prefixes = tuple(f"{name}." for name, _ in model.reservoirs())
    return [p for p in model.trainable_parameters() if not p.name.startswith(esn_prefixes)]


def _esn_layer_names(config: ModelConfig) -> set:
    return {f"{stack}.{i}"
            for stack, specs in (("encoder", config.encoder_layers), ("decoder", config.decoder_layers))
            for i, spec in enumerate(specs) if spec.kind == "esn"}


def _encode_sections(model: TransducerModel) -> List[Tuple[str, str, bytes]]:
    """(section, name, bytes) в порядке записи, без CRC."""
    sections: List[Tuple[str, str, bytes]] = []
    reservoirs = model.reservoirs()
    params = _tensor_params(model)

    header = MAGIC + struct.pack("<I", FORMAT_VERSION) + _blob(canonical_json(model.config))
    sections.append(("header", "header", header + struct.pack("<I", len(reservoirs))))

    for name, layer in reservoirs:
        rec = (
            _name(name)
            + struct.pack("<Q", layer.config.seed)
            + _blob(canonical_json(layer.config))
            + struct.pack("<ff", float(layer.rho), float(layer.gamma))
        )
        sections.append(("esn", name, rec))

    sections.append(("header", "tensor_count", struct.pack("<I", len(params))))
    for p in params:
        value = np.asarray(p.value)
        rec = (
            _name(p.name)
            + struct.pack("<B", value.ndim)
            + struct.pack(f"<{value.ndim}I", *value.shape)
            + np.ascontiguousarray(value, dtype="<f4").tobytes()
        )
        sections.append(("tensor", p.name, rec))
    return sections


def encode_model(model: TransducerModel) -> bytes:
    body = b"".join(raw for _, _, raw in _encode_sections(model))
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def save_model(model: TransducerModel, destination: PathLike) -> int:
    """
    Округляет trainable тензоры модели до f32 (in place), затем пишет файл.
    После этого in-memory модель и load_model(файл) дают бит-в-бит одинаковые логиты.
    """
    model.round_to_f32()
    data = encode_model(model)
    path = Path(destination)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
    except OSError as e:
        raise ModelIOError("failed to write model file", path=str(path), reason=str(e)) from e
    log.info("model saved", path=str(path), bytes=len(data), esn_layers=len(model.reservoirs()))
    return len(data)


# =============================================================================
# Decoding
# =============================================================================

class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptModelError("model file is truncated", offset=self.pos, need=n)
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def u32(self) -> int:
        return self.unpack("<I")[0]

    def name(self) -> str:
        (n,) = self.unpack("<H")
        return self.take(n).decode("utf-8")

    def blob(self) -> bytes:
        return self.take(self.u32())


def decode_model(data: bytes) -> TransducerModel:
    if len(data) < 12:
        raise CorruptModelError("model file is too short", size=len(data))
    if data[:4] != MAGIC:
        raise BadMagicError("not a model file (bad magic)", magic=data[:4].hex())
    (version,) = struct.unpack("<I", data[4:8])
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError("unsupported model file version", version=version,
                                      supported=FORMAT_VERSION)
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CorruptModelError("CRC32 mismatch", expected=crc)

    r = _Reader(body)
    r.take(8)
    try:
        config = ModelConfig.model_validate_json(r.blob())
    except ValidationError as e:
        raise ConfigInconsistencyError("stored model config is invalid", reason=str(e)) from e

    reservoirs: Dict[str, ReservoirLayer] = {}
    scalars: Dict[str, Tuple[float, float]] = {}
    n_records = r.u32()
    for _ in range(n_records):
        name = r.name()
        (seed,) = r.unpack("<Q")
        try:
            res_cfg = ReservoirConfig.model_validate_json(r.blob())
        except ValidationError as e:
            raise ConfigInconsistencyError("stored reservoir config is invalid", layer=name) from e
        if res_cfg.seed != seed:
            raise ConfigInconsistencyError("reservoir seed disagrees with its config", layer=name)
        reservoirs[name] = generate_reservoir(res_cfg)
        scalars[name] = r.unpack("<ff")

    declared = _esn_layer_names(config)
    if len(reservoirs) != n_records or set(reservoirs) != declared:
        raise ConfigInconsistencyError("ESN records disagree with model config",
                                       stored=sorted(reservoirs), expected=sorted(declared))

    model = build_model(config, reservoirs)
    for name, layer in model.reservoirs():
        rho, gamma = scalars[name]
        layer.rho[...] = rho
        layer.gamma[...] = gamma

    expected = {p.name: p for p in _tensor_params(model)}
    count = r.u32()
    if count != len(expected):
        raise ConfigInconsistencyError("tensor count disagrees with model config",
                                       stored=count, expected=len(expected))
    for _ in range(count):
        name = r.name()
        (ndim,) = r.unpack("<B")
        dims = r.unpack(f"<{ndim}I")
        p = expected.pop(name, None)
        if p is None or tuple(dims) != p.shape:
            raise ConfigInconsistencyError("stored tensor does not fit model config",
                                           tensor=name, dims=list(dims))
        n = int(np.prod(dims)) if dims else 1
        values = np.frombuffer(r.take(4 * n), dtype="<f4").astype(np.float64)
        p.value[...] = values.reshape(dims)
    if r.pos != len(body):
        raise CorruptModelError("trailing bytes before CRC", extra=len(body) - r.pos)
    return model


def load_model(source: PathLike) -> TransducerModel:
    path = Path(source)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise ModelIOError("failed to read model file", path=str(path), reason=str(e)) from e
    model = decode_model(data)
    log.debug("model loaded", path=str(path), name=model.config.name, esn_layers=len(model.reservoirs()))
    return model


# =============================================================================
# Layout (inspect)
# =============================================================================

@dataclass
class FileLayout:
    header: int
    esn_records: Dict[str, int] = field(default_factory=dict)
    tensors: Dict[str, int] = field(default_factory=dict)
    crc: int = 4

    @property
    def total(self) -> int:
        return self.header + sum(self.esn_records.values()) + sum(self.tensors.values()) + self.crc


def model_file_layout(model: TransducerModel) -> FileLayout:
    """Разбивка размера файла; tensors считаются как полная запись (имя + shape + values)."""
    layout = FileLayout(header=0)
    for section, name, raw in _encode_sections(model):
        if section == "header":
            layout.header += len(raw)
        elif section == "esn":
            layout.esn_records[name] = len(raw)
        else:
            layout.tensors[name] = len(raw)
    return layout
