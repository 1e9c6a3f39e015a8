from echo_asr.transducer.decode import greedy_decode
from echo_asr.transducer.loss import alignment_count, brute_force_loss, transducer_loss
from echo_asr.transducer.model import (
    BLANK,
    PRESETS,
    LogitLattice,
    TransducerModel,
    build_model,
    encode,
    forward_with_cache,
    joint,
    model_backward,
    model_forward,
    preset_config,
    stack_frames,
)

__all__ = [
    "BLANK",
    "PRESETS",
    "LogitLattice",
    "TransducerModel",
    "alignment_count",
    "brute_force_loss",
    "build_model",
    "encode",
    "forward_with_cache",
    "greedy_decode",
    "joint",
    "model_backward",
    "model_forward",
    "preset_config",
    "stack_frames",
    "transducer_loss",
]
