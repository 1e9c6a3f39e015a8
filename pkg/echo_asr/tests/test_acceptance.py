"""
Длинные прогоны на синтетической задаче (V=16, feature_dim=16, 5k train / 500 test).

Запуск: ECHO_RUN_SLOW=1 pytest -m slow
Проверяются направления трендов, не абсолютные WER.
"""

from functools import lru_cache

import pytest

from echo_asr.data import concat_longform, synth_generate
from echo_asr.models import SynthConfig
from echo_asr.numerics.prng import derive_seed
from echo_asr.persistence import encode_model
from echo_asr.reservoir import frozen_weights_match
from echo_asr.training import OptimizerState, evaluate_wer, iterate_batches, train_loop, train_step
from echo_asr.transducer.model import build_model, preset_config

pytestmark = pytest.mark.slow

VOCAB = 16
FEATURES = 16
TRAIN = 5000
TEST = 500
STEPS = 2000


def _synth(num: int, start: int = 0) -> SynthConfig:
    return SynthConfig(vocab_size=VOCAB, feature_dim=FEATURES, num_examples=num, seed=0, start_index=start)


@lru_cache(maxsize=None)
def _splits():
    test = synth_generate(_synth(TEST, TRAIN))
    longform = concat_longform(test, 50, 10, derive_seed(0, "longform"))
    return synth_generate(_synth(TRAIN)), test, longform


def _config(preset: str):
    return preset_config(preset, feature_dim=FEATURES, vocab_size=VOCAB, enc_dim=64, dec_dim=64, joint_dim=64)


@lru_cache(maxsize=None)
def _trained(preset: str):
    train, _, _ = _splits()
    model = build_model(_config(preset))
    opt = OptimizerState.create(model, "adam")
    train_loop(model, iterate_batches(train, 8, derive_seed(0, "batches")), opt, STEPS)
    return model


@lru_cache(maxsize=None)
def _report(preset: str, split: str):
    _, test, longform = _splits()
    return evaluate_wer(_trained(preset), test if split == "test" else longform, split)


def _wer(preset: str, split: str) -> float:
    return _report(preset, split).wer


def _edits(preset: str, split: str) -> int:
    r = _report(preset, split)
    return r.substitutions + r.insertions + r.deletions


def _within(preset: str, split: str, factor: float) -> bool:
    # baseline может дойти до 0 ошибок: допуск не меньше одного токена
    base = _edits("baseline", split)
    return _edits(preset, split) <= max(factor * base, base + 1)


@pytest.mark.parametrize("preset", ["rnnt-d", "rnnt-e"])
def test_reservoirs_survive_full_training(preset):
    model = _trained(preset)
    fresh = build_model(_config(preset))
    for (name, layer), (_, init) in zip(model.reservoirs(), fresh.reservoirs()):
        assert frozen_weights_match(layer), name
        assert layer.w_res == init.w_res and layer.w_in == init.w_in
        assert float(layer.rho) != float(init.rho) or float(layer.gamma) != float(init.gamma)


def test_baseline_learns_the_task():
    assert _wer("baseline", "test") < 0.05


def test_random_decoder_keeps_up_with_baseline():
    assert _within("rnnt-d", "test", 1.2)


def test_random_encoder_falls_behind():
    assert _wer("rnnt-e", "test") >= max(2 * _wer("baseline", "test"), 0.05)


def test_longform_parity():
    assert _within("rnnt-d", "longform", 1.3)


def test_progressive_encoder_trend():
    wers = [_wer(f"progressive-{k}", "test") for k in (2, 1, 0)]
    assert wers[0] >= wers[1] >= wers[2]
    assert wers[0] > wers[2]


def test_random_decoder_step_is_faster():
    train, _, _ = _splits()
    stream = iterate_batches(train, 8, derive_seed(1, "batches"))
    batches = [next(stream) for _ in range(100)]
    mean = {}
    for preset in ("rnnt-d", "baseline"):
        model = build_model(_config(preset))
        opt = OptimizerState.create(model, "adam")
        walls = [train_step(model, b, opt).wall_ms for b in batches]
        mean[preset] = sum(walls) / len(walls)
    assert mean["rnnt-d"] < mean["baseline"]


def test_random_decoder_file_is_smaller_by_decoder_payload():
    d = build_model(_config("rnnt-d"))
    base = build_model(_config("baseline"))
    decoder_payload = 4 * sum(p.size for p in base.parameters() if p.name.startswith("decoder."))
    assert len(encode_model(base)) - len(encode_model(d)) >= decoder_payload - 4096


def test_training_is_reproducible():
    train, _, _ = _splits()
    blobs = []
    for _ in range(2):
        model = build_model(_config("rnnt-d"))
        opt = OptimizerState.create(model, "adam")
        train_loop(model, iterate_batches(train, 8, derive_seed(0, "batches")), opt, 200)
        model.round_to_f32()
        blobs.append(encode_model(model))
    assert blobs[0] == blobs[1]
