from functools import lru_cache

import numpy as np
import pytest

from echo_asr.data import (
    Utterance,
    concat_longform,
    corpus_wer,
    load_dataset,
    save_dataset,
    synth_generate,
    token_embeddings,
    wer,
)
from echo_asr.errors import EmptyInputError, InvalidConfigError, InvalidReferenceError, ModelIOError
from echo_asr.models import SynthConfig


def _cfg(**kw) -> SynthConfig:
    base = dict(vocab_size=5, feature_dim=4, num_examples=20, seed=7)
    base.update(kw)
    return SynthConfig(**base)


def _levenshtein(a, b) -> int:
    @lru_cache(maxsize=None)
    def go(i: int, j: int) -> int:
        if i == 0 or j == 0:
            return i + j
        return min(go(i - 1, j) + 1, go(i, j - 1) + 1, go(i - 1, j - 1) + (a[i - 1] != b[j - 1]))

    return go(len(a), len(b))


# =============================================================================
# Synthetic corpus
# =============================================================================

def test_noiseless_frames_are_exact_embeddings():
    cfg = _cfg(noise_sigma=0.0, frames_per_token=2)
    table = token_embeddings(cfg)
    for u in synth_generate(cfg):
        assert np.array_equal(u.frames, np.repeat(table[np.array(u.labels) - 1], 2, axis=0))


def test_generated_shapes_and_ranges():
    cfg = _cfg(min_label_len=2, max_label_len=4, frames_per_token=3)
    data = synth_generate(cfg)
    assert len(data) == 20
    assert len({u.id for u in data}) == 20
    for u in data:
        assert 2 <= len(u.labels) <= 4
        assert all(1 <= t <= 5 for t in u.labels)
        assert u.frames.shape == (3 * len(u.labels), 4)


def test_generation_is_deterministic():
    a, b = synth_generate(_cfg()), synth_generate(_cfg())
    assert [u.labels for u in a] == [u.labels for u in b]
    assert all(np.array_equal(x.frames, y.frames) for x, y in zip(a, b))
    c = synth_generate(_cfg(seed=8))
    assert [u.labels for u in a] != [u.labels for u in c]


def test_start_index_shifts_examples_not_embeddings():
    full = synth_generate(_cfg(num_examples=10))
    tail = synth_generate(_cfg(num_examples=5, start_index=5))
    assert [u.id for u in tail] == [u.id for u in full[5:]]
    assert all(np.array_equal(x.frames, y.frames) for x, y in zip(tail, full[5:]))
    assert np.array_equal(token_embeddings(_cfg()), token_embeddings(_cfg(start_index=99)))


def test_label_length_bounds_validated():
    with pytest.raises(ValueError):
        _cfg(min_label_len=5, max_label_len=3)


# =============================================================================
# Long-form concatenation
# =============================================================================

def test_longform_concatenates_whole_utterances():
    data = [
        Utterance(frames=np.full((6, 2), 1.0), labels=[1, 2], id="a"),
        Utterance(frames=np.full((8, 2), 2.0), labels=[3, 3, 4], id="b"),
    ]
    out = concat_longform(data, num_examples=3, utterances_per_example=2, seed=0)
    assert len(out) == 3
    for u in out:
        assert u.frames.shape == (14, 2)
        assert sorted(u.labels) == [1, 2, 3, 3, 4]


def test_longform_k1_is_a_source_utterance():
    data = synth_generate(_cfg())
    for u in concat_longform(data, 5, 1, seed=3):
        assert any(u.labels == s.labels and np.array_equal(u.frames, s.frames) for s in data)


def test_longform_never_repeats_within_example():
    data = [Utterance(frames=np.full((1, 1), float(i)), labels=[1], id=str(i)) for i in range(10)]
    for u in concat_longform(data, 20, 6, seed=5):
        assert len(set(u.frames[:, 0].tolist())) == 6


def test_longform_deterministic_and_errors():
    data = synth_generate(_cfg())
    a = concat_longform(data, 4, 3, seed=1)
    b = concat_longform(data, 4, 3, seed=1)
    assert [u.labels for u in a] == [u.labels for u in b]
    with pytest.raises(EmptyInputError):
        concat_longform([], 1, 1, seed=0)
    with pytest.raises(InvalidConfigError):
        concat_longform(data, 1, 21, seed=0)
    with pytest.raises(InvalidConfigError):
        concat_longform(data, 1, 0, seed=0)


# =============================================================================
# WER
# =============================================================================

@pytest.mark.parametrize(
    "ref, hyp, rate, sid",
    [
        ([1, 2, 3], [1, 2, 3], 0.0, (0, 0, 0)),
        ([1, 2, 3], [1, 3], 1 / 3, (0, 0, 1)),
        ([1, 2, 3], [1, 2, 4, 3], 1 / 3, (0, 1, 0)),
        ([1, 2, 3], [], 1.0, (0, 0, 3)),
        ([1], [2, 3, 4], 3.0, (1, 2, 0)),
        ([1, 2], [2, 1], 1.0, (2, 0, 0)),
    ],
)
def test_wer_examples(ref, hyp, rate, sid):
    r = wer(ref, hyp)
    assert r.rate == pytest.approx(rate)
    assert (r.substitutions, r.insertions, r.deletions) == sid


def test_wer_requires_reference():
    with pytest.raises(InvalidReferenceError):
        wer([], [1])


def test_wer_matches_recursive_oracle():
    rng = np.random.default_rng(0)
    for _ in range(500):
        ref = tuple(int(t) for t in rng.integers(1, 4, rng.integers(1, 8)))
        hyp = tuple(int(t) for t in rng.integers(1, 4, rng.integers(0, 8)))
        r = wer(ref, hyp)
        assert r.edits == _levenshtein(ref, hyp)
        assert r.rate * len(ref) == pytest.approx(r.edits)
        assert len(hyp) - len(ref) == r.insertions - r.deletions


def test_wer_invariant_under_relabeling():
    ref, hyp = [1, 2, 2, 3], [2, 2, 1]
    perm = {1: 3, 2: 1, 3: 2}
    assert wer(ref, hyp).edits == wer([perm[t] for t in ref], [perm[t] for t in hyp]).edits


def test_corpus_wer_pools_counts():
    r = corpus_wer([[1, 2, 3, 4], [5]], [[1, 2, 3, 4], [6]])
    assert r.rate == pytest.approx(1 / 5)
    assert r.ref_len == 5
    with pytest.raises(InvalidConfigError):
        corpus_wer([[1]], [])
    with pytest.raises(InvalidReferenceError):
        corpus_wer([], [])


# =============================================================================
# JSON-lines export
# =============================================================================

def test_dataset_save_load_is_bit_exact(tmp_path):
    data = synth_generate(_cfg(num_examples=4))
    assert save_dataset(data, tmp_path / "d" / "train.jsonl") == 4
    back = load_dataset(tmp_path / "d" / "train.jsonl")
    assert [u.id for u in back] == [u.id for u in data]
    assert [u.labels for u in back] == [u.labels for u in data]
    assert all(np.array_equal(x.frames, y.frames) for x, y in zip(back, data))


def test_dataset_load_errors(tmp_path):
    with pytest.raises(ModelIOError):
        load_dataset(tmp_path / "missing.jsonl")
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"id": "x", "labels": [1]}\n')
    with pytest.raises(InvalidConfigError):
        load_dataset(bad)
