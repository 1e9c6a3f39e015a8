"""
Синтетический корпус frames -> tokens, long-form склейка и WER.

Задача устроена так, что encoder должен денойзить и сегментировать
(каждый токен = k одинаковых зашумлённых кадров, повторы токенов не разделены),
а "язык" decoder'а тривиален: токены равномерно случайны.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Sequence

import numpy as np

from echo_asr.errors import EmptyInputError, InvalidConfigError, InvalidReferenceError, ModelIOError
from echo_asr.logger import log
from echo_asr.models import SynthConfig
from echo_asr.numerics.prng import Prng


@dataclass
class Utterance:
    frames: np.ndarray  # (N, feature_dim)
    labels: List[int]
    id: str


# =============================================================================
# Generation
# =============================================================================

def token_embeddings(config: SynthConfig) -> np.ndarray:
    """(V, feature_dim): строка k-1 - embedding токена k. Одна таблица на seed датасета."""
    rng = Prng(config.seed).split("embeddings")
    return rng.gauss_array(config.vocab_size * config.feature_dim).reshape(config.vocab_size, config.feature_dim)


def synth_generate(config: SynthConfig) -> List[Utterance]:
    table = token_embeddings(config)
    root = Prng(config.seed)
    out: List[Utterance] = []
    for i in range(config.num_examples):
        idx = config.start_index + i
        rng = root.split(f"example/{idx}")
        length = rng.randint(config.min_label_len, config.max_label_len)
        labels = [rng.randint(1, config.vocab_size) for _ in range(length)]
        frames = np.repeat(table[np.array(labels) - 1], config.frames_per_token, axis=0)
        if config.noise_sigma > 0.0:
            noise = rng.split("noise").gauss_array(frames.size, 0.0, config.noise_sigma)
            frames = frames + noise.reshape(frames.shape)
        out.append(Utterance(frames=frames, labels=labels, id=f"synth-{config.seed}-{idx:06d}"))
    log.debug("synthetic dataset generated", seed=config.seed, examples=len(out),
              start_index=config.start_index)
    return out


def concat_longform(
    dataset: Sequence[Utterance],
    num_examples: int,
    utterances_per_example: int,
    seed: int,
) -> List[Utterance]:
    """Каждый long-form пример - склейка utterances_per_example разных utterances (без повторов)."""
    if not dataset:
        raise EmptyInputError("long-form source dataset is empty")
    if not 1 <= utterances_per_example <= len(dataset):
        raise InvalidConfigError("utterances_per_example must be in [1, len(dataset)]",
                                 utterances_per_example=utterances_per_example, dataset=len(dataset))
    root = Prng(seed)
    out: List[Utterance] = []
    for j in range(num_examples):
        picks = root.split(f"longform/{j}").sample_without_replacement(len(dataset), utterances_per_example)
        parts = [dataset[p] for p in picks]
        out.append(Utterance(
            frames=np.concatenate([u.frames for u in parts], axis=0),
            labels=[tok for u in parts for tok in u.labels],
            id=f"longform-{seed}-{j:04d}",
        ))
    return out


# =============================================================================
# WER
# =============================================================================

@dataclass(frozen=True)
class WerResult:
    rate: float
    substitutions: int
    insertions: int
    deletions: int
    ref_len: int

    @property
    def edits(self) -> int:
        return self.substitutions + self.insertions + self.deletions


def _edit_table(ref: Sequence[int], hyp: Sequence[int]) -> np.ndarray:
    n, m = len(ref), len(hyp)
    d = np.zeros((n + 1, m + 1), dtype=np.int64)
    d[:, 0] = np.arange(n + 1)
    d[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            sub = d[i - 1, j - 1] + (0 if ref[i - 1] == hyp[j - 1] else 1)
            d[i, j] = min(sub, d[i - 1, j] + 1, d[i, j - 1] + 1)
    return d


def wer(reference: Sequence[int], hypothesis: Sequence[int]) -> WerResult:
    """
    Levenshtein с единичными стоимостями.
    При равных скриптах backtrace выбирает substitution > deletion > insertion
    (на rate это не влияет, только на разбивку S/I/D).
    """
    ref, hyp = list(reference), list(hypothesis)
    if not ref:
        raise InvalidReferenceError("reference must be nonempty")
    d = _edit_table(ref, hyp)
    i, j = len(ref), len(hyp)
    s = ins = dels = 0
    while i > 0 or j > 0:
        if i > 0 and j > 0 and d[i, j] == d[i - 1, j - 1] + (0 if ref[i - 1] == hyp[j - 1] else 1):
            if ref[i - 1] != hyp[j - 1]:
                s += 1
            i, j = i - 1, j - 1
        elif i > 0 and d[i, j] == d[i - 1, j] + 1:
            dels += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return WerResult(rate=(s + ins + dels) / len(ref), substitutions=s, insertions=ins,
                     deletions=dels, ref_len=len(ref))


def corpus_wer(references: Sequence[Sequence[int]], hypotheses: Sequence[Sequence[int]]) -> WerResult:
    """Σ edits / Σ len(ref) по корпусу (не среднее по utterances)."""
    if len(references) != len(hypotheses):
        raise InvalidConfigError("references and hypotheses must pair up",
                                 references=len(references), hypotheses=len(hypotheses))
    if not references:
        raise InvalidReferenceError("corpus is empty")
    parts = [wer(r, h) for r, h in zip(references, hypotheses)]
    total = sum(p.ref_len for p in parts)
    s = sum(p.substitutions for p in parts)
    ins = sum(p.insertions for p in parts)
    dels = sum(p.deletions for p in parts)
    return WerResult(rate=(s + ins + dels) / total, substitutions=s, insertions=ins,
                     deletions=dels, ref_len=total)


# =============================================================================
# JSON-lines export / import
# =============================================================================

def save_dataset(dataset: Iterable[Utterance], path: str | Path) -> int:
    """{id, labels, frames} на строку. json пишет float через repr => shortest round-trip."""
    path = Path(path)
    n = 0
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as f:
            for u in dataset:
                row = {"id": u.id, "labels": [int(t) for t in u.labels],
                       "frames": [[float(x) for x in fr] for fr in u.frames]}
                f.write(json.dumps(row, separators=(",", ":")) + "\n")
                n += 1
    except OSError as e:
        raise ModelIOError("failed to write dataset", path=str(path), reason=str(e)) from e
    return n


def load_dataset(path: str | Path) -> List[Utterance]:
    path = Path(path)
    out: List[Utterance] = []
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise ModelIOError("failed to read dataset", path=str(path), reason=str(e)) from e
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
            frames = np.array(row["frames"], dtype=np.float64)
            labels = [int(t) for t in row["labels"]]
            uid = str(row["id"])
        except (ValueError, KeyError, TypeError) as e:
            raise InvalidConfigError("malformed dataset line", path=str(path), line=lineno) from e
        if frames.ndim != 2:
            raise InvalidConfigError("dataset frames must be a 2-D list", path=str(path), line=lineno)
        out.append(Utterance(frames=frames, labels=labels, id=uid))
    return out
