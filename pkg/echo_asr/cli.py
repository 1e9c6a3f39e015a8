"""
CLI echo_asr: gen-data / train / eval / bench / inspect.

stdout - отчёты (JSON, таблицы), stderr - лог.
Каждая команда, у которой есть --out, пишет туда resolved ExperimentConfig (config.json).

Exit codes: 0 ok, 2 config/usage, 3 divergence, 4 I/O, 5 corrupt model file.
"""

from __future__ import annotations

import functools
import json
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import click
from pydantic import ValidationError

from echo_asr.data import Utterance, concat_longform, load_dataset, save_dataset, synth_generate
from echo_asr.errors import EchoError, InvalidConfigError, ModelIOError, error_payload
from echo_asr.logger import log
from echo_asr.models import ExperimentConfig, ModelConfig, SynthConfig
from echo_asr.numerics.prng import derive_seed
from echo_asr.persistence import load_model, model_file_layout, save_model
from echo_asr.reservoir import effective_radius, spectral_radius
from echo_asr.settings import settings
from echo_asr.training import (
    OptimizerState,
    count_gradient_tensors,
    evaluate_wer,
    iterate_batches,
    train_loop,
    train_step,
)
from echo_asr.transducer.model import TransducerModel, build_model, preset_config

MODEL_FILE = "model.esrm"
TRAIN_LOG = "train_log.jsonl"
CONFIG_FILE = "config.json"


# =============================================================================
# Helpers
# =============================================================================

def _fail(e: EchoError) -> None:
    ctx = click.get_current_context()
    if isinstance(e, InvalidConfigError):
        e.details.setdefault("usage", ctx.get_usage())
    log.error("command failed", code=e.code, message=e.message)
    click.echo(json.dumps(error_payload(e), ensure_ascii=False))
    ctx.exit(e.exit_code)


def _handled(fn: Callable) -> Callable:
    """EchoError -> JSON envelope в stdout + exit code ошибки."""

    @functools.wraps(fn)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        try:
            return fn(*args, **kwargs)
        except EchoError as e:
            _fail(e)
        except ValidationError as e:
            _fail(InvalidConfigError("invalid option values", errors=[x["msg"] for x in e.errors()]))

    return wrapper


def _emit(payload: Dict[str, Any]) -> None:
    click.echo(json.dumps(payload, indent=2, ensure_ascii=False))


def _write_text(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as e:
        raise ModelIOError("cannot write output", path=str(path), reason=str(e)) from e


def _write_config(out: Path, exp: ExperimentConfig) -> None:
    _write_text(out / CONFIG_FILE, exp.model_dump_json(indent=2))


def _out_dir(out: Optional[str], command: str) -> Path:
    return Path(out) if out else Path(settings.runs_dir) / command


def _synth(vocab: int, feature_dim: int, data_seed: int, num_examples: int, start_index: int = 0) -> SynthConfig:
    return SynthConfig(vocab_size=vocab, feature_dim=feature_dim, num_examples=num_examples,
                       seed=data_seed, start_index=start_index)


def _model_config(
    preset: str, vocab: int, feature_dim: int, enc_dim: int, dec_dim: int, joint_dim: int,
    layers: int, subsample: int, seed: int, trainable_position: str,
) -> ModelConfig:
    return preset_config(
        preset, feature_dim=feature_dim, vocab_size=vocab, enc_dim=enc_dim, dec_dim=dec_dim,
        joint_dim=joint_dim, num_layers=layers, subsample_factor=subsample, seed=seed,
        trainable_position=trainable_position,
    )


def _log_wiring(model: TransducerModel) -> None:
    for stack, layers in (("encoder", model.encoder), ("decoder", model.decoder)):
        for i, layer in enumerate(layers):
            params = layer.parameters()
            log.info(
                "layer",
                name=f"{stack}.{i}",
                kind=layer.kind,
                trainable=[p.name for p in params if p.trainable],
                frozen=[p.name for p in params if not p.trainable],
            )


def _esn_layer_count(config: ModelConfig) -> int:
    return sum(1 for s in config.encoder_layers if s.kind == "esn")


def model_options(fn: Callable) -> Callable:
    """Флаги, общие для train и bench."""
    opts = [
        click.option("--vocab", type=int, default=16, show_default=True, help="Vocabulary size V (blank excluded)."),
        click.option("--feature-dim", type=int, default=16, show_default=True),
        click.option("--enc-dim", type=int, default=64, show_default=True),
        click.option("--dec-dim", type=int, default=64, show_default=True),
        click.option("--joint-dim", type=int, default=64, show_default=True),
        click.option("--layers", type=int, default=2, show_default=True, help="Layers per encoder / decoder stack."),
        click.option("--subsample", type=int, default=1, show_default=True, help="Frame stacking factor."),
        click.option("--trainable-position", type=click.Choice(["first", "last"]), default="first",
                     show_default=True, help="Where trainable encoder layers go in progressive-K."),
        click.option("--data-seed", type=int, default=0, show_default=True,
                     help="Seed of the synthetic corpus (token embeddings + examples)."),
        click.option("--train-size", type=int, default=5000, show_default=True),
        click.option("--batch-size", type=int, default=None, help="Defaults to ECHO_BATCH_SIZE."),
        click.option("--threads", type=int, default=None,
                     help="BLAS threads (applied by `python -m echo_asr` before numpy loads)."),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


# =============================================================================
# Group
# =============================================================================

@click.group()
@click.option("--log-level", default=None, help="Overrides ECHO_LOG_LEVEL for this run.")
def cli(log_level: Optional[str]) -> None:
    """Echo-state RNN-T experiments on a synthetic frames-to-tokens task."""
    if log_level:
        log.set_level(log_level)


# =============================================================================
# gen-data
# =============================================================================

@cli.command("gen-data")
@click.option("--seed", "data_seed", type=int, default=0, show_default=True)
@click.option("--vocab", type=int, default=16, show_default=True)
@click.option("--feature-dim", type=int, default=16, show_default=True)
@click.option("--frames-per-token", type=int, default=3, show_default=True)
@click.option("--noise", type=float, default=0.3, show_default=True)
@click.option("--train-size", type=int, default=5000, show_default=True)
@click.option("--test-size", type=int, default=500, show_default=True)
@click.option("--longform-k", type=int, default=10, show_default=True)
@click.option("--longform-examples", type=int, default=50, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), default=None)
@_handled
def cmd_gen_data(
    data_seed: int, vocab: int, feature_dim: int, frames_per_token: int, noise: float,
    train_size: int, test_size: int, longform_k: int, longform_examples: int, out: Optional[str],
) -> None:
    """Write train / test / long-form splits as JSON-lines."""
    out_dir = _out_dir(out, "data")
    base = dict(vocab_size=vocab, feature_dim=feature_dim, frames_per_token=frames_per_token,
                noise_sigma=noise, seed=data_seed)
    train_cfg = SynthConfig(num_examples=train_size, start_index=0, **base)
    test_cfg = SynthConfig(num_examples=test_size, start_index=train_size, **base)

    test = synth_generate(test_cfg)
    splits = {
        "train": synth_generate(train_cfg),
        "test": test,
        "longform": concat_longform(test, longform_examples, longform_k, derive_seed(data_seed, "longform")),
    }
    outputs = {}
    counts = {}
    for name, ds in splits.items():
        path = out_dir / f"{name}.jsonl"
        counts[name] = save_dataset(ds, path)
        outputs[name] = str(path)

    _write_config(out_dir, ExperimentConfig(
        command="gen-data", seed=data_seed, synth=train_cfg, longform_k=longform_k,
        longform_examples=longform_examples, outputs=outputs, extra={"test_size": test_size},
    ))
    _emit({"outputs": outputs, "counts": counts})


# =============================================================================
# train
# =============================================================================

@cli.command("train")
@click.option("--config", "preset", default="baseline", show_default=True,
              help="baseline | rnnt-e | rnnt-d | progressive-K")
@click.option("--seed", type=int, default=0, show_default=True, help="Model / batch-order seed.")
@click.option("--steps", type=int, default=2000, show_default=True)
@click.option("--optimizer", type=click.Choice(["sgd", "adam"]), default="adam", show_default=True)
@click.option("--lr", type=float, default=None, help="Defaults to ECHO_ADAM_LR.")
@click.option("--clip-norm", type=float, default=None, help="Defaults to ECHO_CLIP_NORM.")
@click.option("--data", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Train on a JSON-lines dataset instead of generating one.")
@click.option("--out", type=click.Path(file_okay=False), default=None)
@model_options
@_handled
def cmd_train(
    preset: str, seed: int, steps: int, optimizer: str, lr: Optional[float], clip_norm: Optional[float],
    data: Optional[str], out: Optional[str], vocab: int, feature_dim: int, enc_dim: int, dec_dim: int,
    joint_dim: int, layers: int, subsample: int, trainable_position: str, data_seed: int,
    train_size: int, batch_size: Optional[int], threads: Optional[int],
) -> None:
    """Train one configuration to a step budget; write model file + JSON-lines log."""
    if steps < 0:
        raise InvalidConfigError("--steps must be >= 0", steps=steps)
    out_dir = _out_dir(out, f"train-{preset}")
    batch_size = batch_size or settings.batch_size
    learning_rate = settings.adam_lr if lr is None else lr
    clip = settings.clip_norm if clip_norm is None else clip_norm

    synth = _synth(vocab, feature_dim, data_seed, train_size)
    dataset: List[Utterance] = load_dataset(data) if data else synth_generate(synth)

    config = _model_config(preset, vocab, feature_dim, enc_dim, dec_dim, joint_dim, layers,
                           subsample, seed, trainable_position)
    model = build_model(config)
    _log_wiring(model)
    log.info("training", config=preset, steps=steps, examples=len(dataset), batch_size=batch_size,
             gradient_tensors=count_gradient_tensors(model))

    opt = OptimizerState.create(model, optimizer, learning_rate)
    model_path = out_dir / MODEL_FILE
    log_path = out_dir / TRAIN_LOG
    exp = ExperimentConfig(
        command="train", seed=seed, preset=preset, model=config, synth=None if data else synth,
        steps=steps, batch_size=batch_size, optimizer=optimizer, learning_rate=learning_rate,  # type: ignore[arg-type]
        clip_norm=clip, outputs={"model": str(model_path), "log": str(log_path)},
        extra={"data": data, "data_seed": data_seed, "threads": threads or settings.math_threads},
    )
    _write_config(out_dir, exp)

    report = train_loop(model, iterate_batches(dataset, batch_size, derive_seed(seed, "batches")),
                        opt, steps, log_path=log_path, clip_norm=clip)
    nbytes = save_model(model, model_path)
    mean_ms, std_ms = report.wall_stats()
    _emit({
        "model": str(model_path),
        "bytes": nbytes,
        "steps": len(report.entries),
        "final_loss": report.entries[-1].loss if report.entries else None,
        "mean_step_ms": mean_ms,
        "std_step_ms": std_ms,
    })


# =============================================================================
# eval
# =============================================================================

def _fmt(v: Optional[float]) -> str:
    return "-" if v is None else f"{100.0 * v:.2f}"


def render_model_table(rows: Sequence[Dict[str, Any]]) -> str:
    header = f"{'Model':<16} {'Dec dim':>8} {'test':>8} {'longform':>9}"
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(f"{r['name']:<16} {r['dec_dim']:>8} {_fmt(r['wer'].get('test')):>8} "
                     f"{_fmt(r['wer'].get('longform')):>9}")
    return "\n".join(lines)


def render_progressive_table(rows: Sequence[Dict[str, Any]]) -> str:
    header = f"{'Num. ESN layers':<16} {'WER':>8}"
    lines = [header, "-" * len(header)]
    for r in sorted(rows, key=lambda r: -r["esn_encoder_layers"]):
        lines.append(f"{r['esn_encoder_layers']:<16} {_fmt(r['wer'].get('test')):>8}")
    return "\n".join(lines)


@cli.command("eval")
@click.argument("model_files", nargs=-1, required=True, type=click.Path(dir_okay=False))
@click.option("--data-seed", type=int, default=0, show_default=True)
@click.option("--train-size", type=int, default=5000, show_default=True,
              help="Held-out examples start after this many training examples.")
@click.option("--test-size", type=int, default=500, show_default=True)
@click.option("--train-eval-size", type=int, default=0, show_default=True,
              help="Also report WER on this many training examples.")
@click.option("--longform-k", type=int, default=10, show_default=True)
@click.option("--longform-examples", type=int, default=50, show_default=True)
@click.option("--max-symbols", type=int, default=None, help="Defaults to ECHO_MAX_SYMBOLS.")
@click.option("--out", type=click.Path(file_okay=False), default=None)
@_handled
def cmd_eval(
    model_files: Sequence[str], data_seed: int, train_size: int, test_size: int, train_eval_size: int,
    longform_k: int, longform_examples: int, max_symbols: Optional[int], out: Optional[str],
) -> None:
    """WER on test and long-form splits; several model files render a comparison grid."""
    out_dir = _out_dir(out, "eval")
    rows: List[Dict[str, Any]] = []
    for path in model_files:
        model = load_model(path)
        cfg = model.config
        splits: Dict[str, List[Utterance]] = {}
        test = synth_generate(_synth(cfg.vocab_size, cfg.feature_dim, data_seed, test_size, start_index=train_size))
        splits["test"] = test
        if longform_examples > 0:
            splits["longform"] = concat_longform(test, longform_examples, longform_k,
                                                 derive_seed(data_seed, "longform"))
        if train_eval_size > 0:
            splits["train"] = synth_generate(_synth(cfg.vocab_size, cfg.feature_dim, data_seed, train_eval_size))

        reports = [evaluate_wer(model, ds, name, max_symbols) for name, ds in splits.items()]
        for rep in reports:
            log.info("eval", model=cfg.name, split=rep.split, wer=rep.wer, utterances=rep.utterances)
        rows.append({
            "file": path,
            "name": cfg.name,
            "dec_dim": cfg.decoder_layers[-1].dim,
            "esn_encoder_layers": _esn_layer_count(cfg),
            "wer": {r.split: r.wer for r in reports},
            "splits": [r.model_dump() for r in reports],
        })

    tables = {"models": render_model_table(rows)}
    progressive = [r for r in rows if r["name"].startswith("progressive-")]
    if progressive:
        tables["progressive"] = render_progressive_table(progressive)

    report_path = out_dir / "eval_report.json"
    _write_config(out_dir, ExperimentConfig(
        command="eval", seed=data_seed, longform_k=longform_k, longform_examples=longform_examples,
        eval_seeds=[data_seed], outputs={"report": str(report_path)},
        extra={"models": list(model_files), "train_size": train_size, "test_size": test_size},
    ))
    _write_text(report_path, json.dumps({"models": rows}, indent=2))
    for text in tables.values():
        click.echo(text)
        click.echo("")


# =============================================================================
# bench
# =============================================================================

@cli.command("bench")
@click.option("--config", "preset", default="rnnt-d", show_default=True)
@click.option("--against", default="baseline", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--steps", type=int, default=100, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), default=None)
@model_options
@_handled
def cmd_bench(
    preset: str, against: str, seed: int, steps: int, out: Optional[str], vocab: int, feature_dim: int,
    enc_dim: int, dec_dim: int, joint_dim: int, layers: int, subsample: int, trainable_position: str,
    data_seed: int, train_size: int, batch_size: Optional[int], threads: Optional[int],
) -> None:
    """Mean / std train_step wall time of two configs on identical batches."""
    if steps < 1:
        raise InvalidConfigError("--steps must be >= 1", steps=steps)
    batch_size = batch_size or settings.batch_size
    dataset = synth_generate(_synth(vocab, feature_dim, data_seed, train_size))
    stream = iterate_batches(dataset, batch_size, derive_seed(seed, "batches"))
    batches = [next(stream) for _ in range(steps)]

    results = {}
    for name in (preset, against):
        model = build_model(_model_config(name, vocab, feature_dim, enc_dim, dec_dim, joint_dim, layers,
                                          subsample, seed, trainable_position))
        opt = OptimizerState.create(model, "adam")
        entries = [train_step(model, b, opt) for b in batches]
        walls = [e.wall_ms for e in entries]
        mean = sum(walls) / len(walls)
        std = (sum((w - mean) ** 2 for w in walls) / len(walls)) ** 0.5
        results[name] = {
            "mean_step_ms": mean,
            "std_step_ms": std,
            "updated_tensors": entries[-1].updated_tensors,
            "gradient_tensors": count_gradient_tensors(model),
            "trainable_scalars": sum(p.size for p in model.trainable_parameters()),
        }
        log.info("bench", config=name, mean_step_ms=mean, std_step_ms=std)

    ratio = results[preset]["mean_step_ms"] / results[against]["mean_step_ms"]
    payload = {"configs": results, "ratio": ratio, "steps": steps,
               "threads": threads or settings.math_threads}
    if out:
        out_dir = Path(out)
        _write_config(out_dir, ExperimentConfig(
            command="bench", seed=seed, preset=preset, steps=steps, batch_size=batch_size,
            outputs={"report": str(out_dir / "bench_report.json")},
            extra={"against": against, "data_seed": data_seed},
        ))
        _write_text(out_dir / "bench_report.json", json.dumps(payload, indent=2))
    _emit(payload)


# =============================================================================
# inspect
# =============================================================================

def summarize_model(model: TransducerModel, file_size: Optional[int] = None) -> Dict[str, Any]:
    params = model.parameters()
    layout = model_file_layout(model)
    return {
        "name": model.config.name,
        "tensors": [
            {"name": p.name, "shape": list(p.shape), "size": p.size,
             "tag": "trainable" if p.trainable else "frozen"}
            for p in params
        ],
        "totals": {
            "trainable": sum(p.size for p in params if p.trainable),
            "frozen": sum(p.size for p in params if not p.trainable),
        },
        "reservoirs": [
            {"name": name, "seed": layer.config.seed, "spectral_radius": spectral_radius(layer),
             "rho": float(layer.rho), "gamma": float(layer.gamma),
             "effective_radius": effective_radius(layer)}
            for name, layer in model.reservoirs()
        ],
        "file": {
            "header": layout.header,
            "esn_records": layout.esn_records,
            "tensors": layout.tensors,
            "crc": layout.crc,
            "total": layout.total,
            "actual": file_size,
        },
    }


@cli.command("inspect")
@click.argument("model_file", type=click.Path(dir_okay=False))
@click.option("--json", "as_json", is_flag=True, help="Print the summary as JSON.")
@_handled
def cmd_inspect(model_file: str, as_json: bool) -> None:
    """Per-tensor shapes, trainable/frozen tags, totals, file size decomposition, reservoir radii."""
    model = load_model(model_file)
    summary = summarize_model(model, Path(model_file).stat().st_size)
    if as_json:
        _emit(summary)
        return

    click.echo(f"model: {summary['name']}")
    for t in summary["tensors"]:
        click.echo(f"  {t['name']:<24} {str(tuple(t['shape'])):<14} {t['tag']:<9} {t['size']}")
    click.echo(f"trainable params: {summary['totals']['trainable']}")
    click.echo(f"frozen params:    {summary['totals']['frozen']}")
    for r in summary["reservoirs"]:
        click.echo(f"  {r['name']:<12} radius={r['spectral_radius']:.6f} rho={r['rho']:.6f} "
                   f"gamma={r['gamma']:.6f} effective={r['effective_radius']:.6f}")
    f = summary["file"]
    click.echo(f"file bytes: {f['actual']} (header {f['header']}, esn {sum(f['esn_records'].values())}, "
               f"tensors {sum(f['tensors'].values())}, crc {f['crc']})")
