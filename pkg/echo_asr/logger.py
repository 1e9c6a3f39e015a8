"""
Лог echo_asr: человекочитаемые строки в stderr, опционально файл в LOG_DIR.

    log.info("train step", step=12, loss=3.41, config="rnnt-d")
    2026-01-01 12:00:00 | INFO     | echo_asr | train step | step=12 loss=3.41 config='rnnt-d'

Контекст (kwargs) дописывается в сообщение и кладётся в record.extra.
numpy массивы в контексте сворачиваются до shape/dtype.
Машиночитаемый прогресс обучения пишет training.train_loop (JSON-lines), не лог.
"""

from __future__ import annotations

import logging
import os
import sys
from logging.handlers import TimedRotatingFileHandler
from pathlib import Path
from typing import Any, Dict, MutableMapping, Optional, Tuple

import numpy as np

from echo_asr.settings import settings

FMT = "%(asctime)s | %(levelname)-8s | %(name)s | %(message)s"
DATEFMT = "%Y-%m-%d %H:%M:%S"

_STD_KWARGS = {"exc_info", "stack_info", "stacklevel", "extra"}
_RECORD_ATTRS = set(vars(logging.makeLogRecord({}))) | {"message", "asctime"}


class ColorFormatter(logging.Formatter):
    COLORS = {
        logging.DEBUG: "\033[94m",
        logging.INFO: "\033[92m",
        logging.WARNING: "\033[93m",
        logging.ERROR: "\033[91m",
        logging.CRITICAL: "\033[95m",
    }
    RESET = "\033[0m"

    def format(self, record: logging.LogRecord) -> str:
        plain = record.levelname
        record.levelname = f"{self.COLORS.get(record.levelno, '')}{plain:<8}{self.RESET}"
        try:
            return super().format(record)
        finally:
            record.levelname = plain


def _render(v: Any) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6g}"
    if isinstance(v, np.ndarray):
        return f"<{v.dtype} {tuple(v.shape)}>" if v.ndim else f"{v.item():.6g}"
    if isinstance(v, (list, tuple)) and len(v) > 8:
        return f"[{', '.join(map(repr, v[:8]))}, ... +{len(v) - 8}]"
    return repr(v)


class EchoLogger(logging.LoggerAdapter):
    """LoggerAdapter со "структурными kwargs": всё, что не kwargs logging, уходит в контекст."""

    def __init__(self, name: str, log_dir: Optional[str] = None, retention_days: int = 10):
        logger = logging.getLogger(name)
        super().__init__(logger, {})
        logger.setLevel(settings.log_level.upper())

        # повторный импорт не должен плодить хендлеры
        if getattr(logger, "_configured_by_echo", False):
            return
        console = logging.StreamHandler(stream=sys.stderr)
        console.setFormatter(ColorFormatter(FMT, DATEFMT) if sys.stderr.isatty() else logging.Formatter(FMT, DATEFMT))
        logger.addHandler(console)

        target = log_dir or os.getenv("LOG_DIR")
        if target:
            path = Path(target).expanduser().resolve()
            path.mkdir(parents=True, exist_ok=True)
            fh = TimedRotatingFileHandler(str(path / f"{name}.log"), when="midnight",
                                          backupCount=retention_days, encoding="utf-8", delay=True)
            fh.setFormatter(logging.Formatter(FMT, DATEFMT))
            logger.addHandler(fh)

        logger.propagate = False
        logger._configured_by_echo = True  # type: ignore[attr-defined]

    def set_level(self, level: str) -> None:
        self.logger.setLevel(level.upper())

    def log(self, level: int, msg: Any, *args: Any, **kwargs: Any) -> None:
        std, ctx = _split(kwargs)
        if ctx:
            extra = dict(std.get("extra") or {})
            extra.update({(f"ctx_{k}" if k in _RECORD_ATTRS or k.startswith("_") else k): v
                          for k, v in ctx.items()})
            std["extra"] = extra
            msg = f"{msg} | " + " ".join(f"{k}={_render(v)}" for k, v in ctx.items())
        super().log(level, msg, *args, **std)

    def process(self, msg: Any, kwargs: MutableMapping[str, Any]) -> Tuple[Any, MutableMapping[str, Any]]:
        return msg, kwargs

    def debug(self, msg: Any, *args: Any, **kwargs: Any) -> None:
        self.log(logging.DEBUG, msg, *args, **kwargs)

    def info(self, msg: Any, *args: Any, **kwargs: Any) -> None:
        self.log(logging.INFO, msg, *args, **kwargs)

    def warning(self, msg: Any, *args: Any, **kwargs: Any) -> None:
        self.log(logging.WARNING, msg, *args, **kwargs)

    def error(self, msg: Any, *args: Any, **kwargs: Any) -> None:
        self.log(logging.ERROR, msg, *args, **kwargs)


def _split(kwargs: Dict[str, Any]) -> Tuple[Dict[str, Any], Dict[str, Any]]:
    std = {k: v for k, v in kwargs.items() if k in _STD_KWARGS}
    ctx = {k: v for k, v in kwargs.items() if k not in _STD_KWARGS}
    return std, ctx


log = EchoLogger("echo_asr")
