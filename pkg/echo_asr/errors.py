"""
Исключения echo_asr.

Каждая ошибка несёт:
- code: стабильная строка (попадает в JSON-отчёты CLI)
- exit_code: код возврата процесса
- details: безопасный dict с контекстом

Группы exit-кодов:
  2 - конфигурация / вход / численная постановка
  3 - расхождение обучения (non-finite loss)
  4 - ввод-вывод
  5 - повреждённый или несовместимый model file
"""

from __future__ import annotations

from typing import Any, Dict, Optional

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3
EXIT_IO = 4
EXIT_CORRUPTION = 5


class EchoError(Exception):
    code: str = "ECHO_ERROR"
    exit_code: int = EXIT_CONFIG

    def __init__(self, message: str, **details: Any):
        super().__init__(message)
        self.message = message
        self.details: Dict[str, Any] = details


# =============================================================================
# Конфигурация / вход
# =============================================================================

class ShapeError(EchoError):
    code = "SHAPE_MISMATCH"


class InvalidRangeError(EchoError):
    code = "INVALID_RANGE"


class InvalidConfigError(EchoError):
    code = "INVALID_CONFIG"


class EmptyInputError(EchoError):
    code = "EMPTY_INPUT"


class VocabError(EchoError):
    code = "VOCAB_RANGE"


class ContractViolationError(EchoError):
    """backward вызван с кэшем от другого forward / другой ячейки."""

    code = "STALE_CACHE"


class OracleTooLargeError(EchoError):
    code = "ORACLE_TOO_LARGE"


class InvalidReferenceError(EchoError):
    code = "INVALID_REFERENCE"


# =============================================================================
# Численные
# =============================================================================

class NonConvergenceError(EchoError):
    code = "NO_CONVERGENCE"

    def __init__(self, message: str, best_estimate: float, **details: Any):
        super().__init__(message, best_estimate=best_estimate, **details)
        self.best_estimate = best_estimate


class GenerationError(EchoError):
    code = "GENERATION_FAILED"


class SingularSystemError(EchoError):
    code = "SINGULAR_SYSTEM"


class DivergenceError(EchoError):
    """Non-finite loss. report - всё, что успели записать до остановки."""

    code = "DIVERGENCE"
    exit_code = EXIT_DIVERGENCE

    def __init__(self, message: str, report: Optional[Any] = None, **details: Any):
        super().__init__(message, **details)
        self.report = report


# =============================================================================
# Model file
# =============================================================================

class ModelIOError(EchoError):
    code = "IO_ERROR"
    exit_code = EXIT_IO


class CorruptModelError(EchoError):
    code = "CORRUPT_MODEL"
    exit_code = EXIT_CORRUPTION


class BadMagicError(CorruptModelError):
    code = "BAD_MAGIC"


class UnsupportedVersionError(CorruptModelError):
    code = "UNSUPPORTED_VERSION"


class ConfigInconsistencyError(CorruptModelError):
    code = "CONFIG_INCONSISTENT"


def error_payload(exc: EchoError) -> Dict[str, Any]:
    return {
        "error": {
            "code": exc.code,
            "message": exc.message,
            "details": {k: v for k, v in exc.details.items() if _jsonable(v)},
        }
    }


def _jsonable(v: Any) -> bool:
    return v is None or isinstance(v, (str, int, float, bool, list, dict))
