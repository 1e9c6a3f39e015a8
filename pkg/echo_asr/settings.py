# echo_asr/settings.py
from __future__ import annotations

from typing import Literal

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class EchoSettings(BaseSettings):
    """
    ЕДИНСТВЕННЫЙ источник runtime-конфигурации для echo_asr.

    Загружается из:
      1) переменных окружения
      2) .env (если существует)

    Флаги CLI перекрывают эти значения на один запуск.
    Все имена env-переменных задаются через alias=...
    """

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
        populate_by_name=True,
    )

    # -----------------------------------------------------------------------------
    # 📁 Outputs
    # -----------------------------------------------------------------------------
    runs_dir: str = Field(default="runs", alias="ECHO_RUNS_DIR")
    """
    Каталог по умолчанию для model files, JSON-lines логов и resolved config.
    """

    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"] = Field(default="INFO", alias="ECHO_LOG_LEVEL")
    """
    Уровень консольного лога. Регистр не важен: "debug" == "DEBUG".
    """

    log_every: int = Field(default=50, alias="ECHO_LOG_EVERY")
    """
    Как часто (в шагах) печатать прогресс обучения в консоль.
    JSON-lines лог пишется на каждом шаге независимо от этого.
    """

    # -----------------------------------------------------------------------------
    # 🧮 Math
    # -----------------------------------------------------------------------------
    math_threads: int = Field(default=1, alias="ECHO_MATH_THREADS")
    """
    Потоки BLAS. bench сравнивает конфигурации честно только в одном потоке.
    """

    spectral_max_iters: int = Field(default=5000, alias="ECHO_SPECTRAL_MAX_ITERS")
    spectral_tol: float = Field(default=1e-12, alias="ECHO_SPECTRAL_TOL")

    # -----------------------------------------------------------------------------
    # 🏋️ Training
    # -----------------------------------------------------------------------------
    batch_size: int = Field(default=8, alias="ECHO_BATCH_SIZE")
    clip_norm: float = Field(default=5.0, alias="ECHO_CLIP_NORM")

    adam_lr: float = Field(default=1e-3, alias="ECHO_ADAM_LR")
    adam_beta1: float = Field(default=0.9, alias="ECHO_ADAM_BETA1")
    adam_beta2: float = Field(default=0.999, alias="ECHO_ADAM_BETA2")
    adam_eps: float = Field(default=1e-8, alias="ECHO_ADAM_EPS")

    # -----------------------------------------------------------------------------
    # 🔤 Decoding
    # -----------------------------------------------------------------------------
    max_symbols_per_frame: int = Field(default=4, alias="ECHO_MAX_SYMBOLS")

    @field_validator("log_level", mode="before")
    @classmethod
    def _upper_level(cls, v: object) -> object:
        return v.upper() if isinstance(v, str) else v


# ----------------------------------------------------------------------
# singleton settings
# ----------------------------------------------------------------------
settings = EchoSettings()
