"""
python -m echo_asr <command>

BLAS читает число потоков один раз при загрузке numpy, поэтому переменные
выставляются здесь, до импорта cli.
"""

from __future__ import annotations

import json
import os
import sys

from pydantic import ValidationError

from echo_asr.errors import EXIT_CONFIG, InvalidConfigError, error_payload

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "VECLIB_MAXIMUM_THREADS")


def _requested_threads(argv: list[str], default: int) -> int:
    for i, arg in enumerate(argv):
        if arg == "--threads" and i + 1 < len(argv):
            return int(argv[i + 1])
        if arg.startswith("--threads="):
            return int(arg.split("=", 1)[1])
    return default


def main() -> None:
    try:
        from echo_asr.settings import settings
    except ValidationError as e:
        err = InvalidConfigError("invalid environment settings",
                                 errors=[f"{'.'.join(map(str, x['loc']))}: {x['msg']}" for x in e.errors()])
        print(json.dumps(error_payload(err), ensure_ascii=False))
        sys.exit(EXIT_CONFIG)

    threads = _requested_threads(sys.argv[1:], settings.math_threads)
    for var in _THREAD_VARS:
        os.environ.setdefault(var, str(threads))

    from echo_asr.cli import cli

    cli(prog_name="echo_asr")


if __name__ == "__main__":
    main()
