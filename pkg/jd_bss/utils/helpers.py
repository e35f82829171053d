"""Helper utilities for jd-bss."""

import os
from typing import Any, Dict

from dotenv import load_dotenv

from jd_bss.core.exceptions import UsageError
from jd_bss.core.schemas import FitConfig, OutputConfig, SeparationConfig, StftConfig

STFT_KEYS = ("frame_len", "shift", "sample_rate", "padded")
FIT_KEYS = (
    "method",
    "n_sources",
    "n_iter",
    "init",
    "block_size",
    "seed",
    "n_components",
    "use_updated_h",
    "jd_pair",
    "workers",
    "chunk_size",
    "warm_start_iters",
)
OUTPUT_KEYS = ("out_dir", "downmix")


def _env_bool(name: str, default: str) -> bool:
    return os.getenv(name, default).strip().lower() in ("1", "true", "yes", "on")


def _env_values() -> Dict[str, Any]:
    values: Dict[str, Any] = {
        "frame_len": int(os.getenv("JD_BSS_FRAME", "1024")),
        "shift": int(os.getenv("JD_BSS_SHIFT", "512")),
        "sample_rate": int(os.getenv("JD_BSS_SAMPLE_RATE", "16000")),
        "padded": _env_bool("JD_BSS_PADDED", "true"),
        "method": os.getenv("JD_BSS_METHOD", "fastfca-mm"),
        "n_iter": int(os.getenv("JD_BSS_ITERS", "20")),
        "init": os.getenv("JD_BSS_INIT", "cluster"),
        "block_size": int(os.getenv("JD_BSS_BLOCK", "1")),
        "seed": int(os.getenv("JD_BSS_SEED", "0")),
        "n_components": int(os.getenv("JD_BSS_COMPONENTS", "2")),
        "jd_pair": os.getenv("JD_BSS_JD_PAIR", "pair_sum"),
        "chunk_size": int(os.getenv("JD_BSS_CHUNK", "16")),
        "warm_start_iters": int(os.getenv("JD_BSS_WARM_ITERS", "10")),
        "out_dir": os.getenv("JD_BSS_OUT_DIR"),
        "downmix": _env_bool("JD_BSS_DOWNMIX", "false"),
        "log_level": os.getenv("JD_BSS_LOG_LEVEL", "INFO"),
    }
    if os.getenv("JD_BSS_SOURCES"):
        values["n_sources"] = int(os.environ["JD_BSS_SOURCES"])
    if os.getenv("JD_BSS_WORKERS"):
        values["workers"] = int(os.environ["JD_BSS_WORKERS"])
    return values


def load_config(**overrides: Any) -> SeparationConfig:
    """
    Load configuration from environment variables.

    Keyword overrides (e.g. from command-line flags) win over the
    environment; ``None`` overrides are ignored.

    Returns:
        SeparationConfig: STFT, estimator and output configuration
    """
    load_dotenv()

    values = _env_values()
    values.update({key: value for key, value in overrides.items() if value is not None})
    if "n_sources" not in values:
        raise UsageError("the number of sources is required (--sources or JD_BSS_SOURCES)")

    return SeparationConfig(
        stft=StftConfig(**{key: values[key] for key in STFT_KEYS}),
        fit=FitConfig(**{key: values[key] for key in FIT_KEYS if key in values}),
        output=OutputConfig(**{key: values[key] for key in OUTPUT_KEYS}),
        log_level=values["log_level"],
    )


def load_log_level(level: str | None = None) -> str:
    """The logging level from an explicit value, ``JD_BSS_LOG_LEVEL`` or INFO."""
    load_dotenv()
    return (level or os.getenv("JD_BSS_LOG_LEVEL", "INFO")).upper()
