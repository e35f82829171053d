import pytest
from loguru import logger
from pydantic import ValidationError

from jd_bss.core.exceptions import UsageError
from jd_bss.utils.helpers import load_config, load_log_level
from jd_bss.utils.logger import get_logger, setup_logger


def test_defaults():
    config = load_config(n_sources=3)
    assert config.stft.frame_len == 1024 and config.stft.shift == 512
    assert config.stft.padded is True
    assert config.fit.method == "fastfca-mm"
    assert config.fit.n_iter == 20 and config.fit.block_size == 1
    assert config.fit.warm_start_iters == 10
    assert config.output.out_dir is None


def test_environment_and_overrides(monkeypatch):
    monkeypatch.setenv("JD_BSS_METHOD", "fca-em")
    monkeypatch.setenv("JD_BSS_SOURCES", "2")
    monkeypatch.setenv("JD_BSS_ITERS", "7")
    monkeypatch.setenv("JD_BSS_PADDED", "false")
    monkeypatch.setenv("JD_BSS_WARM_ITERS", "0")
    config = load_config(n_iter=None, seed=5)
    assert config.fit.method == "fca-em"
    assert config.fit.n_sources == 2
    assert config.fit.n_iter == 7
    assert config.fit.seed == 5
    assert config.stft.padded is False
    assert config.fit.warm_start_iters == 0
    assert load_config(method="ica").fit.method == "ica"


def test_missing_sources():
    with pytest.raises(UsageError):
        load_config()


def test_invalid_values_fail_validation():
    with pytest.raises(ValidationError):
        load_config(n_sources=2, method="nmf")
    with pytest.raises(ValidationError):
        load_config(n_sources=0)


def test_log_level(monkeypatch):
    assert load_log_level() == "INFO"
    monkeypatch.setenv("JD_BSS_LOG_LEVEL", "debug")
    assert load_log_level() == "DEBUG"
    assert load_log_level("warning") == "WARNING"


def test_logger_file_sink_and_binding(tmp_path):
    log_file = tmp_path / "run.log"
    setup_logger(level="DEBUG", log_file=str(log_file), colorize=False)
    messages = []
    logger.add(messages.append, format="{extra[component]}|{message}", level="INFO")
    get_logger("bench").info("rows written")
    logged = log_file.read_text()
    logger.remove()

    assert messages and messages[0].strip() == "bench|rows written"
    assert "rows written" in logged
