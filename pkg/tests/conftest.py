"""Shared fixtures for the jd-bss test suite."""

import numpy as np
import pytest
from loguru import logger

from jd_bss.core.evalsynth import synth_scene
from jd_bss.core.sigmodel import sample_covs

ENV_VARS = (
    "JD_BSS_FRAME",
    "JD_BSS_SHIFT",
    "JD_BSS_SAMPLE_RATE",
    "JD_BSS_PADDED",
    "JD_BSS_METHOD",
    "JD_BSS_ITERS",
    "JD_BSS_INIT",
    "JD_BSS_BLOCK",
    "JD_BSS_SEED",
    "JD_BSS_COMPONENTS",
    "JD_BSS_JD_PAIR",
    "JD_BSS_CHUNK",
    "JD_BSS_WARM_ITERS",
    "JD_BSS_OUT_DIR",
    "JD_BSS_DOWNMIX",
    "JD_BSS_LOG_LEVEL",
    "JD_BSS_SOURCES",
    "JD_BSS_WORKERS",
)


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for name in ENV_VARS:
        monkeypatch.delenv(name, raising=False)


@pytest.fixture(autouse=True)
def quiet_logger():
    logger.remove()
    yield
    logger.remove()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_hpd(rng: np.random.Generator, *shape: int) -> np.ndarray:
    """Random well-conditioned Hermitian PD matrices of shape (*batch, M, M)."""
    m = shape[-1]
    b = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return b @ np.conj(np.swapaxes(b, -1, -2)) / m + 0.5 * np.eye(m)


@pytest.fixture
def jd_scene():
    return synth_scene("jd_exact", 2, 2, 6, 60, seed=3)


@pytest.fixture
def jd_covs(jd_scene):
    return sample_covs(jd_scene.mixture)


@pytest.fixture
def fullrank_scene():
    return synth_scene("fullrank", 2, 2, 4, 50, seed=5)
