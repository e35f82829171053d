import numpy as np
import pytest

import jd_bss.core.fca as fca_module
from jd_bss.core.evalsynth import synth_scene
from jd_bss.core.exceptions import DomainError, NumericalError
from jd_bss.core.fca import (
    em_q_function,
    fca_em_step,
    fca_fit,
    fca_mm_step,
    fca_separate,
    mwf_filter,
    mwf_filters,
    posterior_moments,
)
from jd_bss.core.hermlinalg import herm, hermitize
from jd_bss.core.initialization import init_random
from jd_bss.core.schemas import FcaParams, SampleCovSet
from jd_bss.core.sigmodel import mixture_covs, sample_covs

from tests.conftest import random_hpd


def _assert_nonincreasing(trace, rtol=1e-8):
    trace = np.asarray(trace)
    steps = np.diff(trace)
    assert np.all(steps <= rtol * np.abs(trace[:-1])), steps


@pytest.fixture
def fca_setup(fullrank_scene):
    covs = sample_covs(fullrank_scene.mixture)
    init = init_random(covs.freq_bins, covs.frames, 2, 2, seed=7).fca
    return covs, init


@pytest.mark.parametrize("flavor", ["em", "mm"])
def test_fca_fit_decreases_nll(fca_setup, flavor):
    covs, init = fca_setup
    result = fca_fit(covs, init, n_iter=15, flavor=flavor)
    assert result.method == f"fca-{flavor}"
    assert len(result.nll_trace) == 16
    _assert_nonincreasing(result.nll_trace)
    assert result.nll_trace[-1] < result.nll_trace[0]


def test_fca_steps_keep_unit_trace(fca_setup):
    covs, init = fca_setup
    for step in (fca_em_step(covs, init), fca_mm_step(covs, init)):
        traces = np.trace(step.scms, axis1=-2, axis2=-1).real
        np.testing.assert_allclose(traces, step.dim, rtol=1e-10)
        assert np.all(step.powers > 0)


def test_em_step_decreases_q_function(fca_setup):
    covs, init = fca_setup
    psi = posterior_moments(covs, init)
    updated = fca_em_step(covs, init)
    assert em_q_function(psi, updated) <= em_q_function(psi, init) + 1e-9 * abs(
        em_q_function(psi, init)
    )


def test_wiener_filters_sum_to_identity(fca_setup):
    _, init = fca_setup
    filters, floored = mwf_filters(init)
    assert not floored
    total = filters.sum(axis=2)
    np.testing.assert_allclose(total, np.broadcast_to(np.eye(2), total.shape), atol=1e-10)


def test_single_filter_matches_batch(fca_setup):
    _, init = fca_setup
    filters, _ = mwf_filters(init)
    np.testing.assert_allclose(mwf_filter(init, 2, 7, 1), filters[2, 7, 1], atol=1e-12)


def test_single_source_filter_is_identity(rng):
    params = FcaParams(scms=random_hpd(rng, 3, 1, 2, 2), powers=np.ones((3, 4, 1)))
    np.testing.assert_allclose(mwf_filter(params, 0, 0, 0), np.eye(2), atol=1e-12)


def test_separated_images_sum_to_mixture(fullrank_scene, fca_setup):
    _, init = fca_setup
    images = fca_separate(fullrank_scene.mixture, init)
    assert len(images) == 2
    np.testing.assert_allclose(
        sum(image.values for image in images), fullrank_scene.mixture.values, atol=1e-9
    )


def test_block_parameters_separate_full_spectrogram(fullrank_scene):
    covs = sample_covs(fullrank_scene.mixture, block_size=4)
    init = init_random(covs.freq_bins, covs.frames, 2, 2, seed=1).fca
    images = fca_separate(fullrank_scene.mixture, init, block_size=4)
    assert images[0].values.shape == fullrank_scene.mixture.values.shape
    with pytest.raises(DomainError):
        fca_separate(fullrank_scene.mixture, init, block_size=3)


def test_fca_fit_rejects_bad_input(fca_setup):
    covs, init = fca_setup
    with pytest.raises(DomainError):
        fca_fit(covs, init, flavor="sgd")
    with pytest.raises(DomainError):
        fca_fit(covs, init.select(slice(0, 1)))


def _exact_model_covs(rng, freq_bins=3, frames=20, n_src=2, dim=3):
    scms = random_hpd(rng, freq_bins, n_src, dim, dim)
    scms = scms * dim / np.trace(scms, axis1=-2, axis2=-1).real[..., None, None]
    powers = np.exp(rng.uniform(-1.0, 1.0, (freq_bins, frames, n_src)))
    params = FcaParams(scms=scms, powers=powers)
    return SampleCovSet(mats=mixture_covs(scms, powers)), params


@pytest.mark.parametrize("step", [fca_em_step, fca_mm_step])
def test_exact_model_is_a_fixed_point(rng, step):
    covs, params = _exact_model_covs(rng)
    updated = step(covs, params)
    np.testing.assert_allclose(updated.powers, params.powers, rtol=1e-7)
    np.testing.assert_allclose(updated.scms, params.scms, atol=1e-7)


def test_mm_majorizer_bounds_the_mixture_inverse(rng):
    n_src, dim = 3, 3
    omegas = random_hpd(rng, n_src, dim, dim)
    total_inv = np.linalg.inv(omegas.sum(axis=0))

    def surrogate(gammas):
        return sum(herm(g) @ np.linalg.inv(o) @ g for g, o in zip(gammas, omegas))

    for _ in range(20):
        gammas = list(rng.standard_normal((n_src - 1, dim, dim)) + 0j)
        gammas.append(np.eye(dim) - sum(gammas))
        gap = hermitize(surrogate(gammas) - total_inv)
        assert np.linalg.eigvalsh(gap).min() >= -1e-10

    tight = [o @ total_inv for o in omegas]
    np.testing.assert_allclose(surrogate(tight), total_inv, atol=1e-10)


def test_mm_step_survives_near_singular_mixtures(rng):
    dim, frames = 2, 30
    steering = rng.standard_normal((2, dim)) + 1j * rng.standard_normal((2, dim))
    rank_one = steering[:, :, None] * np.conj(steering[:, None, :]) + 1e-10 * np.eye(dim)
    rank_one = rank_one * dim / np.trace(rank_one, axis1=-2, axis2=-1).real[:, None, None]
    scms = np.broadcast_to(rank_one, (2, 2, dim, dim)).copy()
    powers = np.ones((2, frames, 2))
    powers[..., 1] = 1e-9
    x = rng.standard_normal((2, frames, dim)) + 1j * rng.standard_normal((2, frames, dim))
    covs = SampleCovSet(mats=x[..., :, None] * np.conj(x[..., None, :]))

    updated = fca_mm_step(covs, FcaParams(scms=scms, powers=powers))
    assert np.all(np.isfinite(updated.scms)) and np.all(np.isfinite(updated.powers))
    assert np.all(updated.powers > 0)


def test_linalg_failure_becomes_numerical_error(fca_setup, monkeypatch):
    covs, init = fca_setup

    def broken(*args):
        raise np.linalg.LinAlgError("Matrix is not positive definite")

    monkeypatch.setattr(fca_module, "_mm_step", broken)
    with pytest.raises(NumericalError):
        fca_fit(covs, init, n_iter=2, flavor="mm")


@pytest.mark.slow
def test_mm_stays_finite_on_overcomplete_scene():
    scene = synth_scene("jd_exact", 3, 4, 64, 200, seed=2)
    covs = sample_covs(scene.mixture)
    init = init_random(covs.freq_bins, covs.frames, 3, 4, seed=2).fca
    result = fca_fit(covs, init, n_iter=100, flavor="mm")
    assert np.all(np.isfinite(result.nll_trace))
    _assert_nonincreasing(result.nll_trace, rtol=1e-6)
    assert result.nll_trace[-1] < result.nll_trace[0]
