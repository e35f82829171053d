import numpy as np
import pytest

from jd_bss.core.exceptions import DomainError
from jd_bss.core.fastmnmf import (
    activations,
    fastmnmf_fit,
    fastmnmf_init_from_fastfca,
    fastmnmf_init_random,
    fastmnmf_nll,
    fastmnmf_separate,
    is_nmf,
    to_fastfca_params,
)
from jd_bss.core.hermlinalg import is_divergence
from jd_bss.core.sigmodel import fastfca_nll


def _is_cost(power, templates, weights):
    return float(np.sum(is_divergence(power, templates @ weights)))


def test_is_nmf_cost_decreases(rng):
    power = rng.uniform(0.1, 2.0, (12, 30))
    short = _is_cost(power, *is_nmf(power, 3, n_iter=1, seed=5))
    long = _is_cost(power, *is_nmf(power, 3, n_iter=60, seed=5))
    assert long < short


def test_is_nmf_batched_shapes(rng):
    templates, weights = is_nmf(rng.uniform(0.1, 1.0, (2, 8, 20)), 4, n_iter=5)
    assert templates.shape == (2, 8, 4)
    assert weights.shape == (2, 4, 20)
    assert np.all(templates > 0) and np.all(weights > 0)


def test_is_nmf_rejects_negative():
    with pytest.raises(DomainError):
        is_nmf(-np.ones((3, 3)), 2)


def test_random_init_is_normalized():
    params = fastmnmf_init_random(5, 20, 2, 3, n_components=2, seed=1)
    np.testing.assert_allclose(params.loadings.mean(axis=1), 1.0, rtol=1e-12)
    np.testing.assert_allclose(params.nmf.templates.mean(axis=1), 1.0, rtol=1e-12)
    assert activations(params.nmf).shape == (5, 3, 20)


def test_fastmnmf_fit_decreases_nll(jd_covs):
    init = fastmnmf_init_random(jd_covs.freq_bins, jd_covs.frames, 2, 2, seed=2)
    result = fastmnmf_fit(jd_covs, init, n_iter=15)
    assert result.method == "fastmnmf"
    trace = np.asarray(result.nll_trace)
    assert np.all(np.diff(trace) <= 1e-8 * np.abs(trace[:-1]))
    assert trace[-1] < trace[0]
    assert result.nll_trace[-1] == pytest.approx(fastmnmf_nll(jd_covs, result.params), rel=1e-10)


def test_nll_matches_fastfca_view(jd_covs):
    params = fastmnmf_init_random(jd_covs.freq_bins, jd_covs.frames, 2, 2, seed=3)
    assert fastmnmf_nll(jd_covs, params) == pytest.approx(
        fastfca_nll(jd_covs, to_fastfca_params(params)), rel=1e-12
    )


def test_fit_rejects_mismatched_frames(jd_covs):
    init = fastmnmf_init_random(jd_covs.freq_bins, jd_covs.frames + 1, 2, 2)
    with pytest.raises(DomainError):
        fastmnmf_fit(jd_covs, init)


def test_warm_start_from_fastfca(jd_scene):
    params = fastmnmf_init_from_fastfca(jd_scene.truth_fastfca, n_components=3, n_iter=10)
    assert params.nmf.templates.shape == (2, 6, 3)
    assert params.nmf.activations.shape == (2, 3, 60)
    np.testing.assert_array_equal(params.decorr, jd_scene.truth_fastfca.decorr)


def test_separation_sums_to_mixture(jd_scene):
    params = fastmnmf_init_random(6, 60, 2, 2, seed=4)
    images = fastmnmf_separate(jd_scene.mixture, params)
    scale = np.max(np.abs(jd_scene.mixture.values))
    np.testing.assert_allclose(
        sum(image.values for image in images), jd_scene.mixture.values, atol=1e-9 * scale
    )
