import numpy as np
import pytest

from jd_bss.core.evalsynth import synth_scene
from jd_bss.core.exceptions import DomainError
from jd_bss.core.fastfca import ajd_cost
from jd_bss.core.hermlinalg import herm, is_divergence
from jd_bss.core.initialization import init_random
from jd_bss.core.schemas import FastFcaParams, Spectrogram
from jd_bss.core.sigmodel import (
    data_constant,
    decorrelated_stats,
    fastfca_nll,
    fca_nll,
    reconstruct_scms,
    sample_covs,
    to_fca_params,
)


def test_sample_covs_blocks_with_partial_tail(rng):
    values = rng.standard_normal((2, 3, 5)) + 1j * rng.standard_normal((2, 3, 5))
    spec = Spectrogram(values=values)
    covs = sample_covs(spec, block_size=2)
    assert covs.mats.shape == (3, 3, 2, 2)
    assert covs.block_size == 2

    x = values.transpose(1, 2, 0)
    outer = x[..., :, None] * x[..., None, :].conj()
    first = outer[:, :2].mean(axis=1)
    last = outer[:, 4]
    np.testing.assert_allclose(covs.mats[:, 0], first, atol=1e-12)
    np.testing.assert_allclose(covs.mats[:, 2], last, atol=1e-12)


def test_sample_covs_rejects_bad_block(jd_scene):
    with pytest.raises(DomainError):
        sample_covs(jd_scene.mixture, block_size=0)


def test_full_rank_view_has_equal_nll(jd_scene, jd_covs):
    params = jd_scene.truth_fastfca
    assert fca_nll(jd_covs, to_fca_params(params)) == pytest.approx(
        fastfca_nll(jd_covs, params), rel=1e-9
    )


def test_nll_decomposes_into_ajd_and_is_terms():
    scene = synth_scene("jd_exact", 2, 2, 4, 40, seed=11)
    covs = sample_covs(scene.mixture, block_size=4)
    init = init_random(4, covs.frames, 2, 2, seed=2).fastfca
    stats = decorrelated_stats(covs, init)
    decomposed = (
        ajd_cost(init.decorr, covs.mats)
        + float(np.sum(is_divergence(stats.powers, stats.mix_vars)))
        + data_constant(covs)
    )
    assert fastfca_nll(covs, init) == pytest.approx(decomposed, rel=1e-8)


def test_reconstructed_scms_are_jointly_diagonalized(jd_scene):
    params = jd_scene.truth_fastfca
    scms = reconstruct_scms(params.decorr, params.loadings)
    np.testing.assert_allclose(scms, herm(scms), atol=1e-12)
    projected = herm(params.decorr)[:, None] @ scms @ params.decorr[:, None]
    expected = np.einsum("imn,mk->inmk", params.loadings, np.eye(params.dim))
    np.testing.assert_allclose(projected, expected, atol=1e-8 * np.max(params.loadings))


def test_nll_shape_mismatch(jd_scene, jd_covs):
    params = jd_scene.truth_fastfca.select(slice(0, 2))
    with pytest.raises(DomainError):
        fastfca_nll(jd_covs, params)
    with pytest.raises(DomainError):
        fca_nll(jd_covs, to_fca_params(params))


def test_fastfca_nll_ignores_column_scaling_of_w(jd_covs, rng):
    params = init_random(jd_covs.freq_bins, jd_covs.frames, 2, 2, seed=6).fastfca
    scale = rng.uniform(0.2, 5.0, (jd_covs.freq_bins, 2)) * np.exp(
        1j * rng.uniform(-np.pi, np.pi, (jd_covs.freq_bins, 2))
    )
    rescaled = FastFcaParams(
        decorr=params.decorr * scale[:, None, :],
        loadings=params.loadings * np.abs(scale[:, :, None]) ** 2,
        acts=params.acts,
    )
    assert fastfca_nll(jd_covs, rescaled) == pytest.approx(fastfca_nll(jd_covs, params), rel=1e-10)
