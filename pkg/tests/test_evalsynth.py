import numpy as np
import pytest

from jd_bss.core.evalsynth import (
    SDR_CAP_DB,
    match_sources,
    mixture_baseline,
    rtf_benchmark,
    scene_duration,
    scm_error,
    separation_scores,
    si_sdr,
    synth_scene,
)
from jd_bss.core.exceptions import DomainError
from jd_bss.core.hermlinalg import herm


def test_si_sdr_reference_cases(rng):
    ref = rng.standard_normal(1000)
    assert si_sdr(ref, ref) == SDR_CAP_DB
    assert si_sdr(2.0 * ref, ref) == SDR_CAP_DB

    noise = rng.standard_normal(1000)
    noise -= np.dot(noise, ref) / np.dot(ref, ref) * ref
    noise *= np.linalg.norm(ref) / np.linalg.norm(noise)
    assert si_sdr(ref + noise, ref) == pytest.approx(0.0, abs=1e-9)


def test_si_sdr_complex_scale_invariance(rng):
    ref = rng.standard_normal(200) + 1j * rng.standard_normal(200)
    noisy = ref + 0.1 * (rng.standard_normal(200) + 1j * rng.standard_normal(200))
    assert si_sdr((0.3 - 2j) * noisy, ref) == pytest.approx(si_sdr(noisy, ref), rel=1e-9)


def test_si_sdr_rejects_bad_input():
    with pytest.raises(DomainError):
        si_sdr(np.ones(3), np.zeros(3))
    with pytest.raises(DomainError):
        si_sdr(np.ones(3), np.ones(4))


@pytest.mark.parametrize("n", [3, 8])
def test_match_sources_finds_best_assignment(rng, n):
    truth = rng.permutation(n)
    cost = np.ones((n, n))
    cost[truth, np.arange(n)] = 0.0
    np.testing.assert_array_equal(match_sources(cost), truth)


def test_separation_scores_reorders_estimates(rng):
    refs = [rng.standard_normal(500) for _ in range(2)]
    estimates = [refs[1] + 0.01 * rng.standard_normal(500), refs[0]]
    scores, perm = separation_scores(estimates, refs)
    np.testing.assert_array_equal(perm, [1, 0])
    assert scores[0] == SDR_CAP_DB
    assert 30.0 < scores[1] < SDR_CAP_DB


def test_scm_error_is_scale_and_order_invariant(jd_scene):
    truth = jd_scene.truth_fca.scms
    assert scm_error(truth, truth) == pytest.approx(0.0, abs=1e-20)
    shuffled = 3.0 * truth[:, ::-1]
    assert scm_error(shuffled, truth) == pytest.approx(0.0, abs=1e-20)
    with pytest.raises(DomainError):
        scm_error(truth[:, :1], truth)


def test_jd_exact_scene(jd_scene):
    assert jd_scene.n_sources == 2
    assert jd_scene.mixture.values.shape == (2, 6, 60)
    np.testing.assert_allclose(
        jd_scene.mixture.values, sum(image.values for image in jd_scene.images)
    )
    assert np.max(np.linalg.cond(jd_scene.truth_fastfca.decorr)) <= 50.0 + 1e-6


def test_instantaneous_scene_truth_unmixes():
    scene = synth_scene("instantaneous", 3, 3, 4, 20, seed=1)
    unmix = herm(scene.truth_fastfca.decorr) @ scene.mixing
    np.testing.assert_allclose(unmix, np.broadcast_to(np.eye(3), unmix.shape), atol=1e-10)
    assert synth_scene("instantaneous", 3, 2, 4, 20).truth_fastfca is None


def test_scene_rejects_bad_arguments():
    with pytest.raises(DomainError):
        synth_scene("instantaneous", 2, 3, 4, 20)
    with pytest.raises(DomainError):
        synth_scene("reverberant", 2, 2, 4, 20)
    with pytest.raises(DomainError):
        synth_scene("jd_exact", 2, 0, 4, 20)


def test_scene_is_deterministic():
    a = synth_scene("fullrank", 2, 2, 3, 10, seed=4)
    b = synth_scene("fullrank", 2, 2, 3, 10, seed=4)
    np.testing.assert_array_equal(a.mixture.values, b.mixture.values)


def test_scene_duration_and_baseline(jd_scene):
    assert scene_duration(jd_scene, 512, 16000) == pytest.approx(60 * 512 / 16000)
    assert np.isfinite(mixture_baseline(jd_scene))


@pytest.mark.parametrize("method", ["fca-em", "fastfca-mm", "ica", "fastmnmf"])
def test_rtf_benchmark_row(jd_scene, method):
    row = rtf_benchmark(method, jd_scene, n_iter=3)
    assert row.method == method
    assert (row.M, row.N, row.I, row.J) == (2, 2, 6, 60)
    assert row.rtf > 0 and row.per_iteration_ms > 0
    assert row.nll_last <= row.nll_first + 1e-8 * abs(row.nll_first)
    assert row.sdr_mean is not None and row.scm_error is not None

