"""Synthetic scenes drawn from the generative models, and evaluation metrics."""

import itertools
import time
from typing import Sequence

import numpy as np
from loguru import logger
from scipy.ndimage import gaussian_filter
from scipy.optimize import linear_sum_assignment

from jd_bss.core.exceptions import DomainError
from jd_bss.core.hermlinalg import herm
from jd_bss.core.schemas import (
    BenchmarkResult,
    FastFcaParams,
    FcaParams,
    FitConfig,
    SceneKind,
    Spectrogram,
    SyntheticScene,
)
from jd_bss.core.sigmodel import sample_covs, to_fca_params
from jd_bss.managers.estimator_manager import EstimatorManager, as_fca_params

MAX_CONDITION = 50.0
SDR_CAP_DB = 100.0
EXHAUSTIVE_MAX_SOURCES = 6
ENVELOPE_SPREAD = 1.5


def _cnormal(rng: np.random.Generator, *shape: int) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def _conditioned(rng: np.random.Generator, *shape: int) -> np.ndarray:
    """Random complex matrices whose singular values span at most ``MAX_CONDITION``."""
    u, _, vh = np.linalg.svd(_cnormal(rng, *shape), full_matrices=False)
    k = min(shape[-2:])
    sv = np.exp(rng.uniform(0.0, np.log(MAX_CONDITION), (*shape[:-2], k)))
    return (u * sv[..., None, :]) @ vh


def _envelopes(rng: np.random.Generator, shape: tuple[int, int, int], smoothness: float):
    # I N J, smoothed over frequency and time only
    z = gaussian_filter(rng.standard_normal(shape), sigma=(smoothness, 0.0, smoothness))
    z = (z - z.mean(axis=(0, 2), keepdims=True)) / np.maximum(
        z.std(axis=(0, 2), keepdims=True), 1e-12
    )
    return np.exp(ENVELOPE_SPREAD * z)


def synth_scene(
    kind: SceneKind,
    dim: int,
    n_sources: int,
    freq_bins: int,
    frames: int,
    seed: int = 0,
    smoothness: float = 2.0,
    frame_len: int | None = None,
) -> SyntheticScene:
    """
    Draw a synthetic scene.

    - ``jd_exact``: ``c_ijn ~ N_c(0, h_ijn W_i^-H Lambda_in W_i^-1)`` with random
      ``W_i`` (condition number <= 50) and log-uniform diagonal ``Lambda_in``.
    - ``fullrank``: free PD ``R_in`` that are not jointly diagonalizable.
    - ``instantaneous``: one frequency-independent mixing matrix ``A`` (M, N),
      ``c_ijn = a_n s_ijn``; requires ``N <= M``.

    Args:
        kind: Generative model
        dim: Number of channels M
        n_sources: Number of sources N
        freq_bins: Number of frequency bins I
        frames: Number of frames J
        seed: Random seed
        smoothness: Gaussian smoothing width of the log-envelopes
        frame_len: Frame length recorded on the spectrograms, if any

    Returns:
        SyntheticScene: Mixture, images and ground truth
    """
    if min(dim, n_sources, freq_bins, frames) < 1:
        raise DomainError("all scene dimensions must be >= 1")
    rng = np.random.default_rng(seed)
    powers = _envelopes(rng, (freq_bins, n_sources, frames), smoothness)  # I N J
    truth_fastfca = None
    mixing = None

    if kind == "jd_exact":
        decorr = _conditioned(rng, freq_bins, dim, dim)
        loadings = np.exp(rng.uniform(np.log(0.1), np.log(10.0), (freq_bins, dim, n_sources)))
        truth_fastfca = FastFcaParams(decorr=decorr, loadings=loadings, acts=powers)
        truth_fca = to_fca_params(truth_fastfca)
        s = _cnormal(rng, freq_bins, n_sources, dim, frames)
        scaled = np.sqrt(loadings.transpose(0, 2, 1)[..., None] * powers[:, :, None, :]) * s
        inv_h = herm(np.linalg.inv(decorr))  # W^-H
        images = np.einsum("ikl,inlj->nkij", inv_h, scaled)
    elif kind == "fullrank":
        b = _cnormal(rng, freq_bins, n_sources, dim, dim)
        scms = b @ herm(b) + 0.1 * np.eye(dim)
        scms = scms * dim / np.trace(scms, axis1=-2, axis2=-1).real[..., None, None]
        truth_fca = FcaParams(scms=scms, powers=powers.transpose(0, 2, 1))
        chol = np.linalg.cholesky(scms)
        s = _cnormal(rng, freq_bins, n_sources, dim, frames)
        images = np.einsum("inkl,inlj->nkij", chol, np.sqrt(powers[:, :, None, :]) * s)
    elif kind == "instantaneous":
        if n_sources > dim:
            raise DomainError(f"instantaneous scenes need N <= M, got N={n_sources}, M={dim}")
        mixing = _conditioned(rng, dim, n_sources)
        steer = np.broadcast_to(mixing.T, (freq_bins, n_sources, dim))
        scms = steer[..., :, None] * steer[..., None, :].conj()
        truth_fca = FcaParams(scms=scms, powers=powers.transpose(0, 2, 1))
        if n_sources == dim:
            unmix = herm(np.linalg.inv(mixing))  # W with W^H A = I
            truth_fastfca = FastFcaParams(
                decorr=np.broadcast_to(unmix, (freq_bins, dim, dim)).copy(),
                loadings=np.broadcast_to(np.eye(dim), (freq_bins, dim, dim)).copy(),
                acts=powers,
            )
        s = np.sqrt(powers) * _cnormal(rng, freq_bins, n_sources, frames)
        images = np.einsum("kn,inj->nkij", mixing, s)
    else:
        raise DomainError(f"Unsupported scene kind: {kind}")

    mixture = images.sum(axis=0)
    logger.debug(f"Synthesized {kind} scene: M={dim} N={n_sources} I={freq_bins} J={frames}")
    return SyntheticScene(
        kind=kind,
        seed=seed,
        mixture=Spectrogram(values=mixture, frame_len=frame_len),
        images=[Spectrogram(values=image, frame_len=frame_len) for image in images],
        truth_fca=truth_fca,
        truth_fastfca=truth_fastfca,
        mixing=mixing,
    )


def match_sources(cost: np.ndarray) -> np.ndarray:
    """
    Minimum-cost assignment of estimates to references.

    Args:
        cost: Square matrix, ``cost[e, r]`` for estimate ``e`` against reference ``r``

    Returns:
        np.ndarray: ``perm`` with estimate ``perm[r]`` assigned to reference ``r``
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise DomainError(f"cost must be a square matrix, got shape {cost.shape}")
    n = cost.shape[0]
    if n > EXHAUSTIVE_MAX_SOURCES:
        rows, cols = linear_sum_assignment(cost)
        perm = np.empty(n, dtype=int)
        perm[cols] = rows
        return perm

    refs = np.arange(n)
    best = min(itertools.permutations(range(n)), key=lambda p: cost[list(p), refs].sum())
    return np.array(best, dtype=int)


def _trace_normalized(scms: np.ndarray) -> np.ndarray:
    trace = np.trace(scms, axis1=-2, axis2=-1).real
    if np.any(np.abs(trace) <= 0):
        raise DomainError("cannot trace-normalize a zero-trace SCM")
    return scms / trace[..., None, None]


def scm_error(estimated: np.ndarray, truth: np.ndarray) -> float:
    """
    Mean squared Frobenius error between trace-normalized SCM sets.

    Sources are matched once for all frequencies.

    Args:
        estimated: SCMs (I, N, M, M)
        truth: SCMs (I, N, M, M)

    Returns:
        float: ``(1/IN) sum_in ||R_hat_in - R_in||_F^2``
    """
    estimated = np.asarray(estimated)
    truth = np.asarray(truth)
    if estimated.shape != truth.shape or estimated.ndim != 4:
        raise DomainError(f"SCM sets disagree: {estimated.shape} vs {truth.shape}")
    est = _trace_normalized(estimated)
    ref = _trace_normalized(truth)
    diff = est[:, :, None] - ref[:, None, :]  # I E R M M
    cost = (np.abs(diff) ** 2).sum(axis=(0, 3, 4))
    perm = match_sources(cost)
    n_freq, n_src = truth.shape[:2]
    return float(cost[perm, np.arange(n_src)].sum() / (n_freq * n_src))


def si_sdr(estimate: np.ndarray, reference: np.ndarray) -> float:
    """
    Scale-invariant SDR in dB, capped at ``SDR_CAP_DB``.

    Args:
        estimate: Estimated signal (waveform or spectrogram, any shape)
        reference: Reference of the same shape

    Returns:
        float: ``10 log10(||a s||^2 / ||x - a s||^2)`` with the least-squares ``a``
    """
    estimate = np.asarray(estimate).ravel()
    reference = np.asarray(reference).ravel()
    if estimate.shape != reference.shape:
        raise DomainError(f"length mismatch: {estimate.shape} vs {reference.shape}")
    ref_energy = np.vdot(reference, reference).real
    if ref_energy <= 0:
        raise DomainError("the reference signal is zero")
    alpha = np.vdot(reference, estimate) / ref_energy
    target = alpha * reference
    target_energy = np.vdot(target, target).real
    noise = estimate - target
    noise_energy = np.vdot(noise, noise).real
    if noise_energy <= target_energy * 10 ** (-SDR_CAP_DB / 10):
        return SDR_CAP_DB
    return float(10.0 * np.log10(target_energy / noise_energy))


def separation_scores(
    estimates: Sequence[np.ndarray], references: Sequence[np.ndarray]
) -> tuple[np.ndarray, np.ndarray]:
    """
    Per-reference SI-SDR after the best assignment of estimates.

    Returns:
        tuple: Scores (N,) in reference order and the permutation used
    """
    if len(estimates) != len(references):
        raise DomainError(f"{len(estimates)} estimates for {len(references)} references")
    sdr = np.array([[si_sdr(e, r) for r in references] for e in estimates])
    perm = match_sources(-sdr)
    return sdr[perm, np.arange(len(references))], perm


def scene_duration(scene: SyntheticScene, shift: int = 512, sample_rate: int = 16000) -> float:
    """Nominal audio duration of a scene: ``J * shift / sample_rate`` seconds."""
    return scene.mixture.frames * shift / sample_rate


def mixture_baseline(scene: SyntheticScene) -> float:
    """Mean SI-SDR of using the mixture itself as every source estimate."""
    mixture = scene.mixture.values
    return float(np.mean([si_sdr(mixture, image.values) for image in scene.images]))


def rtf_benchmark(
    method: str,
    scene: SyntheticScene,
    n_iter: int = 20,
    workers: int = 1,
    shift: int = 512,
    sample_rate: int = 16000,
    evaluate: bool = True,
) -> BenchmarkResult:
    """
    Time one estimator on a scene from the oracle initialization.

    Only the fit is timed. The real-time factor divides it by the nominal
    duration of the scene.

    Args:
        method: Estimator id
        scene: Synthetic scene
        n_iter: Number of iterations
        workers: Worker pool size, reported with the result
        shift: Frame shift used for the nominal duration
        sample_rate: Sample rate used for the nominal duration
        evaluate: Whether to also score separation and SCM error

    Returns:
        BenchmarkResult: Timing and optional quality figures
    """
    manager = EstimatorManager(
        FitConfig(method=method, n_sources=scene.n_sources, n_iter=n_iter, workers=workers)
    )
    covs = sample_covs(scene.mixture)
    init = manager.initialize(scene.mixture, images=scene.images)

    start = time.perf_counter()
    result = manager.fit(covs, init)
    wall = time.perf_counter() - start

    sdr_mean = None
    error = None
    if evaluate:
        estimates = manager.separate(scene.mixture, result.params)
        scores, _ = separation_scores(
            [image.values for image in estimates], [image.values for image in scene.images]
        )
        sdr_mean = float(np.mean(scores))
        error = scm_error(as_fca_params(result.params).scms, scene.truth_fca.scms)

    mixture = scene.mixture
    return BenchmarkResult(
        method=method,
        M=mixture.channels,
        N=scene.n_sources,
        I=mixture.freq_bins,
        J=mixture.frames,
        iters=n_iter,
        workers=workers,
        wall_seconds=wall,
        rtf=wall / scene_duration(scene, shift, sample_rate),
        per_iteration_ms=1000.0 * wall / max(n_iter, 1),
        nll_first=result.nll_trace[0],
        nll_last=result.nll_trace[-1],
        sdr_mean=sdr_mean,
        scm_error=error,
    )
