"""FastFCA: jointly-diagonalizable spatial covariances.

``W_i`` is updated by iterative projection (IP) and the diagonal loadings
``L_i`` and activations ``H_i`` by IS-NMF style EM or MM updates. Every
frequency is independent, so all functions here are batched over the leading
frequency axis and can be run on any subset of bins.
"""

import time
from typing import Literal

import numpy as np
from loguru import logger
from scipy.optimize import linear_sum_assignment

from jd_bss.core.exceptions import DomainError, SingularMatrixError
from jd_bss.core.hermlinalg import JD_MAX_CONDITION, herm, logdet_divergence
from jd_bss.core.schemas import FastFcaParams, FitResult, SampleCovSet, Spectrogram
from jd_bss.core.sigmodel import (
    decorrelated_powers,
    fastfca_nll_arrays,
    model_variances,
    positive_floor,
    sample_covs,
    to_fca_params,
)

RESTART_SCALE = 1e-8

__all__ = [
    "weighted_covs",
    "ip_update_w",
    "em_update_lh",
    "mm_update_lh",
    "normalize_scale",
    "fastfca_fit",
    "fastfca_mwf",
    "fastfca_separate",
    "decomposed_separate",
    "expand_acts",
    "ajd_cost",
    "ica_mode_fit",
    "piecewise_prepare",
    "align_permutations",
    "permute_sources",
    "to_fca_params",
]


def weighted_covs(covs: np.ndarray, sigma2: np.ndarray) -> np.ndarray:
    """``Q_im = (1/J) sum_j Xhat_ij / sigma2_imj`` of shape (I, M, M, M)."""
    n_frames = covs.shape[1]
    return np.einsum("ijkl,imj->imkl", covs, 1.0 / sigma2) / n_frames


def _column_system(decorr: np.ndarray, q: np.ndarray, m: int, rng: np.random.Generator):
    system = herm(decorr) @ q
    cond = np.linalg.cond(system)
    bad = ~np.isfinite(cond) | (cond > JD_MAX_CONDITION)
    if not bad.any():
        return decorr, system

    logger.warning(f"Restarting column {m} of W at {int(bad.sum())} frequencies")
    decorr = decorr.copy()
    scale = np.linalg.norm(decorr[bad], axis=(-2, -1), keepdims=True)
    scale = np.where(scale > 0, scale, 1.0)
    noise = rng.standard_normal(decorr[bad].shape) + 1j * rng.standard_normal(decorr[bad].shape)
    decorr[bad] = decorr[bad] + RESTART_SCALE * scale * noise
    system = herm(decorr) @ q
    cond = np.linalg.cond(system)
    if np.any(~np.isfinite(cond) | (cond > JD_MAX_CONDITION)):
        raise SingularMatrixError(f"W^H Q_{m} stays singular after restart", float(np.max(cond)))
    return decorr, system


def ip_update_w(
    covs: np.ndarray,
    decorr: np.ndarray,
    sigma2: np.ndarray,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """
    One iterative-projection sweep over the columns of ``W``.

    For ``m = 1..M``: ``w_m <- (W^H Q_m)^-1 e_m``, then
    ``w_m <- w_m / sqrt(w_m^H Q_m w_m)``. Each column uses the partially
    updated ``W``.

    Args:
        covs: Observation covariances (I, J, M, M)
        decorr: Current decorrelation matrices (I, M, M)
        sigma2: Model variances (I, M, J), held fixed during the sweep
        rng: Generator for column restarts

    Returns:
        np.ndarray: Updated decorrelation matrices
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    q = weighted_covs(covs, positive_floor(sigma2))
    n_freq, m_dim, _ = decorr.shape
    decorr = np.array(decorr, dtype=complex)
    eye = np.eye(m_dim)
    for m in range(m_dim):
        qm = q[:, m]
        decorr, system = _column_system(decorr, qm, m, rng)
        rhs = np.broadcast_to(eye[:, m, None], (n_freq, m_dim, 1))
        col = np.linalg.solve(system, rhs)[..., 0]
        norm = np.einsum("ik,ikl,il->i", col.conj(), qm, col).real
        decorr[:, :, m] = col / np.sqrt(norm)[:, None]
    return decorr


def em_update_lh(
    powers: np.ndarray, loadings: np.ndarray, acts: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """
    EM update of the loadings and activations, source by source.

    For each ``n`` the gains ``G_n = L_n H_n / (LH)`` and posterior powers
    ``Phi_n = G_n^2 U + (1 - G_n) L_n H_n`` come from the current factors,
    then ``L_n <- (1/J) Phi_n / H_n`` and ``H_n <- (1/M) Phi_n / L_n``.

    Args:
        powers: Decorrelated powers U (I, M, J)
        loadings: L (I, M, N)
        acts: H (I, N, J)

    Returns:
        tuple: Updated (L, H)
    """
    loadings = loadings.copy()
    acts = acts.copy()
    for n in range(loadings.shape[-1]):
        part = loadings[:, :, n, None] * acts[:, None, n, :]
        gain = part / positive_floor(loadings @ acts)
        phi = gain**2 * powers + (1.0 - gain) * part
        loadings[:, :, n] = positive_floor((phi / acts[:, None, n, :]).mean(axis=-1), loadings)
        acts[:, n, :] = positive_floor((phi / loadings[:, :, n, None]).mean(axis=1), acts)
    return loadings, acts


def mm_update_lh(
    powers: np.ndarray, loadings: np.ndarray, acts: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """
    MM update: ``L <- L sqrt([U (LH)^-2] H^T / [(LH)^-1 H^T])``, then the
    same rule for ``H`` with the updated ``L``.
    """
    sigma2 = positive_floor(loadings @ acts)
    num = (powers / sigma2**2) @ np.swapaxes(acts, -1, -2)
    den = (1.0 / sigma2) @ np.swapaxes(acts, -1, -2)
    loadings = positive_floor(loadings * np.sqrt(num / den), loadings)

    sigma2 = positive_floor(loadings @ acts)
    trans = np.swapaxes(loadings, -1, -2)
    num = trans @ (powers / sigma2**2)
    den = trans @ (1.0 / sigma2)
    acts = positive_floor(acts * np.sqrt(num / den), acts)
    return loadings, acts


def normalize_scale(params: FastFcaParams) -> FastFcaParams:
    """Move the mean of every row of ``H_i`` into the matching column of ``L_i``."""
    loadings, acts = _balance(params.loadings, params.acts)
    return FastFcaParams(decorr=params.decorr, loadings=loadings, acts=acts)


def _balance(loadings: np.ndarray, acts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = acts.mean(axis=-1)  # I N
    return loadings * mean[:, None, :], acts / mean[..., None]


def fastfca_fit(
    covs: SampleCovSet,
    init: FastFcaParams,
    n_iter: int = 20,
    flavor: Literal["ip_em", "ip_mm"] = "ip_mm",
    seed: int = 0,
) -> FitResult:
    """
    Run FastFCA for a fixed number of iterations.

    Each iteration runs an IP sweep with ``sigma2 = LH``, recomputes the
    decorrelated powers, updates ``L`` and ``H`` with the chosen flavor and
    rebalances the scale between them.

    Args:
        covs: Observation (or block) covariances
        init: Initial parameters
        n_iter: Number of iterations
        flavor: "ip_em" or "ip_mm"
        seed: Seed for column restarts

    Returns:
        FitResult: Final parameters and the NLL trace (init value first)
    """
    if flavor not in ("ip_em", "ip_mm"):
        raise DomainError(f"Unsupported FastFCA flavor: {flavor}")
    if covs.freq_bins != init.freq_bins or covs.frames != init.frames:
        raise DomainError(
            f"covariances {covs.mats.shape} do not match parameters with "
            f"{init.freq_bins} bins and {init.frames} frames"
        )

    update_lh = em_update_lh if flavor == "ip_em" else mm_update_lh
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    decorr, loadings, acts = init.decorr.copy(), init.loadings.copy(), init.acts.copy()
    trace = [fastfca_nll_arrays(covs.mats, decorr, loadings, acts)]
    for it in range(n_iter):
        decorr = ip_update_w(covs.mats, decorr, model_variances(loadings, acts), rng)
        powers = decorrelated_powers(covs.mats, decorr)
        loadings, acts = update_lh(powers, loadings, acts)
        loadings, acts = _balance(loadings, acts)
        trace.append(fastfca_nll_arrays(covs.mats, decorr, loadings, acts))
        logger.debug(f"FastFCA-{flavor} iteration {it + 1}: nll={trace[-1]:.6f}")

    method = "fastfca-em" if flavor == "ip_em" else "fastfca-mm"
    return FitResult(
        method=method,
        params=FastFcaParams(decorr=decorr, loadings=loadings, acts=acts),
        nll_trace=trace,
        elapsed=time.perf_counter() - start,
    )


def fastfca_mwf(params: FastFcaParams, i: int, j: int, n: int) -> np.ndarray:
    """
    The Wiener filter ``W^-H diag(h_n lambda_n / sum_v h_v lambda_v) W^H``
    of source ``n`` at frequency ``i`` and frame ``j``.
    """
    decorr = params.decorr[i]
    parts = params.loadings[i] * params.acts[i, :, j]  # M N
    gains = parts[:, n] / np.maximum(parts.sum(axis=1), np.finfo(float).tiny)
    return np.linalg.solve(herm(decorr), np.diag(gains) @ herm(decorr))


def expand_acts(acts: np.ndarray, n_frames: int, block_size: int) -> np.ndarray:
    """Repeat per-block activations over the frames of each block."""
    if acts.shape[-1] == n_frames:
        return acts
    expected = -(-n_frames // block_size)
    if acts.shape[-1] != expected:
        raise DomainError(
            f"activations cover {acts.shape[-1]} blocks, expected {expected} "
            f"for {n_frames} frames with block_size {block_size}"
        )
    return np.repeat(acts, block_size, axis=-1)[..., :n_frames]


def decomposed_separate(
    spec: Spectrogram, decorr: np.ndarray, loadings: np.ndarray, acts: np.ndarray
) -> list[Spectrogram]:
    """Decorrelate, apply per-channel Wiener gains and project back."""
    x = spec.values  # M I J
    y = np.einsum("ikm,kij->imj", decorr.conj(), x)  # I M J
    parts = loadings[:, :, :, None] * acts[:, None, :, :]  # I M N J
    gains = parts / np.maximum(parts.sum(axis=2, keepdims=True), np.finfo(float).tiny)
    z = gains * y[:, :, None, :]
    n_freq, m_dim, n_src, n_frames = z.shape
    images = np.linalg.solve(herm(decorr), z.reshape(n_freq, m_dim, n_src * n_frames))
    images = images.reshape(n_freq, m_dim, n_src, n_frames).transpose(2, 1, 0, 3)
    return [Spectrogram(values=image, frame_len=spec.frame_len) for image in images]


def fastfca_separate(
    spec: Spectrogram, params: FastFcaParams, block_size: int = 1
) -> list[Spectrogram]:
    """
    Source images by the decomposed Wiener filter, without forming ``F``.

    Args:
        spec: Mixture spectrogram (M, I, J)
        params: FastFCA parameters (activations per frame or per block)
        block_size: Frames per block the parameters were fitted on

    Returns:
        list[Spectrogram]: One M-channel image per source
    """
    if (spec.channels, spec.freq_bins) != (params.dim, params.freq_bins):
        raise DomainError(
            f"spectrogram {spec.values.shape} does not match parameters {params.decorr.shape}"
        )
    acts = expand_acts(params.acts, spec.frames, block_size)
    return decomposed_separate(spec, params.decorr, params.loadings, acts)


def ajd_cost(decorr: np.ndarray, covs: np.ndarray, weights: np.ndarray | None = None) -> float:
    """
    Flury's AJD cost ``sum_j a_j D_LD(W^H Xhat_j W, ddiag(W^H Xhat_j W))``.

    Args:
        decorr: W of shape (M, M) or (I, M, M)
        covs: PD covariances of shape (J, M, M) or (I, J, M, M)
        weights: Per-frame weights (J,) or (I, J); ones by default

    Returns:
        float: Nonnegative cost summed over all frequencies and frames
    """
    decorr = np.asarray(decorr)
    covs = np.asarray(covs)
    if decorr.ndim == 2:
        decorr, covs = decorr[None], covs[None]
    if covs.ndim != 4 or covs.shape[0] != decorr.shape[0] or covs.shape[-1] != decorr.shape[-1]:
        raise DomainError(f"covariances {covs.shape} do not match W {decorr.shape}")

    transformed = herm(decorr)[:, None] @ covs @ decorr[:, None]
    diag = np.real(np.diagonal(transformed, axis1=-2, axis2=-1))
    if np.any(diag <= 0):
        raise DomainError("transformed covariances must be positive definite")
    div = np.asarray(logdet_divergence(transformed, np.eye(diag.shape[-1]) * diag[..., None, :]))
    if weights is not None:
        div = np.broadcast_to(np.asarray(weights, dtype=float), div.shape) * div
    return float(np.sum(div))


def ica_mode_fit(
    covs: SampleCovSet,
    decorr: np.ndarray,
    n_iter: int = 20,
    n_sources: int | None = None,
    seed: int = 0,
) -> FitResult:
    """
    Time-varying Gaussian ICA: FastFCA with one-hot loadings (``N = M``).

    ``L_i`` is frozen at the identity pattern so ``sigma2 = H``; each
    iteration runs an IP sweep and then sets ``H <- U``, the exact minimizer.

    Args:
        covs: Observation covariances
        decorr: Initial W (I, M, M)
        n_iter: Number of iterations
        n_sources: Requested source count, must equal M when given
        seed: Seed for column restarts

    Returns:
        FitResult: Parameters with one-hot loadings and the NLL trace
    """
    decorr = np.array(decorr, dtype=complex)
    n_freq, m_dim, _ = decorr.shape
    if n_sources is not None and n_sources != m_dim:
        raise DomainError(f"ICA mode requires N == M, got N={n_sources}, M={m_dim}")
    if covs.freq_bins != n_freq or covs.dim != m_dim:
        raise DomainError(f"covariances {covs.mats.shape} do not match W {decorr.shape}")

    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    loadings = np.broadcast_to(np.eye(m_dim), (n_freq, m_dim, m_dim)).copy()
    powers = decorrelated_powers(covs.mats, decorr)
    acts = positive_floor(powers)
    trace = [fastfca_nll_arrays(covs.mats, decorr, loadings, acts)]
    for it in range(n_iter):
        decorr = ip_update_w(covs.mats, decorr, acts, rng)
        acts = positive_floor(decorrelated_powers(covs.mats, decorr), acts)
        trace.append(fastfca_nll_arrays(covs.mats, decorr, loadings, acts))
        logger.debug(f"ICA iteration {it + 1}: nll={trace[-1]:.6f}")

    return FitResult(
        method="ica",
        params=FastFcaParams(decorr=decorr, loadings=loadings, acts=acts),
        nll_trace=trace,
        elapsed=time.perf_counter() - start,
    )


def piecewise_prepare(spec: Spectrogram, block_size: int) -> SampleCovSet:
    """Block-averaged covariances for the piecewise-stationary cost."""
    return sample_covs(spec, block_size)


def align_permutations(envelopes: np.ndarray) -> np.ndarray:
    """
    Resolve the per-frequency source permutation from power envelopes.

    Envelopes are normalized per bin and source, then bins are visited in
    order of decreasing energy and matched against the running centroid of
    the already aligned bins with ``linear_sum_assignment``.

    Args:
        envelopes: Nonnegative envelopes (I, N, J), e.g. the activations ``H``

    Returns:
        np.ndarray: Permutations (I, N); ``perms[i, k]`` is the source at bin
            ``i`` that becomes output ``k``
    """
    envelopes = np.asarray(envelopes, dtype=float)
    n_freq, n_src, _ = envelopes.shape
    perms = np.tile(np.arange(n_src), (n_freq, 1))
    if n_src == 1:
        return perms

    centered = envelopes - envelopes.mean(axis=-1, keepdims=True)
    norms = np.linalg.norm(centered, axis=-1, keepdims=True)
    normed = centered / np.where(norms > 0, norms, 1.0)

    order = np.argsort(-envelopes.sum(axis=(1, 2)), kind="stable")
    centroid = normed[order[0]].copy()
    for count, i in enumerate(order[1:], start=1):
        corr = normed[i] @ centroid.T  # source x output
        rows, cols = linear_sum_assignment(-corr)
        perms[i, cols] = rows
        centroid = (count * centroid + normed[i, perms[i]]) / (count + 1)
    return perms


def permute_sources(params: FastFcaParams, perms: np.ndarray) -> FastFcaParams:
    """Reorder the sources of every frequency bin according to ``perms``."""
    perms = np.asarray(perms)
    if perms.shape != (params.freq_bins, params.n_sources):
        raise DomainError(f"permutations {perms.shape} do not match parameters")
    return FastFcaParams(
        decorr=params.decorr,
        loadings=np.take_along_axis(params.loadings, perms[:, None, :], axis=2),
        acts=np.take_along_axis(params.acts, perms[:, :, None], axis=1),
    )
