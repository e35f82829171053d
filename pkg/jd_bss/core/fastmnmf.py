"""FastMNMF: FastFCA with an NMF model of the source power spectra.

The activations become ``h_ijn = sum_k T[n, i, k] V[n, k, j]`` so that all
frequencies share one spectral model per source, which removes the
per-frequency permutation problem of FastFCA.
"""

import time

import numpy as np
from loguru import logger

from jd_bss.core.exceptions import DomainError
from jd_bss.core.fastfca import (
    align_permutations,
    decomposed_separate,
    expand_acts,
    ip_update_w,
    permute_sources,
)
from jd_bss.core.schemas import (
    FastFcaParams,
    FastMnmfParams,
    FitResult,
    NmfFactors,
    SampleCovSet,
    Spectrogram,
)
from jd_bss.core.sigmodel import decorrelated_powers, fastfca_nll_arrays, positive_floor


def activations(nmf: NmfFactors) -> np.ndarray:
    """``h_ijn = sum_k t_ikn v_kjn`` in the FastFCA layout (I, N, J)."""
    return np.einsum("nik,nkj->inj", nmf.templates, nmf.activations)


def _acts(templates: np.ndarray, weights: np.ndarray) -> np.ndarray:
    return np.einsum("nik,nkj->inj", templates, weights)


def to_fastfca_params(params: FastMnmfParams) -> FastFcaParams:
    return FastFcaParams(
        decorr=params.decorr, loadings=params.loadings, acts=activations(params.nmf)
    )


def fastmnmf_nll(covs: SampleCovSet, params: FastMnmfParams) -> float:
    """
    Negative log-likelihood with the tensor-model variances.

    ``sum_i -J ln|det W_i|^2 + sum_mij (U_mij / sigma2_mij + ln sigma2_mij)`` with
    ``sigma2_imj = sum_n L_imn h_ijn``.
    """
    if covs.freq_bins != params.freq_bins or covs.frames != params.nmf.activations.shape[-1]:
        raise DomainError(
            f"covariances {covs.mats.shape} do not match parameters with "
            f"{params.freq_bins} bins and {params.nmf.activations.shape[-1]} frames"
        )
    return fastfca_nll_arrays(covs.mats, params.decorr, params.loadings, activations(params.nmf))


def is_nmf(
    power: np.ndarray, n_components: int, n_iter: int = 30, seed: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """
    Itakura-Saito NMF ``power ~ T V`` by multiplicative MM updates.

    Args:
        power: Positive matrix (I, J) or a batch of them (N, I, J)
        n_components: Number of components K
        n_iter: Number of iterations
        seed: Seed of the random initialization

    Returns:
        tuple: Templates (..., I, K) and activations (..., K, J)
    """
    power = np.asarray(power, dtype=float)
    if power.ndim not in (2, 3) or np.any(power < 0):
        raise DomainError("power must be a nonnegative (I, J) or (N, I, J) array")
    squeeze = power.ndim == 2
    power = positive_floor(power[None] if squeeze else power)
    n_src, n_freq, n_frames = power.shape

    rng = np.random.default_rng(seed)
    scale = np.sqrt(power.mean(axis=(1, 2)))[:, None, None]
    templates = scale * rng.uniform(0.5, 1.5, (n_src, n_freq, n_components))
    weights = scale * rng.uniform(0.5, 1.5, (n_src, n_components, n_frames))
    for _ in range(n_iter):
        model = positive_floor(templates @ weights, power)
        num = (power / model**2) @ np.swapaxes(weights, -1, -2)
        den = (1.0 / model) @ np.swapaxes(weights, -1, -2)
        templates = positive_floor(templates * np.sqrt(num / den), templates)
        model = positive_floor(templates @ weights, power)
        num = np.swapaxes(templates, -1, -2) @ (power / model**2)
        den = np.swapaxes(templates, -1, -2) @ (1.0 / model)
        weights = positive_floor(weights * np.sqrt(num / den), weights)

    if squeeze:
        return templates[0], weights[0]
    return templates, weights


def _normalize(
    loadings: np.ndarray, templates: np.ndarray, weights: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # unit-mean columns of L_i, scale into T
    mu = loadings.mean(axis=1)  # I N
    loadings = loadings / mu[:, None, :]
    templates = templates * mu.T[:, :, None]
    # unit-mean columns of T_n, scale into V
    nu = templates.mean(axis=1)  # N K
    return loadings, templates / nu[:, None, :], weights * nu[:, :, None]


def _update_factors(
    powers: np.ndarray, loadings: np.ndarray, templates: np.ndarray, weights: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    def ratios(lds, tmp, wts):
        sigma2 = positive_floor(lds @ _acts(tmp, wts))
        return powers / sigma2**2, 1.0 / sigma2

    # L
    acts = _acts(templates, weights)
    a, b = ratios(loadings, templates, weights)
    num = a @ np.swapaxes(acts, -1, -2)
    den = b @ np.swapaxes(acts, -1, -2)
    loadings = positive_floor(loadings * np.sqrt(num / den), loadings)

    # T
    a, b = ratios(loadings, templates, weights)
    pa = np.einsum("imn,imj->inj", loadings, a)
    pb = np.einsum("imn,imj->inj", loadings, b)
    num = np.einsum("inj,nkj->nik", pa, weights)
    den = np.einsum("inj,nkj->nik", pb, weights)
    templates = positive_floor(templates * np.sqrt(num / den), templates)

    # V
    a, b = ratios(loadings, templates, weights)
    pa = np.einsum("imn,imj->inj", loadings, a)
    pb = np.einsum("imn,imj->inj", loadings, b)
    num = np.einsum("nik,inj->nkj", templates, pa)
    den = np.einsum("nik,inj->nkj", templates, pb)
    weights = positive_floor(weights * np.sqrt(num / den), weights)
    return loadings, templates, weights


def fastmnmf_fit(
    covs: SampleCovSet, init: FastMnmfParams, n_iter: int = 20, seed: int = 0
) -> FitResult:
    """
    Alternate IP updates of ``W`` with MM updates of ``L``, ``T`` and ``V``.

    The factor updates use the IS tensor cost
    ``sum_mij D_IS(U_mij | sum_n L_imn sum_k t_ikn v_kjn)`` and are applied in
    the order L, T, V, each seeing its updated predecessors.

    Args:
        covs: Observation (or block) covariances
        init: Initial parameters
        n_iter: Number of iterations
        seed: Seed for column restarts

    Returns:
        FitResult: Final parameters and the NLL trace (init value first)
    """
    if covs.freq_bins != init.freq_bins or covs.frames != init.nmf.activations.shape[-1]:
        raise DomainError(
            f"covariances {covs.mats.shape} do not match parameters with "
            f"{init.freq_bins} bins and {init.nmf.activations.shape[-1]} frames"
        )

    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    decorr = init.decorr.copy()
    loadings = init.loadings.copy()
    templates = init.nmf.templates.copy()
    weights = init.nmf.activations.copy()
    trace = [fastfca_nll_arrays(covs.mats, decorr, loadings, _acts(templates, weights))]
    for it in range(n_iter):
        sigma2 = loadings @ _acts(templates, weights)
        decorr = ip_update_w(covs.mats, decorr, sigma2, rng)
        powers = decorrelated_powers(covs.mats, decorr)
        loadings, templates, weights = _update_factors(powers, loadings, templates, weights)
        loadings, templates, weights = _normalize(loadings, templates, weights)
        trace.append(fastfca_nll_arrays(covs.mats, decorr, loadings, _acts(templates, weights)))
        logger.debug(f"FastMNMF iteration {it + 1}: nll={trace[-1]:.6f}")

    return FitResult(
        method="fastmnmf",
        params=FastMnmfParams(
            decorr=decorr,
            loadings=loadings,
            nmf=NmfFactors(templates=templates, activations=weights),
        ),
        nll_trace=trace,
        elapsed=time.perf_counter() - start,
    )


def fastmnmf_separate(
    spec: Spectrogram, params: FastMnmfParams, block_size: int = 1
) -> list[Spectrogram]:
    """Decomposed Wiener filtering with the NMF power spectra."""
    if (spec.channels, spec.freq_bins) != (params.dim, params.freq_bins):
        raise DomainError(
            f"spectrogram {spec.values.shape} does not match parameters {params.decorr.shape}"
        )
    acts = expand_acts(activations(params.nmf), spec.frames, block_size)
    return decomposed_separate(spec, params.decorr, params.loadings, acts)


def fastmnmf_init_from_fastfca(
    params: FastFcaParams, n_components: int = 2, n_iter: int = 30, seed: int = 0
) -> FastMnmfParams:
    """
    Warm start from FastFCA parameters.

    The sources are first aligned across frequencies, then each source's
    activation spectrogram ``h_ijn`` is factored by IS-NMF.
    """
    aligned = permute_sources(params, align_permutations(params.acts))
    templates, weights = is_nmf(
        aligned.acts.transpose(1, 0, 2), n_components, n_iter=n_iter, seed=seed
    )
    loadings, templates, weights = _normalize(
        positive_floor(aligned.loadings), templates, weights
    )
    return FastMnmfParams(
        decorr=aligned.decorr,
        loadings=loadings,
        nmf=NmfFactors(templates=templates, activations=weights),
    )


def fastmnmf_init_random(
    freq_bins: int, frames: int, dim: int, n_sources: int, n_components: int = 2, seed: int = 0
) -> FastMnmfParams:
    """Identity-plus-perturbation ``W`` and log-uniform positive factors."""
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((freq_bins, dim, dim)) + 1j * rng.standard_normal(
        (freq_bins, dim, dim)
    )
    decorr = np.eye(dim) + 0.1 * noise
    loadings = np.exp(rng.uniform(-1.0, 1.0, (freq_bins, dim, n_sources)))
    templates = np.exp(rng.uniform(-1.0, 1.0, (n_sources, freq_bins, n_components)))
    weights = np.exp(rng.uniform(-1.0, 1.0, (n_sources, n_components, frames)))
    loadings, templates, weights = _normalize(loadings, templates, weights)
    return FastMnmfParams(
        decorr=decorr,
        loadings=loadings,
        nmf=NmfFactors(templates=templates, activations=weights),
    )
