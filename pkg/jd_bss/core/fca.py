"""Full-rank spatial covariance analysis: EM and MM optimizers and the direct MWF."""

import time
from typing import Literal

import numpy as np
from loguru import logger

from jd_bss.core.exceptions import DomainError, NumericalError, SingularMatrixError
from jd_bss.core.hermlinalg import (
    floor_eigenvalues,
    geometric_mean,
    herm,
    hermitize,
    logdet_hpd,
    matrix_power,
)
from jd_bss.core.schemas import FcaParams, FitResult, SampleCovSet, Spectrogram
from jd_bss.core.sigmodel import fca_nll_arrays, mixture_covs, positive_floor

MIX_MAX_CONDITION = 1e12


def _check_shapes(covs: SampleCovSet, params: FcaParams) -> None:
    if covs.mats.shape[:2] != params.powers.shape[:2] or covs.dim != params.dim:
        raise DomainError(
            f"covariances {covs.mats.shape} do not match parameters "
            f"{params.scms.shape}/{params.powers.shape}"
        )


def _pd_mixture(scms: np.ndarray, powers: np.ndarray) -> tuple[np.ndarray, bool]:
    mix = hermitize(mixture_covs(scms, powers))
    try:
        np.linalg.cholesky(mix)
        return mix, False
    except np.linalg.LinAlgError:
        floored, clipped = floor_eigenvalues(mix)
        logger.warning(f"Regularized {int(clipped.sum())} singular mixture covariances")
        return floored, True


def _wiener_filters(scms: np.ndarray, powers: np.ndarray) -> tuple[np.ndarray, bool]:
    mix, floored = _pd_mixture(scms, powers)
    weighted = powers[..., None, None] * scms[:, None]  # I J N M M
    # F = h R X^-1 = (X^-1 h R)^H since both factors are Hermitian
    solved = np.linalg.solve(np.broadcast_to(mix[:, :, None], weighted.shape), weighted)
    return herm(solved), floored


def mwf_filters(params: FcaParams) -> tuple[np.ndarray, bool]:
    """
    Multichannel Wiener filters ``F_ijn = h_ijn R_in X_ij^-1`` for all points.

    Args:
        params: FCA parameters

    Returns:
        tuple: Filters (I, J, N, M, M) and whether a singular mixture
            covariance had to be regularized
    """
    return _wiener_filters(params.scms, params.powers)


def mwf_filter(params: FcaParams, i: int, j: int, n: int) -> np.ndarray:
    """The Wiener filter of source ``n`` at frequency ``i`` and frame ``j``."""
    scms = params.scms[i : i + 1]
    powers = params.powers[i : i + 1, j : j + 1]
    filters, _ = _wiener_filters(scms, powers)
    return filters[0, 0, n]


def posterior_moments(covs: SampleCovSet, params: FcaParams) -> np.ndarray:
    """E-step: ``Psi_ijn = F Xhat F^H + (I - F) h R`` of shape (I, J, N, M, M)."""
    _check_shapes(covs, params)
    return _posterior_moments(covs.mats, params.scms, params.powers)


def _posterior_moments(covs: np.ndarray, scms: np.ndarray, powers: np.ndarray) -> np.ndarray:
    filters, _ = _wiener_filters(scms, powers)
    weighted = powers[..., None, None] * scms[:, None]
    eye = np.eye(scms.shape[-1])
    psi = filters @ covs[:, :, None] @ herm(filters) + (eye - filters) @ weighted
    return hermitize(psi)


def em_q_function(psi: np.ndarray, params: FcaParams) -> float:
    """``sum_ijn [M ln h + ln det R + tr(R^-1 Psi) / h]``, the EM surrogate up to constants."""
    m = params.dim
    h = params.powers
    trace = np.trace(np.linalg.solve(params.scms[:, None], psi), axis1=-2, axis2=-1).real
    logdet_r = np.asarray(logdet_hpd(params.scms))  # I N
    return float((m * np.log(h) + logdet_r[:, None, :] + trace / h).sum())


def _normalize_traces(scms: np.ndarray, powers: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    m = scms.shape[-1]
    scale = np.trace(scms, axis1=-2, axis2=-1).real / m  # I N
    return scms / scale[..., None, None], powers * scale[:, None, :]


def _floor_scms(scms: np.ndarray) -> np.ndarray:
    floored, clipped = floor_eigenvalues(scms)
    if clipped.any():
        logger.warning(f"Floored {int(clipped.sum())} spatial covariance matrices")
    return floored


def _em_step(
    covs: np.ndarray, scms: np.ndarray, powers: np.ndarray, use_updated_h: bool
) -> tuple[np.ndarray, np.ndarray]:
    m = scms.shape[-1]
    psi = _posterior_moments(covs, scms, powers)
    trace = np.trace(np.linalg.solve(scms[:, None], psi), axis1=-2, axis2=-1).real
    new_powers = positive_floor(trace / m, powers)
    weights = new_powers if use_updated_h else powers
    new_scms = hermitize((psi / weights[..., None, None]).mean(axis=1))
    new_scms, new_powers = _normalize_traces(_floor_scms(new_scms), new_powers)
    return new_scms, positive_floor(new_powers)


def fca_em_step(covs: SampleCovSet, params: FcaParams, use_updated_h: bool = True) -> FcaParams:
    """
    One EM sweep for FCA.

    E-step computes all posterior moments from the current parameters, then
    ``h_ijn <- tr(R_in^-1 Psi_ijn) / M`` and ``R_in <- mean_j Psi_ijn / h_ijn``.

    Args:
        covs: Observation covariances
        params: Current parameters
        use_updated_h: Whether the R update divides by the new (default) or the old h

    Returns:
        FcaParams: Updated parameters (R trace-normalized to M, scale moved into h)
    """
    _check_shapes(covs, params)
    scms, powers = _em_step(covs.mats, params.scms, params.powers, use_updated_h)
    return FcaParams(scms=scms, powers=powers)


def _mixture_cholesky(scms: np.ndarray, powers: np.ndarray) -> np.ndarray:
    """Cholesky factors of the mixture covariances, flooring ill-conditioned ones first."""
    mix = hermitize(mixture_covs(scms, powers))
    try:
        chol = np.linalg.cholesky(mix)
        diag = np.abs(np.diagonal(chol, axis1=-2, axis2=-1))
        # diagonal ratio squared bounds the condition number from below
        bad = diag.min(axis=-1) ** 2 * MIX_MAX_CONDITION < diag.max(axis=-1) ** 2
    except np.linalg.LinAlgError:
        bad = np.ones(mix.shape[:-2], dtype=bool)
    if not bad.any():
        return chol

    floored, clipped = floor_eigenvalues(mix[bad])
    mix = mix.copy()
    mix[bad] = floored
    logger.warning(f"Regularized {int(clipped.sum())} ill-conditioned mixture covariances")
    try:
        return np.linalg.cholesky(mix)
    except np.linalg.LinAlgError as e:
        raise SingularMatrixError(f"mixture covariance stayed singular after flooring: {e}") from e


def _mm_quadratics(
    covs: np.ndarray, chol: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    # with X = C C^H and G = C^-1: X^-1 = G^H G and X^-1 Xhat X^-1 = G^H (G Xhat G^H) G
    eye = np.broadcast_to(np.eye(chol.shape[-1]), chol.shape)
    g = np.linalg.solve(chol, eye)
    whitened = hermitize(g @ covs @ herm(g))
    inv = hermitize(herm(g) @ g)
    sandwich = hermitize(herm(g) @ whitened @ g)
    return g, whitened, inv, sandwich


def _mm_step(
    covs: np.ndarray, scms: np.ndarray, powers: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    g, whitened, _, _ = _mm_quadratics(covs, _mixture_cholesky(scms, powers))
    projected = hermitize(g[:, :, None] @ scms[:, None] @ herm(g)[:, :, None])  # I J N M M
    num = np.maximum(np.einsum("ijkl,ijnlk->ijn", whitened, projected).real, 0.0)
    den = np.maximum(np.trace(projected, axis1=-2, axis2=-1).real, np.finfo(float).tiny)
    powers = positive_floor(powers * np.sqrt(num / den), powers)

    _, _, inv, sandwich = _mm_quadratics(covs, _mixture_cholesky(scms, powers))
    left = np.einsum("ijn,ijkl->inkl", powers, inv)
    right = scms @ np.einsum("ijn,ijkl->inkl", powers, sandwich) @ scms
    new_scms = geometric_mean(matrix_power(left, -1.0), hermitize(right))
    new_scms, powers = _normalize_traces(_floor_scms(new_scms), powers)
    return new_scms, positive_floor(powers)


def fca_mm_step(covs: SampleCovSet, params: FcaParams) -> FcaParams:
    """
    One MM sweep for FCA.

    ``X_j <- sum_n h_jn R_n``, ``h <- h sqrt(tr(X^-1 Xhat X^-1 R) / tr(X^-1 R))``,
    then with ``X_j`` recomputed from the new h,
    ``R_n <- (sum_j h_jn X_j^-1)^-1 # [R_n (sum_j h_jn X_j^-1 Xhat_j X_j^-1) R_n]``.
    """
    _check_shapes(covs, params)
    scms, powers = _mm_step(covs.mats, params.scms, params.powers)
    return FcaParams(scms=scms, powers=powers)


def fca_fit(
    covs: SampleCovSet,
    init: FcaParams,
    n_iter: int = 20,
    flavor: Literal["em", "mm"] = "em",
    use_updated_h: bool = True,
) -> FitResult:
    """
    Run FCA for a fixed number of iterations.

    Args:
        covs: Observation covariances
        init: Initial parameters
        n_iter: Number of iterations
        flavor: "em" or "mm"
        use_updated_h: EM ablation switch, see ``fca_em_step``

    Returns:
        FitResult: Final parameters and the NLL trace (init value first)
    """
    _check_shapes(covs, init)
    if flavor not in ("em", "mm"):
        raise DomainError(f"Unsupported FCA flavor: {flavor}")

    start = time.perf_counter()
    scms, powers = init.scms.copy(), init.powers.copy()
    trace = [fca_nll_arrays(covs.mats, scms, powers)]
    for it in range(n_iter):
        try:
            if flavor == "em":
                scms, powers = _em_step(covs.mats, scms, powers, use_updated_h)
            else:
                scms, powers = _mm_step(covs.mats, scms, powers)
            nll = fca_nll_arrays(covs.mats, scms, powers)
        except np.linalg.LinAlgError as e:
            raise NumericalError(f"FCA-{flavor.upper()} failed at iteration {it + 1}: {e}") from e
        if not np.isfinite(nll):
            raise NumericalError(
                f"FCA-{flavor.upper()} reached a non-finite NLL at iteration {it + 1}"
            )
        trace.append(nll)
        logger.debug(f"FCA-{flavor.upper()} iteration {it + 1}: nll={trace[-1]:.6f}")

    return FitResult(
        method=f"fca-{flavor}",
        params=FcaParams(scms=scms, powers=powers),
        nll_trace=trace,
        elapsed=time.perf_counter() - start,
    )


def fca_separate(spec: Spectrogram, params: FcaParams, block_size: int = 1) -> list[Spectrogram]:
    """
    LMMSE source images ``c_ijn = F_ijn x_ij``.

    Args:
        spec: Mixture spectrogram (M, I, J)
        params: FCA parameters with matching I and M
        block_size: Frames per block the powers were fitted on

    Returns:
        list[Spectrogram]: One M-channel image per source
    """
    if (spec.freq_bins, spec.channels) != (params.freq_bins, params.dim):
        raise DomainError(
            f"spectrogram {spec.values.shape} does not match parameters {params.scms.shape}"
        )
    if params.frames != spec.frames:
        expected = -(-spec.frames // block_size)
        if params.frames != expected:
            raise DomainError(
                f"powers cover {params.frames} blocks, expected {expected} "
                f"for {spec.frames} frames with block_size {block_size}"
            )
        powers = np.repeat(params.powers, block_size, axis=1)[:, : spec.frames]
        params = FcaParams(scms=params.scms, powers=powers)
    filters, _ = mwf_filters(params)
    x = spec.values.transpose(1, 2, 0)  # I J M
    images = np.einsum("ijnkl,ijl->nkij", filters, x)
    return [Spectrogram(values=image, frame_len=spec.frame_len) for image in images]
