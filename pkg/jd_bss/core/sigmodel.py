"""Observation statistics and negative log-likelihoods shared by all estimators.

Array layout used throughout the estimators:

- covariances ``X`` (I, J, M, M)
- FCA: ``R`` (I, N, M, M), ``h`` (I, J, N)
- FastFCA: ``W`` (I, M, M) with columns ``w_m``, ``L`` (I, M, N), ``H`` (I, N, J)
- decorrelated powers ``U`` and model variances ``sigma2`` (I, M, J)
"""

import numpy as np

from jd_bss.core.exceptions import DomainError, SingularMatrixError
from jd_bss.core.hermlinalg import herm, hermitize, logdet_hpd, safe_cholesky
from jd_bss.core.schemas import (
    DecorrelatedStats,
    FastFcaParams,
    FcaParams,
    SampleCovSet,
    Spectrogram,
)

POWER_REL_FLOOR = 1e-12


def positive_floor(values: np.ndarray, reference: np.ndarray | None = None) -> np.ndarray:
    """Clip to ``POWER_REL_FLOOR`` times the mean of ``reference`` (default: ``values``)."""
    reference = values if reference is None else reference
    scale = float(np.mean(reference))
    floor = POWER_REL_FLOOR * scale if scale > 0 else np.finfo(float).tiny
    return np.maximum(values, floor)


def sample_covs(spec: Spectrogram, block_size: int = 1) -> SampleCovSet:
    """
    Observation covariances per time-frequency point or per block of frames.

    Args:
        spec: Mixture spectrogram (M, I, J)
        block_size: Number of consecutive frames averaged; a trailing partial
            block is averaged over its actual length

    Returns:
        SampleCovSet: Covariances of shape (I, ceil(J / B), M, M)
    """
    if block_size < 1:
        raise DomainError(f"block_size must be >= 1, got {block_size}")
    if spec.values.size == 0:
        raise DomainError("empty spectrogram")

    x = spec.values.transpose(1, 2, 0)  # I J M
    outer = x[..., :, None] * np.conj(x[..., None, :])
    if block_size == 1:
        return SampleCovSet(mats=outer, block_size=1)

    n_frames = x.shape[1]
    starts = np.arange(0, n_frames, block_size)
    sums = np.add.reduceat(outer, starts, axis=1)
    counts = np.diff(np.append(starts, n_frames))
    return SampleCovSet(mats=sums / counts[None, :, None, None], block_size=block_size)


def mixture_covs(scms: np.ndarray, powers: np.ndarray) -> np.ndarray:
    """``X_ij = sum_n h_ijn R_in`` of shape (I, J, M, M)."""
    return np.einsum("ijn,inkl->ijkl", powers, scms)


def fca_nll_arrays(covs: np.ndarray, scms: np.ndarray, powers: np.ndarray) -> float:
    mix = hermitize(mixture_covs(scms, powers))
    chol = safe_cholesky(mix)
    logdet = 2.0 * np.log(np.diagonal(chol, axis1=-2, axis2=-1).real).sum()
    trace = np.trace(np.linalg.solve(mix, covs), axis1=-2, axis2=-1).real.sum()
    return float(logdet + trace)


def fca_nll(covs: SampleCovSet, params: FcaParams) -> float:
    """
    Negative log-likelihood of the full-rank model (constants dropped).

    ``sum_ij ln det X_ij + tr(X_ij^-1 Xhat_ij)`` with ``X_ij = sum_n h_ijn R_in``.
    """
    if covs.mats.shape[:2] != params.powers.shape[:2] or covs.dim != params.dim:
        raise DomainError(
            f"covariances {covs.mats.shape} do not match parameters "
            f"{params.scms.shape}/{params.powers.shape}"
        )
    return fca_nll_arrays(covs.mats, params.scms, params.powers)


def decorrelated_powers(covs: np.ndarray, decorr: np.ndarray) -> np.ndarray:
    """``U_imj = w_im^H Xhat_ij w_im`` of shape (I, M, J)."""
    return np.maximum(np.einsum("ikm,ijkl,ilm->imj", decorr.conj(), covs, decorr).real, 0.0)


def model_variances(loadings: np.ndarray, acts: np.ndarray) -> np.ndarray:
    """``sigma2_imj = [L_i H_i]_mj`` of shape (I, M, J)."""
    return loadings @ acts


def log_abs_det2(decorr: np.ndarray) -> np.ndarray:
    """``ln |det W_i|^2`` per frequency."""
    sign, logabs = np.linalg.slogdet(decorr)
    if np.any(sign == 0) or not np.all(np.isfinite(logabs)):
        cond = float(np.max(np.linalg.cond(decorr)))
        raise SingularMatrixError("decorrelation matrix is singular", cond)
    return 2.0 * logabs


def ica_terms(decorr: np.ndarray, powers: np.ndarray, sigma2: np.ndarray) -> np.ndarray:
    """Per-frequency ``-J ln|det W|^2 + sum_mj (U/sigma2 + ln sigma2)``."""
    n_frames = powers.shape[-1]
    sigma2 = positive_floor(sigma2)
    return -n_frames * log_abs_det2(decorr) + (powers / sigma2 + np.log(sigma2)).sum(axis=(1, 2))


def fastfca_nll_arrays(
    covs: np.ndarray, decorr: np.ndarray, loadings: np.ndarray, acts: np.ndarray
) -> float:
    powers = decorrelated_powers(covs, decorr)
    return float(ica_terms(decorr, powers, model_variances(loadings, acts)).sum())


def fastfca_nll(covs: SampleCovSet, params: FastFcaParams) -> float:
    """
    Negative log-likelihood of the jointly-diagonalizable model.

    ``sum_i [-J ln|det W_i|^2 + sum_mj (U_imj / sigma2_imj + ln sigma2_imj)]``.
    With block covariances ``U`` holds block-mean powers.
    """
    if covs.mats.shape[0] != params.freq_bins or covs.frames != params.frames:
        raise DomainError(
            f"covariances {covs.mats.shape} do not match parameters with "
            f"{params.freq_bins} bins and {params.frames} frames"
        )
    return fastfca_nll_arrays(covs.mats, params.decorr, params.loadings, params.acts)


def decorrelated_stats(covs: SampleCovSet, params: FastFcaParams) -> DecorrelatedStats:
    """Decorrelated powers ``U`` and model variances ``sigma2`` at every frequency."""
    return DecorrelatedStats(
        powers=decorrelated_powers(covs.mats, params.decorr),
        mix_vars=positive_floor(model_variances(params.loadings, params.acts)),
    )


def data_constant(covs: SampleCovSet) -> float:
    """``sum_ij (ln det Xhat_ij + M)``; requires PD covariances (block size >= M)."""
    return float(np.sum(logdet_hpd(covs.mats)) + covs.mats.shape[0] * covs.frames * covs.dim)


def reconstruct_scms(decorr: np.ndarray, loadings: np.ndarray) -> np.ndarray:
    """``R_in = W_i^-H diag(L_i[:, n]) W_i^-1`` of shape (I, N, M, M)."""
    inv = np.linalg.inv(decorr)  # W^-1
    diag = np.einsum("imn,mk->inmk", loadings, np.eye(decorr.shape[-1]))
    return hermitize(herm(inv)[:, None] @ diag @ inv[:, None])


def to_fca_params(params: FastFcaParams) -> FcaParams:
    """The full-rank parametrization equivalent to a FastFCA parameter set."""
    return FcaParams(
        scms=reconstruct_scms(params.decorr, params.loadings),
        powers=params.acts.transpose(0, 2, 1),
    )
