"""Parameter initialization: oracle images, spatial clustering and random draws."""

from typing import Literal, Sequence

import numpy as np
from loguru import logger
from scipy.cluster.vq import ClusterError, kmeans2

from jd_bss.core.exceptions import DomainError
from jd_bss.core.fastfca import align_permutations
from jd_bss.core.hermlinalg import exact_jd_pair, floor_eigenvalues, herm, hermitize
from jd_bss.core.schemas import (
    DiagonalPD,
    FastFcaParams,
    FcaParams,
    HermitianPD,
    InitResult,
    Spectrogram,
)
from jd_bss.core.sigmodel import positive_floor

JdPair = Literal["pair_sum", "first_two"]

SOFT_MASK_FLOOR = 0.1
KMEANS_ITER = 20
KMEANS_RESEEDS = 3


def _jd_reference(scms: np.ndarray, jd_pair: JdPair) -> tuple[np.ndarray, np.ndarray]:
    n_src, m_dim = scms.shape[1], scms.shape[-1]
    if n_src == 1:
        return scms[:, 0], np.broadcast_to(np.eye(m_dim), scms[:, 0].shape)
    if jd_pair == "first_two":
        return scms[:, 0], scms[:, 1]
    if jd_pair == "pair_sum":
        return scms[:, 0], scms[:, 1:].sum(axis=1)
    raise DomainError(f"Unsupported jd_pair: {jd_pair}")


def params_from_scms(
    x: np.ndarray, scms: np.ndarray, masks: np.ndarray, jd_pair: JdPair = "pair_sum"
) -> InitResult:
    """
    Complete an initialization from SCM estimates and soft masks.

    ``R`` is floored and trace-normalized, ``h_ijn = mask_ijn x^H R_in^-1 x / M``,
    ``W_i`` jointly diagonalizes the reference pair and ``Lambda_in = ddiag(W^H R_in W)``.

    Args:
        x: Mixture observations (I, J, M)
        scms: Raw SCM estimates (I, N, M, M)
        masks: Soft masks (I, J, N)
        jd_pair: Which SCM pair initializes ``W``

    Returns:
        InitResult: Matching FCA and FastFCA initializations
    """
    m_dim = scms.shape[-1]
    scms, clipped = floor_eigenvalues(scms)
    floored = bool(clipped.any())
    if floored:
        logger.warning(f"Floored {int(clipped.sum())} SCM estimates during initialization")
    trace = np.trace(scms, axis1=-2, axis2=-1).real / m_dim
    scms = HermitianPD(mat=scms / trace[..., None, None]).mat

    inv = np.linalg.inv(scms)  # I N M M
    quad = np.einsum("ijk,inkl,ijl->ijn", x.conj(), inv, x).real / m_dim
    powers = positive_floor(masks * np.maximum(quad, 0.0))

    r1, r2 = _jd_reference(scms, jd_pair)
    decorr = exact_jd_pair(r1, r2).w
    projected = herm(decorr)[:, None] @ scms @ decorr[:, None]
    loadings = DiagonalPD(diag=positive_floor(np.diagonal(projected, axis1=-2, axis2=-1).real))
    loadings = loadings.diag.transpose(0, 2, 1)  # I M N

    return InitResult(
        fca=FcaParams(scms=hermitize(scms), powers=powers),
        fastfca=FastFcaParams(decorr=decorr, loadings=loadings, acts=powers.transpose(0, 2, 1)),
        floored=floored,
        masks=masks,
    )


def init_oracle(images: Sequence[Spectrogram], jd_pair: JdPair = "pair_sum") -> InitResult:
    """
    Initialize from the true source images of a synthetic scene.

    ``R_in = (1/J) sum_j c_ijn c_ijn^H``; the masks are the energy shares
    ``|c_ijn|^2 / sum_n |c_ijn|^2``.

    Args:
        images: One M-channel image per source
        jd_pair: Which SCM pair initializes ``W``

    Returns:
        InitResult: Matching FCA and FastFCA initializations
    """
    if not images:
        raise DomainError("oracle initialization needs the source images")
    stacked = np.stack([image.values for image in images]).transpose(2, 3, 0, 1)  # I J N M
    scms = np.einsum("ijnk,ijnl->inkl", stacked, stacked.conj()) / stacked.shape[1]
    energy = (np.abs(stacked) ** 2).sum(axis=-1)
    masks = energy / np.maximum(energy.sum(axis=-1, keepdims=True), np.finfo(float).tiny)
    return params_from_scms(stacked.sum(axis=2), scms, masks, jd_pair)


def _cluster_features(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    unit = x / np.where(norms > 0, norms, 1.0)
    ref = unit[..., :1]
    phase = np.where(np.abs(ref) > 0, ref.conj() / np.maximum(np.abs(ref), 1e-300), 1.0)
    aligned = unit * phase
    return np.concatenate([aligned.real, aligned.imag], axis=-1)


def _kmeans_labels(feats: np.ndarray, n_src: int, rng: np.random.Generator) -> np.ndarray:
    for _ in range(KMEANS_RESEEDS):
        try:
            _, labels = kmeans2(
                feats, n_src, iter=KMEANS_ITER, minit="++", missing="raise", seed=rng
            )
            return labels
        except ClusterError:
            logger.debug("Empty k-means cluster, reseeding")
    _, labels = kmeans2(feats, n_src, iter=KMEANS_ITER, minit="++", missing="warn", seed=rng)
    return labels


def init_spatial_cluster(
    spec: Spectrogram, n_sources: int, seed: int = 0, jd_pair: JdPair = "pair_sum"
) -> InitResult:
    """
    Initialize from per-frequency k-means clustering of normalized observations.

    Observation vectors are scaled to unit norm and phase-aligned to the
    first channel before clustering. Cluster labels are aligned across
    frequencies through their power envelopes and turned into soft masks.

    Args:
        spec: Mixture spectrogram (M, I, J)
        n_sources: Number of sources N
        seed: Seed of the k-means starts
        jd_pair: Which SCM pair initializes ``W``

    Returns:
        InitResult: Matching FCA and FastFCA initializations with masks
    """
    if n_sources < 1:
        raise DomainError(f"n_sources must be >= 1, got {n_sources}")
    x = spec.values.transpose(1, 2, 0)  # I J M
    energy = (np.abs(x) ** 2).sum(axis=-1)
    if not np.any(energy > 0):
        raise DomainError("cannot initialize from a silent mixture")

    n_freq, n_frames, _ = x.shape
    if n_sources == 1:
        masks = np.ones((n_freq, n_frames, 1))
    else:
        rng = np.random.default_rng(seed)
        feats = _cluster_features(x)
        hard = np.zeros((n_freq, n_frames, n_sources))
        for i in range(n_freq):
            labels = _kmeans_labels(feats[i], n_sources, rng)
            hard[i, np.arange(n_frames), labels] = 1.0
        perms = align_permutations((hard * energy[..., None]).transpose(0, 2, 1))
        hard = np.take_along_axis(hard, perms[:, None, :], axis=2)
        masks = (1.0 - SOFT_MASK_FLOOR) * hard + SOFT_MASK_FLOOR / n_sources

    outer = x[..., :, None] * x[..., None, :].conj()
    scms = np.einsum("ijn,ijkl->inkl", masks, outer) / n_frames
    logger.info(f"Clustered {n_freq} bins x {n_frames} frames into {n_sources} sources")
    return params_from_scms(x, scms, masks, jd_pair)


def init_random(
    freq_bins: int,
    frames: int,
    dim: int,
    n_sources: int,
    seed: int = 0,
    scale: float = 1.0,
) -> InitResult:
    """
    Random initialization, deterministic given ``seed``.

    ``W_i = I + small complex perturbation``, log-uniform ``L`` and ``H``,
    ``R_in`` a scaled identity plus a PSD perturbation and log-uniform ``h``.

    Args:
        freq_bins: I
        frames: J
        dim: M
        n_sources: N
        seed: Random seed
        scale: Overall power scale of ``h`` and ``H``

    Returns:
        InitResult: Independent FCA and FastFCA draws
    """
    if min(freq_bins, frames, dim, n_sources) < 1:
        raise DomainError("all dimensions must be >= 1")
    if scale <= 0:
        raise DomainError(f"scale must be positive, got {scale}")
    rng = np.random.default_rng(seed)

    def cnormal(*shape):
        return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)

    decorr = np.eye(dim) + 0.1 * cnormal(freq_bins, dim, dim)
    loadings = np.exp(rng.uniform(-1.0, 1.0, (freq_bins, dim, n_sources)))
    acts = scale * np.exp(rng.uniform(-1.0, 1.0, (freq_bins, n_sources, frames)))

    b = cnormal(freq_bins, n_sources, dim, dim)
    scms = np.eye(dim) + 0.1 * (b @ herm(b)) / dim
    scms = scms * dim / np.trace(scms, axis1=-2, axis2=-1).real[..., None, None]
    powers = scale * np.exp(rng.uniform(-1.0, 1.0, (freq_bins, frames, n_sources)))

    return InitResult(
        fca=FcaParams(scms=hermitize(scms), powers=powers),
        fastfca=FastFcaParams(decorr=decorr, loadings=loadings, acts=acts),
    )
