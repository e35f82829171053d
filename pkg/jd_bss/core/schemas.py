import os
from typing import List, Literal, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from jd_bss.core.hermlinalg import floor_eigenvalues

METHODS = ("fca-em", "fca-mm", "fastfca-em", "fastfca-mm", "fastmnmf", "ica")
Method = Literal["fca-em", "fca-mm", "fastfca-em", "fastfca-mm", "fastmnmf", "ica"]
SceneKind = Literal["jd_exact", "fullrank", "instantaneous"]

HERMITIAN_ATOL = 1e-12


class StftConfig(BaseModel):
    frame_len: int = Field(1024, description="The analysis frame length in samples")
    shift: int = Field(512, description="The frame shift in samples")
    sample_rate: int = Field(16000, gt=0, description="The nominal sample rate in Hz")
    padded: bool = Field(
        True, description="Whether to zero-pad half a frame at both ends of the signal"
    )

    @model_validator(mode="after")
    def _check_frames(self):
        if self.frame_len < 2 or self.frame_len & (self.frame_len - 1):
            raise ValueError(f"frame_len must be a power of two, got {self.frame_len}")
        if self.shift * 2 != self.frame_len:
            raise ValueError(f"shift must be frame_len / 2, got {self.shift}")
        return self


class FitConfig(BaseModel):
    method: Method = Field("fastfca-mm", description="The estimator to run")
    n_sources: int = Field(..., ge=1, description="The number of sources")
    n_iter: int = Field(20, ge=0, description="The number of EM/MM iterations")
    init: Literal["cluster", "random"] = Field(
        "cluster", description="The parameter initialization strategy"
    )
    block_size: int = Field(1, ge=1, description="The number of frames per covariance block")
    seed: int = Field(0, description="The random seed")
    n_components: int = Field(2, ge=1, description="The NMF components per source (FastMNMF)")
    use_updated_h: bool = Field(
        True, description="Whether the FCA EM update of R uses the freshly updated h"
    )
    jd_pair: Literal["pair_sum", "first_two"] = Field(
        "pair_sum", description="Which SCM pair initializes the decorrelation matrices"
    )
    workers: int = Field(
        default_factory=lambda: os.cpu_count() or 1,
        ge=1,
        description="The number of frequency-parallel workers",
    )
    chunk_size: int = Field(16, ge=1, description="The frequency bins per work item")
    warm_start_iters: int = Field(
        10, ge=0, description="The FastFCA iterations run before a FastMNMF warm start"
    )


class OutputConfig(BaseModel):
    out_dir: str | None = Field(None, description="The output directory")
    downmix: bool = Field(False, description="Whether to also emit mono reference-channel files")


class SeparationConfig(BaseModel):
    stft: StftConfig = Field(StftConfig(), description="The STFT front-end configuration")
    fit: FitConfig = Field(..., description="The estimator configuration")
    output: OutputConfig = Field(OutputConfig(), description="The output configuration")
    log_level: str = Field("INFO", description="The logging level")


class ArrayModel(BaseModel):
    """Base for containers holding numpy arrays."""

    model_config = ConfigDict(arbitrary_types_allowed=True)


def _finite(name: str, value: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(value)):
        raise ValueError(f"{name} must be finite")
    return value


class HermitianPD(ArrayModel):
    mat: np.ndarray = Field(..., description="Hermitian positive definite matrices (..., M, M)")

    @field_validator("mat")
    @classmethod
    def _check_mat(cls, value: np.ndarray) -> np.ndarray:
        value = np.asarray(value, dtype=complex)
        if value.ndim < 2 or value.shape[-1] != value.shape[-2]:
            raise ValueError(f"mat must be (..., M, M), got shape {value.shape}")
        _finite("mat", value)
        if np.max(np.abs(value - np.conj(np.swapaxes(value, -1, -2)))) > HERMITIAN_ATOL:
            raise ValueError("mat must be conjugate-symmetric")
        if np.min(np.linalg.eigvalsh(value)) <= 0:
            raise ValueError("mat must be positive definite")
        return value

    @classmethod
    def from_array(cls, value: np.ndarray) -> "HermitianPD":
        """Symmetrize and floor the eigenvalues before validation."""
        floored, _ = floor_eigenvalues(np.asarray(value, dtype=complex))
        return cls(mat=floored)

    @property
    def dim(self) -> int:
        return self.mat.shape[-1]


class DiagonalPD(ArrayModel):
    diag: np.ndarray = Field(..., description="The strictly positive diagonal entries (..., M)")

    @field_validator("diag")
    @classmethod
    def _check_diag(cls, value: np.ndarray) -> np.ndarray:
        value = np.asarray(value, dtype=float)
        if value.ndim < 1 or np.any(~(value > 0)):
            raise ValueError("diag must hold strictly positive entries")
        return _finite("diag", value)

    @property
    def dim(self) -> int:
        return self.diag.shape[-1]

    @property
    def mat(self) -> np.ndarray:
        return self.diag[..., None] * np.eye(self.dim)


class MultichannelWave(ArrayModel):
    sample_rate: int = Field(..., gt=0, description="The sample rate in Hz")
    samples: np.ndarray = Field(..., description="The samples (M, T) in [-1, 1]")

    @field_validator("samples", mode="before")
    @classmethod
    def _check_samples(cls, value) -> np.ndarray:
        if isinstance(value, (list, tuple)):
            lengths = {len(channel) for channel in value}
            if len(lengths) > 1:
                raise ValueError(f"all channels must have the same length, got {sorted(lengths)}")
        value = np.asarray(value, dtype=float)
        if value.ndim == 1:
            value = value[None, :]
        if value.ndim != 2:
            raise ValueError(f"samples must be (channels, samples), got shape {value.shape}")
        return _finite("samples", value)

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate


class Spectrogram(ArrayModel):
    values: np.ndarray = Field(..., description="The complex STFT coefficients (M, I, J)")
    frame_len: int | None = Field(None, description="The frame length it was analysed with")

    @field_validator("values")
    @classmethod
    def _check_values(cls, value: np.ndarray) -> np.ndarray:
        value = np.asarray(value, dtype=complex)
        if value.ndim != 3:
            raise ValueError(f"values must be (channels, freqs, frames), got shape {value.shape}")
        return _finite("values", value)

    @model_validator(mode="after")
    def _check_bins(self):
        if self.frame_len is not None and self.freq_bins != self.frame_len // 2 + 1:
            raise ValueError(
                f"{self.freq_bins} bins do not match a one-sided {self.frame_len}-point spectrum"
            )
        return self

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def freq_bins(self) -> int:
        return self.values.shape[1]

    @property
    def frames(self) -> int:
        return self.values.shape[2]


class SampleCovSet(ArrayModel):
    mats: np.ndarray = Field(..., description="The observation covariances (I, J, M, M)")
    block_size: int = Field(1, ge=1, description="The frames averaged per covariance")

    @field_validator("mats")
    @classmethod
    def _check_mats(cls, value: np.ndarray) -> np.ndarray:
        value = np.asarray(value, dtype=complex)
        if value.ndim != 4 or value.shape[-1] != value.shape[-2]:
            raise ValueError(f"mats must be (I, J, M, M), got shape {value.shape}")
        return _finite("mats", value)

    @property
    def freq_bins(self) -> int:
        return self.mats.shape[0]

    @property
    def frames(self) -> int:
        return self.mats.shape[1]

    @property
    def dim(self) -> int:
        return self.mats.shape[2]

    def select(self, freqs: Sequence[int] | slice) -> "SampleCovSet":
        return SampleCovSet(mats=self.mats[freqs], block_size=self.block_size)


class FcaParams(ArrayModel):
    scms: np.ndarray = Field(..., description="The spatial covariance matrices R (I, N, M, M)")
    powers: np.ndarray = Field(..., description="The power spectra h (I, J, N)")

    @field_validator("scms")
    @classmethod
    def _check_scms(cls, value: np.ndarray) -> np.ndarray:
        value = np.asarray(value, dtype=complex)
        if value.ndim != 4 or value.shape[-1] != value.shape[-2]:
            raise ValueError(f"scms must be (I, N, M, M), got shape {value.shape}")
        return _finite("scms", value)

    @field_validator("powers")
    @classmethod
    def _check_powers(cls, value: np.ndarray) -> np.ndarray:
        value = np.asarray(value, dtype=float)
        if value.ndim != 3 or np.any(value <= 0):
            raise ValueError("powers must be a strictly positive (I, J, N) array")
        return _finite("powers", value)

    @model_validator(mode="after")
    def _check_shapes(self):
        if self.scms.shape[:2] != (self.powers.shape[0], self.powers.shape[2]):
            raise ValueError(f"scms {self.scms.shape} and powers {self.powers.shape} disagree")
        return self

    @property
    def freq_bins(self) -> int:
        return self.scms.shape[0]

    @property
    def n_sources(self) -> int:
        return self.scms.shape[1]

    @property
    def dim(self) -> int:
        return self.scms.shape[2]

    @property
    def frames(self) -> int:
        return self.powers.shape[1]

    def select(self, freqs: Sequence[int] | slice) -> "FcaParams":
        return FcaParams(scms=self.scms[freqs], powers=self.powers[freqs])

    @classmethod
    def concat(cls, parts: Sequence["FcaParams"]) -> "FcaParams":
        return cls(
            scms=np.concatenate([p.scms for p in parts]),
            powers=np.concatenate([p.powers for p in parts]),
        )


class FastFcaParams(ArrayModel):
    decorr: np.ndarray = Field(..., description="The decorrelation matrices W (I, M, M)")
    loadings: np.ndarray = Field(..., description="The diagonal loadings L (I, M, N)")
    acts: np.ndarray = Field(..., description="The activations H (I, N, J)")

    @field_validator("decorr")
    @classmethod
    def _check_decorr(cls, value: np.ndarray) -> np.ndarray:
        value = _finite("decorr", np.asarray(value, dtype=complex))
        if value.ndim != 3 or value.shape[-1] != value.shape[-2]:
            raise ValueError(f"decorr must be (I, M, M), got shape {value.shape}")
        if np.any(np.abs(np.linalg.det(value)) == 0):
            raise ValueError("decorr must be nonsingular at every frequency")
        return value

    @field_validator("loadings")
    @classmethod
    def _check_loadings(cls, value: np.ndarray) -> np.ndarray:
        value = _finite("loadings", np.asarray(value, dtype=float))
        if value.ndim != 3 or np.any(value < 0):
            raise ValueError("loadings must be a nonnegative (I, M, N) array")
        return value

    @field_validator("acts")
    @classmethod
    def _check_acts(cls, value: np.ndarray) -> np.ndarray:
        value = _finite("acts", np.asarray(value, dtype=float))
        if value.ndim != 3 or np.any(value <= 0):
            raise ValueError("acts must be a strictly positive (I, N, J) array")
        return value

    @model_validator(mode="after")
    def _check_shapes(self):
        i, m, _ = self.decorr.shape
        if self.loadings.shape[:2] != (i, m):
            raise ValueError(f"loadings {self.loadings.shape} disagree with decorr {(i, m, m)}")
        if self.acts.shape[:2] != (i, self.loadings.shape[2]):
            raise ValueError(f"acts {self.acts.shape} disagree with loadings")
        return self

    @property
    def freq_bins(self) -> int:
        return self.decorr.shape[0]

    @property
    def dim(self) -> int:
        return self.decorr.shape[1]

    @property
    def n_sources(self) -> int:
        return self.loadings.shape[2]

    @property
    def frames(self) -> int:
        return self.acts.shape[2]

    def select(self, freqs: Sequence[int] | slice) -> "FastFcaParams":
        return FastFcaParams(
            decorr=self.decorr[freqs], loadings=self.loadings[freqs], acts=self.acts[freqs]
        )

    @classmethod
    def concat(cls, parts: Sequence["FastFcaParams"]) -> "FastFcaParams":
        return cls(
            decorr=np.concatenate([p.decorr for p in parts]),
            loadings=np.concatenate([p.loadings for p in parts]),
            acts=np.concatenate([p.acts for p in parts]),
        )


class DecorrelatedStats(ArrayModel):
    powers: np.ndarray = Field(..., description="The decorrelated powers U (I, M, J)")
    mix_vars: np.ndarray = Field(..., description="The model variances sigma^2 (I, M, J)")

    @model_validator(mode="after")
    def _check_values(self):
        if np.any(self.powers < 0) or np.any(self.mix_vars <= 0):
            raise ValueError("powers must be nonnegative and mix_vars strictly positive")
        return self


class NmfFactors(ArrayModel):
    templates: np.ndarray = Field(..., description="The spectral templates T (N, I, K)")
    activations: np.ndarray = Field(..., description="The temporal activations V (N, K, J)")

    @model_validator(mode="after")
    def _check_factors(self):
        if self.templates.ndim != 3 or self.activations.ndim != 3:
            raise ValueError("templates and activations must be 3-D")
        if self.templates.shape[0] != self.activations.shape[0]:
            raise ValueError("templates and activations disagree on the number of sources")
        if self.templates.shape[2] != self.activations.shape[1]:
            raise ValueError("templates and activations disagree on the number of components")
        if np.any(self.templates <= 0) or np.any(self.activations <= 0):
            raise ValueError("NMF factors must be strictly positive")
        _finite("templates", self.templates)
        _finite("activations", self.activations)
        return self

    @property
    def n_components(self) -> int:
        return self.templates.shape[2]


class FastMnmfParams(ArrayModel):
    decorr: np.ndarray = Field(..., description="The decorrelation matrices W (I, M, M)")
    loadings: np.ndarray = Field(..., description="The diagonal loadings L (I, M, N)")
    nmf: NmfFactors = Field(..., description="The per-source NMF factors")

    @model_validator(mode="after")
    def _check_shapes(self):
        i, m, n = self.loadings.shape
        if self.decorr.shape != (i, m, m):
            raise ValueError(f"decorr {self.decorr.shape} disagrees with loadings")
        if self.nmf.templates.shape[:2] != (n, i):
            raise ValueError(f"templates {self.nmf.templates.shape} disagree with loadings")
        if np.any(self.loadings <= 0):
            raise ValueError("loadings must be strictly positive")
        return self

    @property
    def freq_bins(self) -> int:
        return self.decorr.shape[0]

    @property
    def dim(self) -> int:
        return self.decorr.shape[1]

    @property
    def n_sources(self) -> int:
        return self.loadings.shape[2]


class FitResult(ArrayModel):
    method: str = Field(..., description="The estimator that produced the result")
    params: FcaParams | FastFcaParams | FastMnmfParams = Field(
        ..., description="The estimated parameters"
    )
    nll_trace: List[float] = Field(..., description="The NLL at init and after each iteration")
    elapsed: float = Field(0.0, description="The wall-clock fit time in seconds")


class InitResult(ArrayModel):
    fca: FcaParams = Field(..., description="The FCA initialization")
    fastfca: FastFcaParams = Field(..., description="The FastFCA initialization")
    floored: bool = Field(False, description="Whether any SCM estimate had to be floored")
    masks: np.ndarray | None = Field(None, description="The time-frequency masks (I, J, N)")


class SyntheticScene(ArrayModel):
    kind: SceneKind = Field(..., description="The generative model of the scene")
    seed: int = Field(..., description="The seed the scene was drawn with")
    mixture: Spectrogram = Field(..., description="The mixture spectrogram")
    images: List[Spectrogram] = Field(..., description="The true source-image spectrograms")
    truth_fca: FcaParams = Field(..., description="The true full-rank parameters")
    truth_fastfca: FastFcaParams | None = Field(
        None, description="The true jointly-diagonalizable parameters"
    )
    mixing: np.ndarray | None = Field(None, description="The instantaneous mixing matrix (M, N)")

    @model_validator(mode="after")
    def _check_mixture(self):
        if not np.array_equal(self.mixture.values, self.images_array.sum(axis=0)):
            raise ValueError("mixture must equal the sum of the source images")
        return self

    @property
    def images_array(self) -> np.ndarray:
        return np.stack([image.values for image in self.images])

    @property
    def n_sources(self) -> int:
        return len(self.images)


class BenchmarkResult(BaseModel):
    method: str = Field(..., description="The benchmarked estimator")
    M: int = Field(..., description="The number of channels")
    N: int = Field(..., description="The number of sources")
    I: int = Field(..., description="The number of frequency bins")  # noqa: E741
    J: int = Field(..., description="The number of frames")
    iters: int = Field(..., description="The number of iterations")
    workers: int = Field(1, description="The worker pool size")
    wall_seconds: float = Field(..., description="The total fit time")
    rtf: float = Field(..., description="The real-time factor")
    per_iteration_ms: float = Field(..., description="The mean time per iteration")
    nll_first: float | None = Field(None, description="The NLL at initialization")
    nll_last: float | None = Field(None, description="The final NLL")
    sdr_mean: float | None = Field(None, description="The mean SI-SDR of separated images")
    scm_error: float | None = Field(None, description="The SCM error against the truth")
