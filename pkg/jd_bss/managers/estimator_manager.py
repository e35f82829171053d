"""Estimator Manager for dispatching fits across methods and frequency chunks."""

import time
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Dict, List, Sequence

import numpy as np
from loguru import logger

from jd_bss.core.exceptions import DomainError
from jd_bss.core.fastfca import (
    align_permutations,
    fastfca_fit,
    fastfca_separate,
    ica_mode_fit,
    permute_sources,
)
from jd_bss.core.fastmnmf import (
    fastmnmf_fit,
    fastmnmf_init_from_fastfca,
    fastmnmf_init_random,
    fastmnmf_separate,
    to_fastfca_params,
)
from jd_bss.core.fca import fca_fit, fca_separate
from jd_bss.core.initialization import init_oracle, init_random, init_spatial_cluster
from jd_bss.core.schemas import (
    METHODS,
    FastFcaParams,
    FastMnmfParams,
    FcaParams,
    FitConfig,
    FitResult,
    InitResult,
    SampleCovSet,
    Spectrogram,
)
from jd_bss.core.sigmodel import positive_floor, sample_covs, to_fca_params

Params = FcaParams | FastFcaParams | FastMnmfParams

FCA_METHODS = ("fca-em", "fca-mm")
FASTFCA_METHODS = ("fastfca-em", "fastfca-mm", "ica")


def as_fca_params(params: Params) -> FcaParams:
    """The full-rank view of any parameter set."""
    if isinstance(params, FastMnmfParams):
        params = to_fastfca_params(params)
    if isinstance(params, FastFcaParams):
        return to_fca_params(params)
    return params


def block_average(values: np.ndarray, block_size: int, axis: int) -> np.ndarray:
    """Average consecutive groups of ``block_size`` entries along ``axis``."""
    if block_size == 1:
        return values
    n = values.shape[axis]
    starts = np.arange(0, n, block_size)
    counts = np.diff(np.append(starts, n))
    shape = [1] * values.ndim
    shape[axis] = len(counts)
    return np.add.reduceat(values, starts, axis=axis) / counts.reshape(shape)


class EstimatorManager:
    """Manages estimator configuration, initialization and execution."""

    def __init__(self, config: FitConfig):
        """
        Initialize Estimator Manager.

        Args:
            config: Estimator configuration
        """
        self.config = config
        self._check_method(config.method)
        logger.info(f"Estimator Manager initialized with config: {self.config}")

    @staticmethod
    def _check_method(method: str):
        if method not in METHODS:
            raise DomainError(f"Unsupported method: {method}")

    def initialize(
        self,
        spec: Spectrogram,
        block_size: int = 1,
        images: Sequence[Spectrogram] | None = None,
    ) -> Params:
        """
        Build initial parameters for the configured method.

        Args:
            spec: Mixture spectrogram
            block_size: Frames per covariance block
            images: True source images; when given, the oracle initializer is used

        Returns:
            Parameters matching the configured method with one activation per block
        """
        cfg = self.config
        if images is not None:
            result = init_oracle(images, jd_pair=cfg.jd_pair)
        elif cfg.init == "cluster":
            result = init_spatial_cluster(spec, cfg.n_sources, seed=cfg.seed, jd_pair=cfg.jd_pair)
        elif cfg.init == "random":
            if cfg.method == "fastmnmf":
                frames = -(-spec.frames // block_size)
                return fastmnmf_init_random(
                    spec.freq_bins, frames, spec.channels, cfg.n_sources, cfg.n_components, cfg.seed
                )
            scale = float(np.mean(np.abs(spec.values) ** 2))
            result = init_random(
                spec.freq_bins,
                spec.frames,
                spec.channels,
                cfg.n_sources,
                seed=cfg.seed,
                scale=scale if scale > 0 else 1.0,
            )
        else:
            raise DomainError(f"Unsupported init: {cfg.init}")

        result = self._to_blocks(result, block_size)
        if result.floored:
            logger.warning("Initialization floored at least one SCM estimate")
        if cfg.method in FCA_METHODS:
            return result.fca
        if cfg.method == "fastmnmf":
            return self.warm_start(sample_covs(spec, block_size), result.fastfca)
        return result.fastfca

    @staticmethod
    def _to_blocks(result: InitResult, block_size: int) -> InitResult:
        if block_size == 1:
            return result
        fca = FcaParams(
            scms=result.fca.scms,
            powers=positive_floor(block_average(result.fca.powers, block_size, axis=1)),
        )
        fastfca = FastFcaParams(
            decorr=result.fastfca.decorr,
            loadings=result.fastfca.loadings,
            acts=positive_floor(block_average(result.fastfca.acts, block_size, axis=2)),
        )
        return InitResult(fca=fca, fastfca=fastfca, floored=result.floored, masks=result.masks)

    def _chunks(self, n_freq: int) -> List[slice]:
        size = self.config.chunk_size
        return [slice(start, min(start + size, n_freq)) for start in range(0, n_freq, size)]

    def _run_chunked(
        self,
        covs: SampleCovSet,
        init: FcaParams | FastFcaParams,
        fit_chunk: Callable[[SampleCovSet, Any, int], FitResult],
    ) -> FitResult:
        chunks = self._chunks(covs.freq_bins)
        start = time.perf_counter()

        def run(index: int) -> FitResult:
            part = chunks[index]
            return fit_chunk(covs.select(part), init.select(part), self.config.seed + index)

        if self.config.workers == 1 or len(chunks) == 1:
            results = [run(index) for index in range(len(chunks))]
        else:
            with ThreadPoolExecutor(max_workers=self.config.workers) as executor:
                results = list(executor.map(run, range(len(chunks))))

        trace = np.zeros(len(results[0].nll_trace))
        for result in results:
            trace += np.asarray(result.nll_trace)
        params_type = type(results[0].params)
        return FitResult(
            method=results[0].method,
            params=params_type.concat([result.params for result in results]),
            nll_trace=trace.tolist(),
            elapsed=time.perf_counter() - start,
        )

    def warm_start(self, covs: SampleCovSet, init: FastFcaParams) -> FastMnmfParams:
        """
        FastMNMF parameters from a briefly fitted FastFCA model.

        Runs ``warm_start_iters`` IP+MM iterations (chunked like ``fit``), then
        aligns the sources and factors each activation spectrogram by IS-NMF.
        """
        cfg = self.config
        if cfg.warm_start_iters > 0:
            iters = cfg.warm_start_iters
            warmed = self._run_chunked(
                covs, init, lambda c, p, seed: fastfca_fit(c, p, iters, "ip_mm", seed)
            )
            logger.info(
                f"FastFCA warm start ({iters} iterations): "
                f"nll {warmed.nll_trace[0]:.4f} -> {warmed.nll_trace[-1]:.4f}"
            )
            init = warmed.params
        return fastmnmf_init_from_fastfca(init, cfg.n_components, seed=cfg.seed)

    def fit(self, covs: SampleCovSet, init: Params) -> FitResult:
        """
        Run the configured estimator.

        Per-frequency methods run on chunks of ``chunk_size`` bins in a thread
        pool of ``workers`` threads; their NLL traces are summed in chunk order.

        Args:
            covs: Observation (or block) covariances
            init: Initial parameters of the matching type

        Returns:
            FitResult: Final parameters and NLL trace
        """
        cfg = self.config
        method = cfg.method
        n_iter = cfg.n_iter
        logger.info(
            f"Fitting {method}: I={covs.freq_bins} J={covs.frames} M={covs.dim} "
            f"N={cfg.n_sources} iters={n_iter} workers={cfg.workers}"
        )

        if method in FCA_METHODS:
            if not isinstance(init, FcaParams):
                raise DomainError(f"{method} needs FcaParams, got {type(init).__name__}")
            flavor = "em" if method == "fca-em" else "mm"
            result = self._run_chunked(
                covs,
                init,
                lambda c, p, seed: fca_fit(c, p, n_iter, flavor, cfg.use_updated_h),
            )
        elif method in ("fastfca-em", "fastfca-mm"):
            if not isinstance(init, FastFcaParams):
                raise DomainError(f"{method} needs FastFcaParams, got {type(init).__name__}")
            flavor = "ip_em" if method == "fastfca-em" else "ip_mm"
            result = self._run_chunked(
                covs, init, lambda c, p, seed: fastfca_fit(c, p, n_iter, flavor, seed)
            )
        elif method == "ica":
            if not isinstance(init, FastFcaParams):
                raise DomainError(f"ica needs FastFcaParams, got {type(init).__name__}")
            if cfg.n_sources != covs.dim:
                raise DomainError(f"ICA mode requires N == M, got N={cfg.n_sources}, M={covs.dim}")
            result = self._run_chunked(
                covs,
                init,
                lambda c, p, seed: ica_mode_fit(c, p.decorr, n_iter, cfg.n_sources, seed),
            )
        elif method == "fastmnmf":
            if isinstance(init, FastFcaParams):
                init = self.warm_start(covs, init)
            if not isinstance(init, FastMnmfParams):
                raise DomainError(f"fastmnmf needs FastMnmfParams, got {type(init).__name__}")
            result = fastmnmf_fit(covs, init, n_iter, seed=cfg.seed)
        else:
            raise DomainError(f"Unsupported method: {method}")

        logger.info(
            f"{method} finished in {result.elapsed:.3f}s: "
            f"nll {result.nll_trace[0]:.4f} -> {result.nll_trace[-1]:.4f}"
        )
        return result

    def align(self, params: Params) -> Params:
        """Resolve the per-frequency source permutation of FCA/FastFCA parameters."""
        if isinstance(params, FastFcaParams):
            return permute_sources(params, align_permutations(params.acts))
        if isinstance(params, FcaParams):
            perms = align_permutations(params.powers.transpose(0, 2, 1))
            return FcaParams(
                scms=np.take_along_axis(params.scms, perms[:, :, None, None], axis=1),
                powers=np.take_along_axis(params.powers, perms[:, None, :], axis=2),
            )
        return params

    def separate(
        self, spec: Spectrogram, params: Params, block_size: int = 1
    ) -> List[Spectrogram]:
        """
        Wiener-filter the mixture into source images.

        Args:
            spec: Mixture spectrogram
            params: Fitted parameters
            block_size: Frames per block the parameters were fitted on

        Returns:
            List[Spectrogram]: One M-channel image per source
        """
        if isinstance(params, FcaParams):
            return fca_separate(spec, params, block_size)
        if isinstance(params, FastFcaParams):
            return fastfca_separate(spec, params, block_size)
        if isinstance(params, FastMnmfParams):
            return fastmnmf_separate(spec, params, block_size)
        raise DomainError(f"Unsupported parameter type: {type(params).__name__}")

    def update_config(self, **kwargs):
        """
        Update estimator configuration.

        Args:
            **kwargs: Configuration parameters to update
        """
        if "method" in kwargs:
            self._check_method(kwargs["method"])
        self.config = FitConfig(**{**self.config.model_dump(), **kwargs})

    def get_info(self) -> Dict[str, Any]:
        """
        Get current estimator configuration info.

        Returns:
            Dict[str, Any]: Configuration details
        """
        return {
            "method": self.config.method,
            "n_sources": self.config.n_sources,
            "n_iter": self.config.n_iter,
            "init": self.config.init,
            "block_size": self.config.block_size,
            "workers": self.config.workers,
            "chunk_size": self.config.chunk_size,
            "warm_start_iters": self.config.warm_start_iters,
        }
