"""Main Separator class tying the STFT front end to the estimators."""

from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from jd_bss.core.evalsynth import (
    rtf_benchmark,
    scm_error,
    separation_scores,
    synth_scene,
)
from jd_bss.core.exceptions import DomainError, UsageError
from jd_bss.core.schemas import (
    BenchmarkResult,
    FitResult,
    MultichannelWave,
    SeparationConfig,
    Spectrogram,
)
from jd_bss.core.sigmodel import sample_covs
from jd_bss.managers.estimator_manager import (
    FASTFCA_METHODS,
    FCA_METHODS,
    EstimatorManager,
    as_fca_params,
)
from jd_bss.managers.storage_manager import StorageManager
from jd_bss.utils.stftio import istft, stft


class Separator:
    """Main class for fitting a spatial model and separating multichannel mixtures."""

    def __init__(self, config: SeparationConfig):
        """
        Initialize Separator.

        Args:
            config: Separation configuration
        """
        self.config = config
        self.estimator_manager = EstimatorManager(config=self.config.fit)
        self.storage_manager: Optional[StorageManager] = (
            StorageManager(config.output.out_dir) if config.output.out_dir else None
        )
        self._last_result: Optional[FitResult] = None

    def analyze(self, wave: MultichannelWave) -> Spectrogram:
        """STFT of a multichannel mixture with the configured frame parameters."""
        if wave.channels < 2:
            raise UsageError(f"a multichannel mixture is required, got {wave.channels} channel")
        stft_cfg = self.config.stft
        return stft(wave, stft_cfg.frame_len, stft_cfg.shift, stft_cfg.padded)

    def synthesize(self, spec: Spectrogram, out_len: int, sample_rate: int) -> MultichannelWave:
        cfg = self.config.stft
        return istft(spec, cfg.frame_len, cfg.shift, out_len, sample_rate, cfg.padded)

    def fit_spectrogram(
        self, spec: Spectrogram, images: Optional[Sequence[Spectrogram]] = None
    ) -> FitResult:
        """
        Initialize and fit the configured estimator on a mixture spectrogram.

        Per-frequency estimators are followed by a permutation alignment
        across frequencies unless oracle images were supplied.

        Args:
            spec: Mixture spectrogram
            images: Optional true source images for oracle initialization

        Returns:
            FitResult: Fitted parameters and NLL trace
        """
        block_size = self.config.fit.block_size
        covs = sample_covs(spec, block_size)
        init = self.estimator_manager.initialize(spec, block_size=block_size, images=images)
        result = self.estimator_manager.fit(covs, init)

        method = self.config.fit.method
        if images is None and (method in FCA_METHODS or method in FASTFCA_METHODS):
            aligned = self.estimator_manager.align(result.params)
            result = result.model_copy(update={"params": aligned})
        self._last_result = result
        return result

    def fit(self, wave: MultichannelWave) -> FitResult:
        """
        Fit the configured estimator to a multichannel wave.

        Args:
            wave: Mixture

        Returns:
            FitResult: Fitted parameters and NLL trace
        """
        return self.fit_spectrogram(self.analyze(wave))

    def separate(self, wave: MultichannelWave) -> Tuple[List[MultichannelWave], FitResult]:
        """
        Separate a mixture into M-channel source images.

        Args:
            wave: Mixture

        Returns:
            Tuple: One image wave per source (same length as the input) and the fit
        """
        spec = self.analyze(wave)
        result = self.fit_spectrogram(spec)
        images = self.estimator_manager.separate(
            spec, result.params, block_size=self.config.fit.block_size
        )
        outputs = [self.synthesize(image, wave.n_samples, wave.sample_rate) for image in images]
        logger.info(
            f"Separated {wave.duration:.2f}s of {wave.channels}-channel audio "
            f"into {len(outputs)} sources"
        )
        return outputs, result

    def evaluate(
        self,
        estimates: Sequence[MultichannelWave],
        references: Sequence[MultichannelWave],
        estimated_scms: Optional[np.ndarray] = None,
        true_scms: Optional[np.ndarray] = None,
    ) -> Dict[str, Any]:
        """
        Score separated images against references.

        Args:
            estimates: Estimated source images
            references: True source images
            estimated_scms: Optional estimated SCMs (I, N, M, M)
            true_scms: Optional true SCMs (I, N, M, M)

        Returns:
            Dict[str, Any]: Per-source SI-SDR, its mean, the permutation and the SCM error
        """
        if len(estimates) != len(references):
            raise DomainError(f"{len(estimates)} estimates for {len(references)} references")
        n = min(min(e.n_samples for e in estimates), min(r.n_samples for r in references))
        scores, perm = separation_scores(
            [e.samples[:, :n] for e in estimates], [r.samples[:, :n] for r in references]
        )
        report: Dict[str, Any] = {
            "sdr": scores.tolist(),
            "sdr_mean": float(np.mean(scores)),
            "permutation": perm.tolist(),
        }
        if estimated_scms is not None and true_scms is not None:
            report["scm_error"] = scm_error(estimated_scms, true_scms)
            report["scm_error_label"] = "synthetic (non-comparable)"
        return report

    def benchmark(
        self,
        methods: Sequence[str],
        dims: Sequence[Tuple[int, int, int, int]],
        n_iter: int,
        seed: int = 0,
        kind: str = "jd_exact",
    ) -> List[BenchmarkResult]:
        """
        RTF table across methods and scene sizes.

        Args:
            methods: Estimator ids
            dims: (M, N, I, J) tuples
            n_iter: Iterations per run
            seed: Scene seed
            kind: Scene kind

        Returns:
            List[BenchmarkResult]: One row per (dims, method)
        """
        stft_cfg = self.config.stft
        rows = []
        for m_dim, n_src, n_freq, n_frames in dims:
            scene = synth_scene(kind, m_dim, n_src, n_freq, n_frames, seed=seed)
            for method in methods:
                row = rtf_benchmark(
                    method,
                    scene,
                    n_iter=n_iter,
                    workers=self.config.fit.workers,
                    shift=stft_cfg.shift,
                    sample_rate=stft_cfg.sample_rate,
                )
                logger.info(
                    f"{method} M={m_dim} N={n_src} I={n_freq} J={n_frames}: "
                    f"{row.per_iteration_ms:.2f} ms/iter, RTF {row.rtf:.4f}"
                )
                rows.append(row)
        return rows

    def estimated_scms(self) -> Optional[np.ndarray]:
        """Full-rank SCMs of the last fit, if any."""
        if self._last_result is None:
            return None
        return as_fca_params(self._last_result.params).scms

    def get_stats(self) -> Dict[str, Any]:
        """
        Get statistics about the separator and its last run.

        Returns:
            Dict[str, Any]: Configuration and last-run figures
        """
        stats: Dict[str, Any] = {
            "stft": self.config.stft.model_dump(),
            "estimator": self.estimator_manager.get_info(),
            "storage": self.storage_manager.get_info() if self.storage_manager else None,
        }
        if self._last_result is not None:
            stats["last_run"] = {
                "method": self._last_result.method,
                "iterations": len(self._last_result.nll_trace) - 1,
                "nll_first": self._last_result.nll_trace[0],
                "nll_last": self._last_result.nll_trace[-1],
                "elapsed": self._last_result.elapsed,
            }
        return stats
