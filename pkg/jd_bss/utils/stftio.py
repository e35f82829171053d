"""STFT analysis/synthesis and multichannel WAV I/O."""

import math
from pathlib import Path

import numpy as np
import soundfile as sf
from loguru import logger
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import get_window

from jd_bss.core.exceptions import DomainError, WavFormatError
from jd_bss.core.schemas import MultichannelWave, Spectrogram

SUPPORTED_SUBTYPES = ("PCM_16", "FLOAT")


def sqrt_hann(frame_len: int) -> np.ndarray:
    """Periodic square-root Hann window; its square is COLA at 50% overlap."""
    return np.sqrt(get_window("hann", frame_len, fftbins=True))


def _check_frames(frame_len: int, shift: int) -> None:
    if frame_len < 2 or frame_len & (frame_len - 1):
        raise DomainError(f"frame_len must be a power of two, got {frame_len}")
    if shift * 2 != frame_len:
        raise DomainError(f"shift must be frame_len / 2, got {shift} for frame_len {frame_len}")


def frame_count(n_samples: int, frame_len: int, shift: int, padded: bool = True) -> int:
    """
    Number of frames the analysis produces.

    Args:
        n_samples: Signal length
        frame_len: Frame length
        shift: Frame shift
        padded: Whether half a frame of zeros is added at both ends

    Returns:
        int: Number of frames J
    """
    _check_frames(frame_len, shift)
    if padded:
        return math.ceil(n_samples / shift) + 1
    if n_samples < frame_len:
        raise DomainError(f"signal of {n_samples} samples is shorter than one frame")
    return (n_samples - frame_len) // shift + 1


def stft(
    wave: MultichannelWave, frame_len: int = 1024, shift: int = 512, padded: bool = True
) -> Spectrogram:
    """
    One-sided STFT with a square-root Hann analysis window.

    Args:
        wave: Multichannel time-domain signal
        frame_len: Frame length (power of two)
        shift: Frame shift (frame_len / 2)
        padded: Whether to zero-pad ``shift`` samples on the left and enough on the
            right that every sample lies where two frames overlap

    Returns:
        Spectrogram: Coefficients of shape (M, frame_len/2 + 1, J)
    """
    _check_frames(frame_len, shift)
    n = wave.n_samples
    if n < frame_len:
        raise DomainError(f"signal of {n} samples is shorter than one frame ({frame_len})")

    n_frames = frame_count(n, frame_len, shift, padded)
    samples = wave.samples
    if padded:
        right = (n_frames - 1) * shift + frame_len - n - shift
        samples = np.pad(samples, ((0, 0), (shift, right)))

    frames = sliding_window_view(samples, frame_len, axis=-1)[:, ::shift][:, :n_frames]
    coefs = np.fft.rfft(frames * sqrt_hann(frame_len), axis=-1)
    return Spectrogram(values=coefs.transpose(0, 2, 1), frame_len=frame_len)


def istft(
    spec: Spectrogram,
    frame_len: int = 1024,
    shift: int = 512,
    out_len: int | None = None,
    sample_rate: int = 16000,
    padded: bool = True,
) -> MultichannelWave:
    """
    Weighted overlap-add synthesis with a square-root Hann window.

    Args:
        spec: Spectrogram produced by ``stft`` with the same parameters
        frame_len: Frame length
        shift: Frame shift
        out_len: Number of samples to return (defaults to the analysed length)
        sample_rate: Sample rate of the returned wave
        padded: Whether the analysis used padding

    Returns:
        MultichannelWave: Reconstructed signal
    """
    _check_frames(frame_len, shift)
    if spec.freq_bins != frame_len // 2 + 1:
        raise DomainError(
            f"spectrogram has {spec.freq_bins} bins, expected {frame_len // 2 + 1} "
            f"for frame_len {frame_len}"
        )
    m, _, n_frames = spec.values.shape
    frames = np.fft.irfft(spec.values.transpose(0, 2, 1), n=frame_len, axis=-1)
    frames = frames * sqrt_hann(frame_len)

    out = np.zeros((m, (n_frames + 1) * shift))
    out[:, : n_frames * shift] += frames[..., :shift].reshape(m, -1)
    out[:, shift:] += frames[..., shift:].reshape(m, -1)

    start = shift if padded else 0
    if out_len is None:
        out_len = out.shape[1] - 2 * start
    if start + out_len > out.shape[1]:
        raise DomainError(f"out_len {out_len} exceeds the {out.shape[1] - start} synthesized")
    return MultichannelWave(sample_rate=sample_rate, samples=out[:, start : start + out_len])


def read_wav(path: str | Path) -> MultichannelWave:
    """
    Read a PCM16 or float32 WAV file.

    Args:
        path: File path

    Returns:
        MultichannelWave: Samples scaled to [-1, 1]
    """
    try:
        info = sf.info(str(path))
        if info.format != "WAV" or info.subtype not in SUPPORTED_SUBTYPES:
            raise WavFormatError(
                f"{path}: unsupported codec {info.format}/{info.subtype}, "
                f"expected WAV with one of {SUPPORTED_SUBTYPES}"
            )
        data, sample_rate = sf.read(str(path), dtype="float64", always_2d=True)
    except (RuntimeError, sf.SoundFileError) as e:
        raise WavFormatError(f"{path}: malformed WAV file: {e}") from e

    logger.debug(f"Read {path}: {data.shape[1]} channels, {data.shape[0]} samples")
    return MultichannelWave(sample_rate=sample_rate, samples=data.T)


def write_wav(path: str | Path, wave: MultichannelWave, subtype: str = "FLOAT") -> None:
    """
    Write a multichannel wave as an interleaved WAV file.

    Args:
        path: File path
        wave: Signal to write
        subtype: "FLOAT" (IEEE float32) or "PCM_16"
    """
    if subtype not in SUPPORTED_SUBTYPES:
        raise WavFormatError(f"unsupported codec {subtype}, expected one of {SUPPORTED_SUBTYPES}")
    sf.write(str(path), wave.samples.T, wave.sample_rate, subtype=subtype, format="WAV")
    logger.debug(f"Wrote {path}: {wave.channels} channels, {wave.n_samples} samples")


def downmix(wave: MultichannelWave, channel: int = 0) -> MultichannelWave:
    """Mono reference-channel view of a multichannel wave."""
    samples = wave.samples[channel : channel + 1]
    return MultichannelWave(sample_rate=wave.sample_rate, samples=samples)
