"""Command-line interface for jd-bss: separate, fit, synth, bench and eval."""

import argparse
import json
import re
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import soundfile as sf
from loguru import logger
from pydantic import ValidationError

from jd_bss.core.evalsynth import synth_scene
from jd_bss.core.exceptions import DomainError, NumericalError, UsageError, WavFormatError
from jd_bss.core.schemas import METHODS, MultichannelWave, SeparationConfig
from jd_bss.core.separator import Separator
from jd_bss.managers.estimator_manager import as_fca_params
from jd_bss.managers.storage_manager import StorageManager
from jd_bss.utils.helpers import load_config, load_log_level
from jd_bss.utils.logger import get_logger, setup_logger
from jd_bss.utils.stftio import downmix, istft, read_wav, write_wav

SOURCE_PATTERN = re.compile(r"source_(\d+)")


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--workers", type=int, default=None, help="Frequency-parallel workers")
    parser.add_argument("--log-level", default=None, help="Logging level (default: INFO)")
    parser.add_argument("--log-file", default=None, help="Optional log file")


def _add_stft(parser: argparse.ArgumentParser):
    parser.add_argument("--frame", type=int, default=None, help="Frame length (default: 1024)")
    parser.add_argument("--shift", type=int, default=None, help="Frame shift (default: 512)")


def _add_fit(parser: argparse.ArgumentParser):
    parser.add_argument("--method", choices=METHODS, default=None, help="Estimator")
    parser.add_argument("--sources", type=int, required=True, help="Number of sources N")
    parser.add_argument("--iters", type=int, default=None, help="Iterations (default: 20)")
    parser.add_argument("--init", choices=("cluster", "random"), default=None)
    parser.add_argument("--block", type=int, default=None, help="Frames per covariance block")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--components", type=int, default=None, help="NMF components (fastmnmf)")
    parser.add_argument("--jd-pair", choices=("pair_sum", "first_two"), default=None)
    _add_stft(parser)


def _dims(value: str) -> tuple:
    try:
        dims = tuple(int(v) for v in value.split(","))
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected M,N,I,J, got {value!r}") from e
    if len(dims) != 4 or min(dims) < 1:
        raise argparse.ArgumentTypeError(f"expected four positive integers M,N,I,J, got {value!r}")
    return dims


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="jd-bss", description="Multichannel blind source separation with FCA and FastFCA"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("separate", help="Separate a multichannel WAV into source images")
    p.add_argument("input", help="Input WAV (PCM16 or float32, M >= 2 channels)")
    p.add_argument("out_dir", help="Output directory")
    p.add_argument("--downmix", action="store_true", help="Also write mono reference-channel files")
    _add_fit(p)
    _add_common(p)

    p = sub.add_parser("fit", help="Fit parameters without writing separated audio")
    p.add_argument("input", help="Input WAV")
    p.add_argument("out_dir", help="Output directory")
    _add_fit(p)
    _add_common(p)

    p = sub.add_parser("synth", help="Write a synthetic scene with its true parameters")
    p.add_argument("out_dir", help="Output directory")
    p.add_argument("--kind", choices=("jd_exact", "fullrank", "instantaneous"), default="jd_exact")
    p.add_argument("--channels", type=int, default=2, help="Number of channels M")
    p.add_argument("--sources", type=int, default=2, help="Number of sources N")
    p.add_argument("--frames", type=int, default=64, help="Number of frames J")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--smoothness", type=float, default=2.0, help="Envelope smoothing width")
    _add_stft(p)
    _add_common(p)

    p = sub.add_parser("bench", help="Real-time factor table across methods and sizes")
    p.add_argument(
        "--methods", default="fca-em,fastfca-mm", help="Comma-separated estimator ids"
    )
    p.add_argument(
        "--dims", type=_dims, action="append", default=None, help="M,N,I,J (repeatable)"
    )
    p.add_argument("--iters", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", action="store_true", help="Print the rows as JSON on stdout")
    p.add_argument("--out-dir", default=None, help="Directory for bench.csv")
    _add_common(p)

    p = sub.add_parser("eval", help="Score separated images against a synthetic truth")
    p.add_argument("estimates", help="Directory written by separate")
    p.add_argument("truth", help="Directory written by synth")
    p.add_argument("--metrics", default="sdr,scm,nll", help="Comma-separated subset of sdr,scm,nll")
    _add_common(p)
    return parser


def _config(args: argparse.Namespace, **extra: Any) -> SeparationConfig:
    return load_config(
        method=getattr(args, "method", None),
        n_sources=getattr(args, "sources", None),
        n_iter=getattr(args, "iters", None),
        init=getattr(args, "init", None),
        block_size=getattr(args, "block", None),
        seed=getattr(args, "seed", None),
        n_components=getattr(args, "components", None),
        jd_pair=getattr(args, "jd_pair", None),
        frame_len=getattr(args, "frame", None),
        shift=getattr(args, "shift", None),
        workers=args.workers,
        log_level=args.log_level,
        **extra,
    )


def _run_report(config: SeparationConfig, result, wave: MultichannelWave) -> Dict[str, Any]:
    return {
        "method": result.method,
        "nll_trace": result.nll_trace,
        "elapsed": result.elapsed,
        "n_samples": wave.n_samples,
        "sample_rate": wave.sample_rate,
        "channels": wave.channels,
        "config": config.model_dump(),
    }


def cmd_separate(args: argparse.Namespace) -> int:
    config = _config(args, out_dir=args.out_dir, downmix=args.downmix)
    wave = read_wav(args.input)
    separator = Separator(config)
    outputs, result = separator.separate(wave)

    storage = separator.storage_manager
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files: List[str] = []
    for n, image in enumerate(outputs):
        path = out_dir / f"source_{n}.wav"
        write_wav(path, image)
        files.append(path.name)
        if config.output.downmix:
            mono = out_dir / f"source_{n}_mono.wav"
            write_wav(mono, downmix(image))
            files.append(mono.name)
    storage.save_params("params", result.params)
    report = _run_report(config, result, wave)
    report["outputs"] = files
    storage.write_json("run", report)
    logger.info(f"Wrote {len(outputs)} source images to {out_dir}")
    return 0


def cmd_fit(args: argparse.Namespace) -> int:
    config = _config(args, out_dir=args.out_dir)
    wave = read_wav(args.input)
    separator = Separator(config)
    result = separator.fit(wave)
    separator.storage_manager.save_params("params", result.params)
    separator.storage_manager.write_json("run", _run_report(config, result, wave))
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    config = _config(args, out_dir=args.out_dir)
    stft_cfg = config.stft
    scene = synth_scene(
        args.kind,
        args.channels,
        args.sources,
        stft_cfg.frame_len // 2 + 1,
        args.frames,
        seed=args.seed,
        smoothness=args.smoothness,
        frame_len=stft_cfg.frame_len,
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def to_wave(spec):
        return istft(
            spec,
            stft_cfg.frame_len,
            stft_cfg.shift,
            sample_rate=stft_cfg.sample_rate,
            padded=stft_cfg.padded,
        )

    mixture = to_wave(scene.mixture)
    write_wav(out_dir / "mixture.wav", mixture)
    for n, image in enumerate(scene.images):
        write_wav(out_dir / f"source_{n}.wav", to_wave(image))

    storage = StorageManager(out_dir)
    storage.save_params("truth", scene.truth_fca, extra={"kind": scene.kind, "seed": scene.seed})
    if scene.truth_fastfca is not None:
        storage.save_params("truth_fastfca", scene.truth_fastfca)
    summary = {
        "kind": scene.kind,
        "seed": scene.seed,
        "M": scene.mixture.channels,
        "N": scene.n_sources,
        "I": scene.mixture.freq_bins,
        "J": scene.mixture.frames,
        "n_samples": mixture.n_samples,
        "sample_rate": mixture.sample_rate,
        "mixing": None if scene.mixing is None else np.abs(scene.mixing).tolist(),
    }
    storage.write_json("scene", summary)
    print(json.dumps(summary))
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise UsageError(f"unknown methods: {', '.join(unknown)}")
    dims = args.dims or [(4, 4, 257, 128)]

    config = load_config(n_sources=1, workers=args.workers, log_level=args.log_level)
    rows = Separator(config).benchmark(methods, dims, n_iter=args.iters, seed=args.seed)
    payload = [row.model_dump() for row in rows]
    if args.out_dir:
        StorageManager(args.out_dir).write_csv("bench", payload)
    if args.json:
        print(json.dumps(payload))
    else:
        for row in rows:
            print(
                f"{row.method:>11} M={row.M} N={row.N} I={row.I} J={row.J} "
                f"{row.per_iteration_ms:9.2f} ms/iter  RTF {row.rtf:.4f}"
            )
    return 0


def _source_files(directory: Path) -> List[Path]:
    matches = [
        (int(m.group(1)), path)
        for path in directory.glob("source_*.wav")
        if (m := SOURCE_PATTERN.fullmatch(path.stem))
    ]
    if not matches:
        raise UsageError(f"no source_<n>.wav files in {directory}")
    return [path for _, path in sorted(matches)]


def _load_scms(storage: StorageManager, names: Sequence[str]) -> Optional[np.ndarray]:
    for name in names:
        if storage.has(name):
            return as_fca_params(storage.load_params(name)).scms
    return None


def cmd_eval(args: argparse.Namespace) -> int:
    metrics = {m.strip() for m in args.metrics.split(",") if m.strip()}
    unknown = metrics - {"sdr", "scm", "nll"}
    if unknown:
        raise UsageError(f"unknown metrics: {', '.join(sorted(unknown))}")
    est_dir = Path(args.estimates)
    truth_dir = Path(args.truth)
    for directory in (est_dir, truth_dir):
        if not directory.is_dir():
            raise UsageError(f"missing directory: {directory}")

    est_store = StorageManager(est_dir)
    truth_store = StorageManager(truth_dir)
    config = load_config(n_sources=1, workers=args.workers, log_level=args.log_level)
    separator = Separator(config)

    report: Dict[str, Any] = {}
    if metrics & {"sdr", "scm"}:
        estimates = [read_wav(path) for path in _source_files(est_dir)]
        references = [read_wav(path) for path in _source_files(truth_dir)]
        est_scms = true_scms = None
        if "scm" in metrics:
            est_scms = _load_scms(est_store, ("params", "truth"))
            true_scms = _load_scms(truth_store, ("truth",))
            if est_scms is None or true_scms is None:
                raise UsageError("scm metric needs params.json and truth.json manifests")
        scores = separator.evaluate(estimates, references, est_scms, true_scms)
        if "sdr" not in metrics:
            scores = {k: v for k, v in scores.items() if k.startswith("scm")}
        report.update(scores)

    if "nll" in metrics:
        if est_store.has("run"):
            trace = est_store.read_json("run")["nll_trace"]
            steps = np.diff(trace)
            report["nll_first"] = trace[0]
            report["nll_last"] = trace[-1]
            report["nll_nonincreasing"] = bool(
                np.all(steps <= 1e-8 * np.abs(np.asarray(trace[:-1])))
            )
        else:
            logger.warning(f"No run.json in {est_dir}, skipping the nll metric")
            report["nll_first"] = report["nll_last"] = None

    print(json.dumps(report))
    return 0


COMMANDS = {
    "separate": cmd_separate,
    "fit": cmd_fit,
    "synth": cmd_synth,
    "bench": cmd_bench,
    "eval": cmd_eval,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logger(level=load_log_level(args.log_level), log_file=args.log_file)
    log = get_logger(args.command)

    try:
        return COMMANDS[args.command](args)
    except (NumericalError, np.linalg.LinAlgError) as e:
        log.error(f"Numerical failure: {e}")
        return 1
    except (UsageError, DomainError, WavFormatError, ValidationError) as e:
        log.error(str(e))
        return 2
    except (OSError, sf.SoundFileError) as e:
        log.error(f"I/O failure: {e}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
