import json

import numpy as np
import pytest

from jd_bss.cli import COMMANDS, main
from jd_bss.core.schemas import MultichannelWave
from jd_bss.utils.stftio import read_wav, write_wav

STFT = ["--frame", "256", "--shift", "128"]


@pytest.fixture
def truth_dir(tmp_path, capsys):
    out = tmp_path / "truth"
    code = main(["synth", str(out), "--channels", "2", "--sources", "2", "--frames", "48", *STFT])
    assert code == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["I"] == 129 and summary["J"] == 48
    return out


def test_synth_writes_scene(truth_dir):
    names = {p.name for p in truth_dir.iterdir()}
    assert {"mixture.wav", "source_0.wav", "source_1.wav", "truth.json", "scene.json"} <= names
    assert "truth_fastfca.json" in names


def test_separate_then_eval(tmp_path, truth_dir, capsys):
    est = tmp_path / "est"
    code = main(
        [
            "separate",
            str(truth_dir / "mixture.wav"),
            str(est),
            "--sources",
            "2",
            "--iters",
            "3",
            "--downmix",
            "--workers",
            "1",
            *STFT,
        ]
    )
    assert code == 0
    run = json.loads((est / "run.json").read_text())
    assert len(run["nll_trace"]) == 4
    assert "source_1_mono.wav" in run["outputs"]
    assert (est / "params.json").exists()

    capsys.readouterr()
    assert main(["eval", str(est), str(truth_dir)]) == 0
    report = json.loads(capsys.readouterr().out)
    assert len(report["sdr"]) == 2
    assert report["scm_error"] >= 0
    assert report["scm_error_label"] == "synthetic (non-comparable)"
    assert report["nll_last"] <= report["nll_first"]


def test_fit_writes_parameters_only(tmp_path, truth_dir):
    out = tmp_path / "fit"
    args = ["fit", str(truth_dir / "mixture.wav"), str(out), "--sources", "2", "--iters", "2"]
    assert main([*args, "--method", "fca-em", *STFT]) == 0
    assert (out / "params.json").exists()
    assert not list(out.glob("source_*.wav"))


def test_eval_self_uses_truth_parameters(truth_dir, capsys):
    capsys.readouterr()
    assert main(["eval", str(truth_dir), str(truth_dir), "--metrics", "sdr,scm,nll"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["sdr_mean"] == pytest.approx(100.0)
    assert report["scm_error"] == pytest.approx(0.0, abs=1e-20)
    assert report["nll_first"] is None


def test_bench_json(capsys):
    args = ["bench", "--methods", "fastfca-mm,ica", "--dims", "2,2,8,16", "--iters", "2"]
    code = main([*args, "--json"])
    assert code == 0
    rows = json.loads(capsys.readouterr().out)
    assert [row["method"] for row in rows] == ["fastfca-mm", "ica"]
    assert all(row["rtf"] > 0 for row in rows)


def test_bench_csv(tmp_path):
    assert main(["bench", "--dims", "2,2,8,16", "--iters", "1", "--out-dir", str(tmp_path)]) == 0
    assert (tmp_path / "bench.csv").read_text().startswith("method,M,N,I,J")


def test_usage_errors(tmp_path):
    assert main(["bench", "--methods", "nmf"]) == 2
    assert main(["eval", str(tmp_path / "a"), str(tmp_path / "b")]) == 2
    assert main(["eval", str(tmp_path), str(tmp_path), "--metrics", "pesq"]) == 2
    with pytest.raises(SystemExit) as excinfo:
        main(["separate", "in.wav", str(tmp_path), "--sources", "2", "--method", "nmf"])
    assert excinfo.value.code == 2
    with pytest.raises(SystemExit):
        main(["bench", "--dims", "2,2"])


def test_mono_and_malformed_inputs(tmp_path):
    mono = tmp_path / "mono.wav"
    write_wav(mono, MultichannelWave(sample_rate=16000, samples=np.zeros((1, 4000))))
    assert main(["separate", str(mono), str(tmp_path / "out"), "--sources", "2"]) == 2
    broken = tmp_path / "broken.wav"
    broken.write_bytes(b"RIFF....")
    assert main(["separate", str(broken), str(tmp_path / "out"), "--sources", "2"]) == 2


def test_separated_files_add_up_to_mixture(tmp_path, truth_dir):
    est = tmp_path / "est"
    args = ["separate", str(truth_dir / "mixture.wav"), str(est), "--sources", "2", "--iters", "2"]
    assert main([*args, "--method", "fastfca-em", *STFT]) == 0
    mixture = read_wav(truth_dir / "mixture.wav").samples
    total = sum(read_wav(est / f"source_{n}.wav").samples for n in range(2))
    np.testing.assert_allclose(total, mixture, atol=1e-4 * max(1.0, np.max(np.abs(mixture))))


def test_single_source_returns_the_input(tmp_path, truth_dir):
    est = tmp_path / "one"
    args = ["separate", str(truth_dir / "mixture.wav"), str(est), "--sources", "1", "--iters", "2"]
    assert main([*args, *STFT]) == 0
    mixture = read_wav(truth_dir / "mixture.wav").samples
    single = read_wav(est / "source_0.wav").samples
    np.testing.assert_allclose(single, mixture, atol=1e-4 * max(1.0, np.max(np.abs(mixture))))


def test_separate_creates_nested_output_dir(tmp_path, truth_dir):
    est = tmp_path / "runs" / "a" / "est"
    args = ["separate", str(truth_dir / "mixture.wav"), str(est), "--sources", "2", "--iters", "1"]
    assert main([*args, "--workers", "1", *STFT]) == 0
    assert (est / "source_0.wav").exists() and (est / "source_1.wav").exists()


def test_unwritable_output_dir_is_a_usage_error(tmp_path, truth_dir):
    blocker = tmp_path / "taken"
    blocker.write_text("not a directory")
    args = ["separate", str(truth_dir / "mixture.wav"), str(blocker), "--sources", "2"]
    assert main([*args, "--iters", "1", *STFT]) == 2


def test_linalg_failure_exits_with_numerical_code(monkeypatch, truth_dir, tmp_path):
    def singular(args):
        raise np.linalg.LinAlgError("Matrix is not positive definite")

    monkeypatch.setitem(COMMANDS, "fit", singular)
    args = ["fit", str(truth_dir / "mixture.wav"), str(tmp_path / "fit"), "--sources", "2"]
    assert main(args) == 1
