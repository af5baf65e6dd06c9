import json
import math
from pathlib import Path

import numpy as np
import pytest

from lgmbss import mixsim
from lgmbss.cli import RunConfig, cmd_bench, cmd_eval, cmd_separate, cmd_synth, main
from lgmbss.sigproc import Waveform, read_wav, wav_checksum, write_wav

SPEC = {
    "schema_version": 1,
    "sample_rate": 8000,
    "duration_s": 1.0,
    "seed": 3,
    "classes": [
        {"class_id": 0, "resonances": [[240, 60], [420, 80]], "mod_rate_hz": 2.5, "mod_depth": 0.8},
        {"class_id": 1, "resonances": [[1400, 140], [2200, 200]], "mod_rate_hz": 4.5, "mod_depth": 0.8},
    ],
    "mixing": {"mode": "instantaneous", "matrix": [[1.0, 0.6], [0.55, 1.0]]},
}


@pytest.fixture
def spec_file(tmp_path):
    path = tmp_path / "spec.json"
    path.write_text(json.dumps(SPEC))
    return path


def test_synth_writes_mixture_refs_meta(spec_file, tmp_path):
    out = tmp_path / "synth"
    cmd_synth(spec_file, out)
    files = sorted(p.name for p in out.iterdir())
    assert "mix.wav" in files and "src_0.wav" in files and "src_1.wav" in files
    assert "meta.json" in files
    meta = json.loads((out / "meta.json").read_text())
    assert meta["n_sources"] == 2 and meta["schema_version"] == 1
    assert read_wav(out / "mix.wav").n_channels == 2


def test_synth_deterministic_per_seed(spec_file, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    cmd_synth(spec_file, a)
    cmd_synth(spec_file, b)
    for name in ("mix.wav", "src_0.wav", "src_1.wav"):
        assert wav_checksum(a / name) == wav_checksum(b / name)


def test_synth_malformed_json_exits_nonzero(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{oops")
    rc = main(["synth", str(bad), "--out", str(tmp_path / "o")])
    assert rc != 0


def test_separate_ilrma_smoke(spec_file, tmp_path):
    synth = tmp_path / "synth"
    cmd_synth(spec_file, synth)
    out = tmp_path / "sep"
    cfg = RunConfig(algorithm="ilrma", iters=5, seed=0, win_ms=32.0)
    cmd_separate(synth / "mix.wav", out, cfg)
    report = json.loads((out / "report.json").read_text())
    assert len(report["neg_loglik"]) == 5
    assert all(math.isfinite(v) for v in report["neg_loglik"])
    assert (out / "sep_0.wav").exists() and (out / "sep_1.wav").exists()


def test_separate_zero_iters_passthrough(spec_file, tmp_path):
    synth = tmp_path / "synth"
    cmd_synth(spec_file, synth)
    out = tmp_path / "sep0"
    cmd_separate(synth / "mix.wav", out, RunConfig(algorithm="iva", iters=0, win_ms=32.0))
    mix = read_wav(synth / "mix.wav")
    for j in range(2):
        sep = read_wav(out / f"sep_{j}.wav").channel(0)
        ref = mix.channel(j)[: len(sep)]
        assert np.abs(sep - ref).max() < 1e-6  # float32 wav round trip


def test_separate_oracle_uses_reference_variances(spec_file, tmp_path):
    synth = tmp_path / "synth"
    cmd_synth(spec_file, synth)
    out = tmp_path / "seporacle"
    cfg = RunConfig(algorithm="oracle", iters=15, win_ms=32.0)
    cmd_separate(synth / "mix.wav", out, cfg, refs_dir=synth)
    report = json.loads((out / "report.json").read_text())
    assert report["neg_loglik"][-1] <= report["neg_loglik"][0]


def test_separate_deterministic_given_seed(spec_file, tmp_path):
    synth = tmp_path / "synth"
    cmd_synth(spec_file, synth)
    outs = []
    for name in ("r1", "r2"):
        out = tmp_path / name
        cmd_separate(synth / "mix.wav", out, RunConfig(algorithm="ilrma", iters=4, seed=9, win_ms=32.0))
        outs.append(out)
    for j in range(2):
        assert wav_checksum(outs[0] / f"sep_{j}.wav") == wav_checksum(outs[1] / f"sep_{j}.wav")


def test_runconfig_guards():
    with pytest.raises(ValueError, match="requires --model"):
        RunConfig(algorithm="fastmvae2")
    with pytest.raises(ValueError, match="unknown algorithm"):
        RunConfig(algorithm="mystery")
    with pytest.raises(ValueError):
        RunConfig(iters=-1)


def test_eval_reference_against_itself(tmp_path):
    srcs = mixsim.gen_sources(mixsim.default_classes(2, sample_rate=8000), 0.5, 8000, seed=0)
    ref_dir, est_dir = tmp_path / "ref", tmp_path / "est"
    ref_dir.mkdir(), est_dir.mkdir()
    for j, s in enumerate(srcs):
        write_wav(ref_dir / f"src_{j}.wav", s)
        write_wav(est_dir / f"sep_{j}.wav", s)
    report = cmd_eval(est_dir, ref_dir, out_path=tmp_path / "eval.json")
    assert all(v == math.inf for v in report.si_sdr)
    assert (tmp_path / "eval.json").exists()


def test_eval_reports_shuffle_permutation(tmp_path):
    srcs = mixsim.gen_sources(mixsim.default_classes(2, sample_rate=8000), 0.5, 8000, seed=1)
    ref_dir, est_dir = tmp_path / "ref", tmp_path / "est"
    ref_dir.mkdir(), est_dir.mkdir()
    for j, s in enumerate(srcs):
        write_wav(ref_dir / f"src_{j}.wav", s)
        write_wav(est_dir / f"sep_{j}.wav", srcs[1 - j])
    report = cmd_eval(est_dir, ref_dir)
    assert tuple(report.permutation) == (1, 0)


def test_eval_known_snr_construction(tmp_path):
    rng = np.random.default_rng(2)
    ref = rng.standard_normal(4000)
    noise = rng.standard_normal(4000)
    noise -= (np.dot(noise, ref) / np.dot(ref, ref)) * ref
    noise *= np.sqrt(np.dot(ref, ref) / (1000.0 * np.dot(noise, noise)))  # 30 dB
    ref_dir, est_dir = tmp_path / "ref", tmp_path / "est"
    ref_dir.mkdir(), est_dir.mkdir()
    write_wav(ref_dir / "src_0.wav", Waveform(ref, 8000))
    write_wav(est_dir / "sep_0.wav", Waveform(ref + noise, 8000))
    report = cmd_eval(est_dir, ref_dir)
    assert report.si_sdr[0] == pytest.approx(30.0, abs=0.1)


def test_bench_smoke_produces_tables(tmp_path):
    doc = cmd_bench(tmp_path, sources=(2,), algos=("ilrma", "iva"), iters=2,
                    seed=0, win_ms=32.0, duration_s=0.5)
    assert (tmp_path / "bench.json").exists() and (tmp_path / "bench.txt").exists()
    for row in doc["results"]:
        assert row["mean_s"] > 0 and row["min_s"] > 0
    assert {r["algorithm"] for r in doc["results"]} == {"ilrma", "iva"}


def test_separate_neural_model_end_to_end(tmp_path):
    fixture = Path(__file__).parent / "fixtures" / "toy_model.cavw"
    classes_spec = Path(__file__).parent.parent / "configs" / "toy_classes.json"
    synth = tmp_path / "synth"
    cmd_synth(classes_spec, synth)
    out = tmp_path / "nn"
    cfg = RunConfig(algorithm="fastmvae2", model_path=str(fixture), iters=5, win_ms=32.0)
    cmd_separate(synth / "mix.wav", out, cfg)
    report = json.loads((out / "report.json").read_text())
    assert len(report["neg_loglik"]) == 5
    assert all(math.isfinite(v) for v in report["neg_loglik"])


def test_separate_neural_window_mismatch_is_helpful(tmp_path):
    fixture = Path(__file__).parent / "fixtures" / "toy_model.cavw"
    classes_spec = Path(__file__).parent.parent / "configs" / "toy_classes.json"
    synth = tmp_path / "synth"
    cmd_synth(classes_spec, synth)
    cfg = RunConfig(algorithm="fastmvae2", model_path=str(fixture), iters=2, win_ms=64.0)
    with pytest.raises(ValueError, match="win-ms"):
        cmd_separate(synth / "mix.wav", tmp_path / "bad", cfg)


def test_main_separate_roundtrip(spec_file, tmp_path):
    synth = tmp_path / "synth"
    assert main(["synth", str(spec_file), "--out", str(synth)]) == 0
    rc = main([
        "separate", "--input", str(synth / "mix.wav"), "--out", str(tmp_path / "sep"),
        "--algo", "ilrma", "--iters", "3", "--win-ms", "32",
    ])
    assert rc == 0
    rc = main(["eval", "--est", str(tmp_path / "sep"), "--ref", str(synth),
               "--mix", str(synth / "mix.wav"), "--out", str(tmp_path / "e.json")])
    assert rc == 0
    doc = json.loads((tmp_path / "e.json").read_text())
    assert doc["improvement_db"] is not None
