import json

import numpy as np
import pytest

from cavwtrain import corpus as C

CLASSES = [
    C.ClassSpec(0, ((300.0, 80.0), (900.0, 120.0)), 2.5, 0.8),
    C.ClassSpec(1, ((2200.0, 200.0), (4400.0, 320.0)), 4.5, 0.8, (0.0, np.pi)),
]


def test_corpus_deterministic(tmp_path):
    a = C.gen_training_corpus(CLASSES, 3, tmp_path / "a", duration_s=0.5, sample_rate=8000, seed=5)
    b = C.gen_training_corpus(CLASSES, 3, tmp_path / "b", duration_s=0.5, sample_rate=8000, seed=5)
    for rel in ("class_0/utt_000.wav", "class_1/utt_002.wav"):
        assert (a / rel).read_bytes() == (b / rel).read_bytes()


def test_utterances_unit_energy(tmp_path):
    root = C.gen_training_corpus(CLASSES, 2, tmp_path / "c", duration_s=0.5, sample_rate=8000, seed=1)
    for wav in root.glob("class_*/*.wav"):
        samples, sr = C.read_wav_float32(wav)
        assert float(np.dot(samples, samples)) == pytest.approx(1.0, abs=1e-4)  # float32 storage


def test_class_centroids_separated(tmp_path):
    rng = np.random.default_rng(0)
    cents = []
    for spec in CLASSES:
        utt = C.synth_utterance(spec, 1.0, 16000, rng)
        p = np.abs(np.fft.rfft(utt)) ** 2
        f = np.fft.rfftfreq(len(utt), 1 / 16000)
        cents.append(float((p * f).sum() / p.sum()))
    assert abs(cents[1] - cents[0]) > 500.0


def test_load_corpus_shapes_and_labels(tmp_path):
    root = C.gen_training_corpus(CLASSES, 4, tmp_path / "d", duration_s=0.5, sample_rate=8000, seed=2)
    ds = C.load_corpus(root, win_ms=32.0)
    assert ds.features.shape[0] == 8
    assert ds.n_classes == 2
    assert ds.freq_bins == 129  # 32 ms at 8 kHz, one-sided
    np.testing.assert_array_equal(ds.labels[:4].argmax(1), 0)
    np.testing.assert_array_equal(ds.labels[4:].argmax(1), 1)
    # power was gain-normalized: mean power 1 per utterance
    np.testing.assert_allclose(ds.power.mean(axis=(1, 2)), 1.0, rtol=1e-4)


def test_features_match_convention(tmp_path):
    root = C.gen_training_corpus(CLASSES[:1], 1, tmp_path / "e", duration_s=0.5, sample_rate=8000, seed=3)
    ds = C.load_corpus(root, win_ms=32.0)
    # feature = log(power/g + eps) where the stored power is already /g
    np.testing.assert_allclose(
        ds.features[0], np.log(ds.power[0] + C.EPS), rtol=1e-5, atol=1e-6
    )


def test_load_class_specs_roundtrip(tmp_path):
    doc = {
        "sample_rate": 8000,
        "duration_s": 1.0,
        "classes": [
            {"class_id": 0, "resonances": [[300, 50]], "mod_rate_hz": 2.0, "mod_depth": 0.5},
            {"class_id": 1, "resonances": [[1000, 90], [2000, 120]], "mod_rate_hz": 3.0,
             "mod_depth": 0.7, "branch_mod_phases": [0.0, 3.14159]},
        ],
    }
    path = tmp_path / "cls.json"
    path.write_text(json.dumps(doc))
    classes, sr, dur = C.load_class_specs(path)
    assert sr == 8000 and dur == 1.0
    assert classes[1].branch_mod_phases is not None
