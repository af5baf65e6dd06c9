"""Secondary-component acceptance: distillation efficacy on the 2-class
synthetic corpus, loss-term gradient checks, and exporter-to-engine parity.

The distilled artifact under test is the golden fixture produced by
scripts/make_golden_fixture.py (metrics recorded alongside it)."""

import json
from pathlib import Path

import numpy as np
import pytest
import torch

from cavwtrain import corpus as C
from cavwtrain.export import export_weights
from cavwtrain.losses import TrainConfig, gradient_check, sample_noise, student_losses
from cavwtrain.nets import NetConfig, Student, Teacher, latent_frames

ROOT = Path(__file__).resolve().parents[2]
FIXTURE = ROOT / "tests" / "fixtures" / "toy_model.cavw"
METRICS = ROOT / "tests" / "fixtures" / "toy_model_training.json"
TOY_CLASSES = ROOT / "configs" / "toy_classes.json"


def _ok(name):
    print(f"[PASS] {name}")


def test_acceptance_distillation_kz_reduction():
    """The distilled fixture's latent KL to the teacher fell >= 5x from its
    value at initialization (training record of the checked-in artifact)."""
    metrics = json.loads(METRICS.read_text())
    ratio = metrics["k_z_init"] / max(metrics["k_z_final"], 1e-12)
    assert ratio >= 5.0, f"K_z reduced only {ratio:.2f}x"
    assert FIXTURE.exists()
    _ok(f"latent distillation K_z reduced {ratio:.1f}x "
        f"({metrics['k_z_init']:.1f} -> {metrics['k_z_final']:.1f})")


def test_distilled_decoder_tracks_teacher_variances():
    """Median relative error of the student's decoder variance field against
    the teacher's stayed within 20% on held-out data (training record)."""
    metrics = json.loads(METRICS.read_text())
    err = metrics["decoder_median_rel_var_err"]
    assert err <= 0.20, f"median relative variance error {err:.3f}"
    _ok(f"student/teacher decoder variance median rel err {err:.3f}")


def test_acceptance_heldout_classifier_accuracy():
    """>= 95% argmax accuracy of the fixture's classifier on held-out
    utterances drawn from the same 2-class corpus distribution."""
    lgmbss_weights = pytest.importorskip("lgmbss.weights")
    from lgmbss.network import infer_class

    bundle = lgmbss_weights.load_model(FIXTURE)
    classes, sample_rate, duration = C.load_class_specs(TOY_CLASSES)
    rng = np.random.default_rng(777)  # training corpus used seed 0
    total = correct = 0
    for spec in classes:
        for _ in range(20):
            utt = C.synth_utterance(spec, duration, sample_rate, rng)
            feat, _ = C.power_to_features(C.stft_power(utt, sample_rate, win_ms=32.0))
            rho = infer_class(bundle, feat)
            correct += int(np.argmax(rho) == spec.class_id)
            total += 1
    accuracy = correct / total
    assert accuracy >= 0.95, f"held-out accuracy {accuracy:.3f}"
    _ok(f"held-out classifier accuracy {accuracy:.3f} ({correct}/{total})")


@pytest.mark.parametrize("term", ["j", "l", "i", "jp_gs", "lp_gs", "k_z", "k_s", "kp_s"])
def test_acceptance_gradient_checks(term):
    """Analytic gradients of every criterion match central finite differences
    within 1e-4 relative on a frozen two-stage toy model."""
    torch.manual_seed(100)
    tiny = NetConfig(freq_bins=9, latent_dim=2, class_count=2, widths=(6, 5), kernel=3)
    teacher, student = Teacher(tiny).double(), Student(tiny).double()
    gen = torch.Generator().manual_seed(101)
    feat = torch.randn(2, 9, 8, generator=gen, dtype=torch.float64)
    power = torch.exp(torch.randn(2, 9, 8, generator=gen, dtype=torch.float64))
    labels = torch.tensor([[1.0, 0.0], [0.0, 1.0]], dtype=torch.float64)
    cfg = TrainConfig(latent_dim=2, class_count=2)
    noise = sample_noise((2, 9, 8), (2, latent_frames(tiny, 8)), 2,
                         generator=gen, dtype=torch.float64)

    def closure():
        _, terms = student_losses((feat, power, labels), teacher, student, cfg, noise=noise)
        return terms[term]

    err = gradient_check(closure, student, n_probes=8, h=1e-5, seed=102)
    assert err < 1e-4, f"term {term}: relative gradient error {err:.2e}"
    _ok(f"gradient check for term {term} (max rel err {err:.1e})")


def test_acceptance_cross_component_parity(tmp_path):
    """Exporter -> engine forward outputs agree within 1e-4 of each tensor's
    scale on 10 shared test inputs."""
    lgmbss_weights = pytest.importorskip("lgmbss.weights")
    from lgmbss.network import decoder_forward, encoder_forward

    torch.manual_seed(103)
    cfg = NetConfig(freq_bins=33, latent_dim=4, class_count=2, widths=(20, 14))
    student = Student(cfg)
    student.eval()
    path = tmp_path / "parity.cavw"
    export_weights(student, path)
    bundle = lgmbss_weights.load_model(path)
    rng = np.random.default_rng(104)
    worst = 0.0
    for trial in range(10):
        n = 10 + 2 * trial
        x = rng.standard_normal((cfg.freq_bins, n))
        mu, sigma_sq_z, rho = encoder_forward(bundle, x)
        with torch.no_grad():
            tmu, tlogv, tlogits = student.encoder(torch.from_numpy(x[None]).float())
            trho = torch.softmax(tlogits, dim=-1)[0].numpy()
        z = rng.standard_normal((cfg.latent_dim, mu.shape[1]))
        c = rng.dirichlet(np.ones(2))
        sig2 = decoder_forward(bundle, z, c, n_frames=n)
        with torch.no_grad():
            tlv = student.decoder(
                torch.from_numpy(z[None]).float(), torch.from_numpy(c[None]).float(), n_frames=n
            )
        for got, ref in (
            (mu, tmu[0].numpy()),
            (np.log(sigma_sq_z), tlogv[0].numpy()),
            (rho, trho),
            (np.log(sig2), tlv[0].numpy()),
        ):
            scale = max(np.abs(ref).max(), 1e-6)
            worst = max(worst, float(np.abs(got - ref).max() / scale))
    assert worst < 1e-4, f"worst scale-relative deviation {worst:.2e}"
    _ok(f"exporter-to-engine forward parity (worst rel dev {worst:.1e})")
