#!/usr/bin/env python3
"""Regenerate the golden weight container used by the acceptance suite.

Runs the full secondary pipeline: synthesize the matched 2-class corpus from
configs/toy_classes.json, pretrain the teacher, distill the student, export
tests/fixtures/toy_model.cavw, and record the training metrics next to it.

Usage: python scripts/make_golden_fixture.py [--fast]
"""

import argparse
import json
import shutil
import sys
import tempfile
from pathlib import Path

import torch

ROOT = Path(__file__).resolve().parent.parent


def _heldout_variance_error(teacher, student, classes, duration, sample_rate,
                            n_per_class=20, seed=555):
    """Median over TF bins of |v_student - v_teacher| / v_teacher on fresh
    utterances, each decoder driven by its own posterior mean and the true
    class label."""
    import numpy as np

    from cavwtrain import corpus as corpus_mod

    rng = np.random.default_rng(seed)
    errs = []
    with torch.no_grad():
        for spec in classes:
            onehot = torch.zeros(1, len(classes))
            onehot[0, spec.class_id] = 1.0
            for _ in range(n_per_class):
                utt = corpus_mod.synth_utterance(spec, duration, sample_rate, rng)
                power = corpus_mod.stft_power(utt, sample_rate, win_ms=32.0)
                feat, _ = corpus_mod.power_to_features(power)
                feat_t = torch.from_numpy(feat[None]).float()
                mu_t, _ = teacher.encoder(feat_t, onehot)
                v_t = torch.exp(teacher.decoder(mu_t, onehot, n_frames=power.shape[1]))
                mu_s, _, _ = student.encoder(feat_t)
                v_s = torch.exp(student.decoder(mu_s, onehot, n_frames=power.shape[1]))
                errs.append(((v_s - v_t).abs() / v_t).reshape(-1).numpy())
    return float(np.median(np.concatenate(errs)))


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--fast", action="store_true",
                        help="short schedule for smoke runs (not for the checked-in fixture)")
    parser.add_argument("--threads", type=int, default=8)
    args = parser.parse_args()
    torch.set_num_threads(args.threads)

    from cavwtrain import corpus as corpus_mod
    from cavwtrain.export import export_weights
    from cavwtrain.losses import TrainConfig
    from cavwtrain.train import classifier_accuracy, train_student, train_teacher

    classes, sample_rate, duration = corpus_mod.load_class_specs(ROOT / "configs" / "toy_classes.json")
    workdir = Path(tempfile.mkdtemp(prefix="golden_corpus_"))
    per_class = 16 if args.fast else 48
    corpus_mod.gen_training_corpus(classes, per_class, workdir, duration_s=duration,
                                   sample_rate=sample_rate, seed=0)
    dataset = corpus_mod.load_corpus(workdir, win_ms=32.0)

    epochs_t = 8 if args.fast else 60
    epochs_s = 8 if args.fast else 150
    cfg_t = TrainConfig(latent_dim=8, epochs=epochs_t, batch=8, lr=1e-3, seed=0)
    cfg_s = TrainConfig(latent_dim=8, epochs=epochs_s, batch=8, lr=1e-3, seed=0)
    teacher, thist = train_teacher(dataset, cfg_t, widths=(128, 64))
    student, report, shist = train_student(dataset, teacher, cfg_s)

    fixture_dir = ROOT / "tests" / "fixtures"
    fixture_dir.mkdir(exist_ok=True)
    export_weights(student, fixture_dir / "toy_model.cavw")
    metrics = {
        "schema_version": 1,
        "per_class": per_class,
        "epochs_teacher": epochs_t,
        "epochs_student": epochs_s,
        "lr": cfg_s.lr,
        "teacher_val_elbo": thist["val_elbo"][-1],
        "student_val_total": shist["val_total"][-1],
        "k_z_init": report.k_z[0],
        "k_z_final": report.k_z[-1],
        "k_z_reduction": report.k_z[0] / max(report.k_z[-1], 1e-12),
        "train_accuracy": classifier_accuracy(student, dataset),
        "decoder_median_rel_var_err": _heldout_variance_error(
            teacher, student, classes, duration, sample_rate
        ),
    }
    (fixture_dir / "toy_model_training.json").write_text(json.dumps(metrics, indent=2))
    print(json.dumps(metrics, indent=2))
    shutil.rmtree(workdir)


if __name__ == "__main__":
    sys.exit(main())
