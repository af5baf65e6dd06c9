"""Trainer command line: corpus generation, teacher/student training, export.

The `pipeline` subcommand runs the whole distillation chain and writes the
CAVW container the separation engine consumes.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

from . import corpus as corpus_mod
from .export import export_weights
from .losses import TrainConfig
from .train import load_student, load_teacher, train_student, train_teacher

log = logging.getLogger("cavwtrain")


def _train_config(args):
    if args.config:
        return TrainConfig.from_json(args.config)
    return TrainConfig(
        lambda_kz=args.lambda_kz, tau=args.tau, latent_dim=args.latent,
        class_count=2, epochs=args.epochs, batch=args.batch, lr=args.lr,
        seed=args.seed,
    )


def cmd_gen_corpus(args):
    classes, sample_rate, duration = corpus_mod.load_class_specs(args.classes)
    corpus_mod.gen_training_corpus(
        classes, args.per_class, args.out,
        duration_s=args.duration or duration, sample_rate=sample_rate, seed=args.seed,
    )
    print(f"corpus written to {args.out}")


def cmd_pipeline(args):
    dataset = corpus_mod.load_corpus(args.corpus, win_ms=args.win_ms)
    cfg = _train_config(args)
    widths = tuple(int(w) for w in args.widths.split(","))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    teacher_cfg = TrainConfig(**{**cfg.__dict__, "epochs": args.teacher_epochs or cfg.epochs})
    teacher, thist = train_teacher(dataset, teacher_cfg, widths=widths,
                                   checkpoint=out / "teacher.pt")
    student, report, shist = train_student(dataset, teacher, cfg,
                                           checkpoint=out / "student.pt")
    container = out / "model.cavw"
    export_weights(student, container)
    summary = {
        "schema_version": 1,
        "teacher_val_elbo": thist["val_elbo"][-1],
        "student_val_total": shist["val_total"][-1],
        "k_z_first": report.k_z[0],
        "k_z_last": report.k_z[-1],
        "container": str(container),
    }
    (out / "training.json").write_text(json.dumps(summary, indent=2))
    print(json.dumps(summary, indent=2))


def cmd_export(args):
    student = load_student(args.checkpoint)
    export_weights(student, args.out)
    print(f"container written to {args.out}")


def _parser():
    p = argparse.ArgumentParser(prog="cavw-train", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    pc = sub.add_parser("gen-corpus", help="synthesize a per-class WAV corpus")
    pc.add_argument("--classes", required=True, help="class-spec JSON")
    pc.add_argument("--out", required=True)
    pc.add_argument("--per-class", type=int, default=48)
    pc.add_argument("--duration", type=float, default=None)
    pc.add_argument("--seed", type=int, default=0)

    pp = sub.add_parser("pipeline", help="train teacher + distill student + export")
    pp.add_argument("--corpus", required=True)
    pp.add_argument("--out", required=True)
    pp.add_argument("--win-ms", type=float, default=32.0)
    pp.add_argument("--widths", default="256,128")
    pp.add_argument("--latent", type=int, default=8)
    pp.add_argument("--epochs", type=int, default=40)
    pp.add_argument("--teacher-epochs", type=int, default=None)
    pp.add_argument("--batch", type=int, default=8)
    pp.add_argument("--lr", type=float, default=1e-4)
    pp.add_argument("--lambda-kz", type=float, default=10.0)
    pp.add_argument("--tau", type=float, default=1.0)
    pp.add_argument("--seed", type=int, default=0)
    pp.add_argument("--config", default=None,
                    help="TrainConfig JSON; overrides the individual flags")

    pe = sub.add_parser("export", help="export a student checkpoint to CAVW")
    pe.add_argument("--checkpoint", required=True)
    pe.add_argument("--out", required=True)
    return p


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    args = _parser().parse_args(argv)
    try:
        {"gen-corpus": cmd_gen_corpus, "pipeline": cmd_pipeline, "export": cmd_export}[
            args.command
        ](args)
    except Exception as exc:
        log.debug("command failed", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
