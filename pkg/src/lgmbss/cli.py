"""Command-line surface: synth, separate, eval, bench.

Every command is deterministic given --seed (wall-clock timings excepted) and
exits 0 only when all outputs were written and finite. Set BSS_LOG=debug|info
for progress logging.
"""

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import mixsim
from .engine import separate
from .metrics import permute_align
from .network import NeuralVarianceModel
from .nmf import NmfSourceModel, OracleSourceModel
from .sigproc import Waveform, istft, read_wav, stft, write_wav
from .weights import load_model

log = logging.getLogger("lgmbss")

ALGORITHMS = ("ilrma", "iva", "fastmvae2", "oracle")


@dataclass
class RunConfig:
    algorithm: str = "ilrma"
    model_path: str = None
    iters: int = 60
    alpha: float = 0.0
    seed: int = 0
    win_ms: float = 128.0
    hop_ratio: float = 0.5
    threads: int = None  # None -> logical core count
    amp_norm: bool = False
    n_basis: int = 2
    ref_ch: int = 0

    def __post_init__(self):
        if self.iters < 0:
            raise ValueError("iters must be >= 0")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        if self.algorithm == "fastmvae2" and not self.model_path:
            raise ValueError("algorithm 'fastmvae2' requires --model")
        if self.threads is None:
            self.threads = os.cpu_count() or 1


def _build_model(cfg: RunConfig, spec, refs=None):
    n_freq, n_frames, n_chan = spec.data.shape
    if cfg.algorithm == "ilrma":
        return NmfSourceModel(n_chan, n_freq, n_frames, n_basis=cfg.n_basis, seed=cfg.seed)
    if cfg.algorithm == "iva":
        return NmfSourceModel(n_chan, n_freq, n_frames, seed=cfg.seed, flat_basis=True)
    if cfg.algorithm == "fastmvae2":
        bundle = load_model(cfg.model_path)
        if bundle.freq_bins != n_freq:
            raise ValueError(
                f"model expects {bundle.freq_bins} bins but --win-ms {cfg.win_ms} gives {n_freq}"
            )
        return NeuralVarianceModel(bundle, n_chan, alpha=cfg.alpha, amp_norm=cfg.amp_norm)
    if cfg.algorithm == "oracle":
        if refs is None:
            raise ValueError("algorithm 'oracle' requires --refs with the true source wavs")
        fields = [np.abs(stft(r, cfg.win_ms, cfg.hop_ratio).data[:, :, 0]) ** 2 for r in refs]
        return OracleSourceModel(np.stack(fields))
    raise AssertionError(cfg.algorithm)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_synth(spec_path, out_dir):
    """Generate sources + mixture from a mix-spec JSON; write wavs + metadata."""
    classes, mix, sample_rate, duration_s, seed = mixsim.load_mix_spec(spec_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sources = mixsim.gen_sources(classes, duration_s, sample_rate, seed)
    if mix.mode == "instantaneous":
        mixture = mixsim.mix_instantaneous(sources, mix.matrix)
    else:
        mixture = mixsim.mix_fir(sources, mix.taps)
    files = {}
    for j, src in enumerate(sources):
        name = f"src_{j}.wav"
        write_wav(out / name, src)
        files[name] = "reference source"
    write_wav(out / "mix.wav", mixture)
    files["mix.wav"] = "observed mixture"
    meta = {
        "schema_version": 1,
        "seed": seed,
        "sample_rate": sample_rate,
        "duration_s": duration_s,
        "n_sources": len(sources),
        "mixing_mode": mix.mode,
        "files": files,
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2))
    log.info("synth: wrote %d files to %s", len(files) + 1, out)
    return out


def cmd_separate(input_path, out_dir, cfg: RunConfig, refs_dir=None):
    """Separate a multichannel wav; write per-source wavs and a run report."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    wave = read_wav(input_path)
    spec = stft(wave, cfg.win_ms, cfg.hop_ratio)
    refs = _read_sources(refs_dir) if refs_dir else None
    model = _build_model(cfg, spec, refs=refs)
    t0 = time.perf_counter()
    result = separate(spec, model, iters=cfg.iters, ref_ch=cfg.ref_ch, threads=cfg.threads)
    total = time.perf_counter() - t0
    paths = []
    for j in range(result.sources.n_channels):
        mono = istft(
            type(result.sources)(
                result.sources.data[:, :, j : j + 1],
                result.sources.sample_rate,
                result.sources.win_len,
                result.sources.hop,
            )
        )
        p = out / f"sep_{j}.wav"
        write_wav(p, mono)
        paths.append(str(p))
    report = {
        "schema_version": 1,
        "algorithm": cfg.algorithm,
        "iters": cfg.iters,
        "seed": cfg.seed,
        "win_ms": cfg.win_ms,
        "alpha": cfg.alpha,
        "neg_loglik": result.neg_loglik,
        "iter_seconds": result.iter_seconds,
        "total_seconds": total,
        "outputs": paths,
    }
    (out / "report.json").write_text(json.dumps(report, indent=2))
    if not all(np.isfinite(result.neg_loglik)):
        raise FloatingPointError("non-finite likelihood trace; see report.json")
    print(f"algorithm={cfg.algorithm} iters={cfg.iters} total={total:.2f}s")
    if result.neg_loglik:
        print(f"neg_loglik first={result.neg_loglik[0]:.6g} last={result.neg_loglik[-1]:.6g}")
    return out


def _read_sources(directory):
    paths = sorted(Path(directory).glob("src_*.wav")) or sorted(Path(directory).glob("*.wav"))
    if not paths:
        raise FileNotFoundError(f"no wav files in {directory}")
    return [read_wav(p) for p in paths]


def _read_estimates(directory):
    paths = sorted(Path(directory).glob("sep_*.wav")) or sorted(Path(directory).glob("*.wav"))
    if not paths:
        raise FileNotFoundError(f"no wav files in {directory}")
    return [read_wav(p) for p in paths]


def cmd_eval(est_dir, ref_dir, mix_path=None, out_path=None):
    """Score estimates against references with permutation alignment."""
    ests = [w.channel(0) for w in _read_estimates(est_dir)]
    refs = [w.channel(0) for w in _read_sources(ref_dir)]
    n = min(min(len(e) for e in ests), min(len(r) for r in refs))
    ests = [e[:n] for e in ests]
    refs = [r[:n] for r in refs]
    mix = read_wav(mix_path).channel(0)[:n] if mix_path else None
    perm, report = permute_align(ests, refs, mix=mix)
    text = [f"permutation: {list(perm)}"]
    for k, val in enumerate(report.si_sdr):
        line = f"source {k}: si_sdr {val:8.2f} dB"
        if report.improvement is not None:
            line += f"  (input {report.input_si_sdr[k]:8.2f}, +{report.improvement[k]:.2f})"
        text.append(line)
    print("\n".join(text))
    if out_path:
        Path(out_path).write_text(report.to_json())
    return report


def cmd_bench(out_dir, sources=(2, 3, 6), algos=("ilrma", "fastmvae2"), model_path=None,
              iters=10, seed=0, win_ms=32.0, duration_s=1.5, threads=None):
    """Time per-iteration cost of each algorithm across source counts.

    The relative speed of the neural model vs ILRMA is reported in the output,
    not asserted: it depends on the network size.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for n_src in sources:
        classes = mixsim.default_classes(n_src)
        rng = np.random.default_rng(seed + n_src)
        while True:
            a = rng.uniform(-1.0, 1.0, (n_src, n_src)) + np.eye(n_src)
            if np.linalg.cond(a) < mixsim.MAX_CONDITION:
                break
        srcs = mixsim.gen_sources(classes, duration_s, mixsim.DEFAULT_SAMPLE_RATE, seed + n_src)
        mixture = mixsim.mix_instantaneous(srcs, a)
        spec = stft(mixture, win_ms, 0.5)
        for algo in algos:
            cfg = RunConfig(algorithm=algo, model_path=model_path, iters=iters, seed=seed,
                            win_ms=win_ms, threads=threads)
            model = _build_model(cfg, spec)
            result = separate(spec, model, iters=iters, threads=cfg.threads)
            secs = np.asarray(result.iter_seconds)
            rows.append({
                "algorithm": algo,
                "n_sources": n_src,
                "iters": iters,
                "mean_s": float(secs.mean()),
                "min_s": float(secs.min()),
                "max_s": float(secs.max()),
                "total_s": float(secs.sum()),
            })
            log.info("bench: %s J=%d mean %.4fs/iter", algo, n_src, secs.mean())
    notes = _speed_notes(rows)
    doc = {"schema_version": 1, "seed": seed, "win_ms": win_ms, "results": rows, "notes": notes}
    (out / "bench.json").write_text(json.dumps(doc, indent=2))
    header = f"{'algorithm':<12}{'J':>3}{'iters':>7}{'mean_s':>10}{'min_s':>10}{'max_s':>10}"
    lines = [header] + [
        f"{r['algorithm']:<12}{r['n_sources']:>3}{r['iters']:>7}"
        f"{r['mean_s']:>10.4f}{r['min_s']:>10.4f}{r['max_s']:>10.4f}"
        for r in rows
    ] + [""] + notes
    table = "\n".join(lines)
    (out / "bench.txt").write_text(table + "\n")
    print(table)
    return doc


def _speed_notes(rows):
    by = {(r["algorithm"], r["n_sources"]): r["mean_s"] for r in rows}
    notes = []
    for n_src in sorted({r["n_sources"] for r in rows}):
        a, b = by.get(("fastmvae2", n_src)), by.get(("ilrma", n_src))
        if a and b:
            notes.append(
                f"J={n_src}: neural/ilrma per-iteration ratio {a / b:.2f} "
                f"({'neural faster' if a < b else 'ilrma faster'})"
            )
    if notes:
        notes.append("reported for reference only; the ratio depends on the network size")
    return notes


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _parser():
    p = argparse.ArgumentParser(prog="bss", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("synth", help="generate synthetic sources and mixture")
    ps.add_argument("spec", help="mix-spec JSON file")
    ps.add_argument("--out", required=True)

    pp = sub.add_parser("separate", help="separate a multichannel wav")
    pp.add_argument("--input", required=True)
    pp.add_argument("--out", required=True)
    pp.add_argument("--algo", default="ilrma", choices=ALGORITHMS)
    pp.add_argument("--model", default=None, help="CAVW weight container (fastmvae2)")
    pp.add_argument("--iters", type=int, default=60)
    pp.add_argument("--alpha", type=float, default=0.0)
    pp.add_argument("--seed", type=int, default=0)
    pp.add_argument("--win-ms", type=float, default=128.0)
    pp.add_argument("--hop", type=float, default=0.5)
    pp.add_argument("--threads", type=int, default=None)
    pp.add_argument("--amp-norm", action="store_true",
                    help="normalize network input amplitude (not power) by the gain")
    pp.add_argument("--basis", type=int, default=2, help="NMF basis count (ilrma)")
    pp.add_argument("--refs", default=None, help="reference dir (oracle variances)")

    pe = sub.add_parser("eval", help="score estimates against references")
    pe.add_argument("--est", required=True)
    pe.add_argument("--ref", required=True)
    pe.add_argument("--mix", default=None)
    pe.add_argument("--out", default=None)

    pb = sub.add_parser("bench", help="per-iteration runtime comparison")
    pb.add_argument("--out", required=True)
    pb.add_argument("--sources", default="2,3,6")
    pb.add_argument("--algos", default="ilrma,fastmvae2")
    pb.add_argument("--model", default=None)
    pb.add_argument("--iters", type=int, default=10)
    pb.add_argument("--seed", type=int, default=0)
    pb.add_argument("--win-ms", type=float, default=32.0)
    pb.add_argument("--threads", type=int, default=None)
    return p


def main(argv=None):
    level = os.environ.get("BSS_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))
    args = _parser().parse_args(argv)
    try:
        if args.command == "synth":
            cmd_synth(args.spec, args.out)
        elif args.command == "separate":
            cfg = RunConfig(
                algorithm=args.algo, model_path=args.model, iters=args.iters,
                alpha=args.alpha, seed=args.seed, win_ms=args.win_ms, hop_ratio=args.hop,
                threads=args.threads, amp_norm=args.amp_norm, n_basis=args.basis,
            )
            cmd_separate(args.input, args.out, cfg, refs_dir=args.refs)
        elif args.command == "eval":
            cmd_eval(args.est, args.ref, mix_path=args.mix, out_path=args.out)
        elif args.command == "bench":
            cmd_bench(
                args.out,
                sources=tuple(int(s) for s in args.sources.split(",")),
                algos=tuple(args.algos.split(",")),
                model_path=args.model, iters=args.iters, seed=args.seed,
                win_ms=args.win_ms, threads=args.threads,
            )
    except Exception as exc:  # propagate as nonzero exit with a clean message
        log.debug("command failed", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
