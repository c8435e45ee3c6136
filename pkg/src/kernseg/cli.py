"""Command-line interface.

Exit status is 0 on success, 2 for usage errors (bad flags, missing inputs)
and 1 for failures while running.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
from pathlib import Path

import numpy as np
from scipy.ndimage import binary_dilation

from . import acm, diagnostics, imaging, ksc, metrics, pipeline
from .errors import DomainError, NumericalError, ParseError, SolverError, ValidationError
from .kernels import EnsembleConfig, KernelConfig


class UsageError(Exception):
    pass


def _existing(path: str) -> str:
    if not Path(path).is_file():
        raise argparse.ArgumentTypeError(f"no such file: {path}")
    return path


def _epsilon_grid(text: str) -> np.ndarray:
    """Either ``lo:hi:n`` or a comma-separated list."""
    try:
        if ":" in text:
            lo, hi, n = text.split(":")
            return np.linspace(float(lo), float(hi), int(n))
        return np.array([float(v) for v in text.split(",") if v.strip()])
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad epsilon grid {text!r}") from None


def _add_kernel_flags(p, location: bool = False):
    p.add_argument("--gamma", type=float, default=0.3, help="intensity RBF width (raw 0-255 scale)")
    p.add_argument("--lambda", dest="lam", type=float, default=0.1, help="l1 penalty")
    if location:
        p.add_argument("--gamma-loc", type=float, default=0.5, help="location RBF width")
        p.add_argument("--radius", type=int, default=5, help="Chebyshev neighborhood radius")


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kernseg", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom-gen", help="write a synthetic phantom corpus and manifest")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-train", type=int, default=2)
    p.add_argument("--n-val", type=int, default=10)
    p.add_argument("--n-test", type=int, default=10)
    p.add_argument("--roi-dilation", type=int, default=6,
                   help="also write ROIs: ground truth dilated by this many pixels (0 disables)")

    p = sub.add_parser("train-ksca", help="train the automated pipeline")
    p.add_argument("--manifest", required=True, type=_existing)
    p.add_argument("--split", default="train")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--atoms", type=int, default=256)
    p.add_argument("--budget", type=int, default=15000, help="total pixels, split evenly by class")
    _add_kernel_flags(p, location=True)

    p = sub.add_parser("train-kscsa", help="train the semi-automated pipeline")
    p.add_argument("--manifest", required=True, type=_existing)
    p.add_argument("--split", default="train")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--atoms", type=int, default=256)
    p.add_argument("--budget", type=int, default=10000, help="pixels per class")
    _add_kernel_flags(p)

    p = sub.add_parser("sweep-epsilon", help="choose the error threshold on validation data")
    p.add_argument("--model", required=True, type=_existing)
    p.add_argument("--manifest", required=True, type=_existing)
    p.add_argument("--split", default="val")
    p.add_argument("--roi-dilation", type=int, default=6,
                   help="ROIs are the ground truth dilated by this many pixels")
    p.add_argument("--epsilon-grid", type=_epsilon_grid, default=None)
    p.add_argument("--out", required=True, help="model file with the chosen epsilon")
    p.add_argument("--table", help="CSV file for the per-epsilon table (default: stdout)")
    p.add_argument("--seed", type=int, default=0, help="unused; accepted for uniformity")

    p = sub.add_parser("segment-auto", help="segment an image with a KSCA model")
    p.add_argument("--model", required=True, type=_existing)
    p.add_argument("--image", required=True, type=_existing)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0, help="unused; accepted for uniformity")

    p = sub.add_parser("segment-semi", help="segment inside an ROI with a KSCSA model")
    p.add_argument("--model", required=True, type=_existing)
    p.add_argument("--image", required=True, type=_existing)
    p.add_argument("--roi", required=True, type=_existing)
    p.add_argument("--out", required=True)
    p.add_argument("--epsilon", type=float, default=None, help="override the model's threshold")
    p.add_argument("--seed", type=int, default=0, help="unused; accepted for uniformity")

    p = sub.add_parser("baseline-acm", help="Chan-Vese level-set segmentation from an initial mask")
    p.add_argument("--image", required=True, type=_existing)
    p.add_argument("--init", "--roi", dest="init", required=True, type=_existing)
    p.add_argument("--out", required=True)
    p.add_argument("--max-iters", type=int, default=500)
    p.add_argument("--reinit-every", type=int, default=25)
    p.add_argument("--step-size", type=float, default=1.0)
    p.add_argument("--window", type=int, default=15)
    p.add_argument("--mu", type=float, default=0.1 * 255.0 ** 2)
    p.add_argument("--trace", help="write the energy trace here")
    p.add_argument("--seed", type=int, default=0, help="unused; accepted for uniformity")

    p = sub.add_parser("eval", help="score predicted masks against ground truth")
    p.add_argument("--pred", required=True, action="append", type=_existing)
    p.add_argument("--truth", required=True, action="append", type=_existing)
    p.add_argument("--out", help="CSV file with per-image and pooled rows")

    p = sub.add_parser("diag-correlation", help="code correlation on a 3-class blob corpus")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--atoms", type=int, default=9)
    p.add_argument("--gamma", type=float, default=0.25)
    p.add_argument("--lambda", dest="lam", type=float, default=0.1)
    p.add_argument("--out", help="CSV of the class-grouped correlation matrix")

    p = sub.add_parser("diag-recon-curve", help="reconstruction error against sparsity")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--atoms", type=int, default=256)
    p.add_argument("--max-s", type=int, default=20)
    p.add_argument("--budget", type=int, default=2000)
    p.add_argument("--gamma", type=float, default=0.3)
    p.add_argument("--out", help="CSV with one row per probe and sparsity level")
    return ap


def _write_text(path, text: str) -> None:
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _corpus(manifest, split, budget=0):
    images, masks = imaging.load_split(manifest, split)
    return imaging.TrainingCorpus(images, masks, sample_budget=budget)


def _dilate(mask, n):
    return binary_dilation(mask, iterations=n) if n > 0 else mask.copy()


def cmd_phantom_gen(a) -> None:
    out = Path(a.out)
    for sub in ("images", "masks", "rois"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    counts = [("train", a.n_train), ("val", a.n_val), ("test", a.n_test)]
    if any(n < 0 for _, n in counts):
        raise UsageError("phantom counts must be nonnegative")
    specs = imaging.phantom_series(sum(n for _, n in counts), a.seed)
    entries = []
    i = 0
    for split, n in counts:
        for _ in range(n):
            image, mask = imaging.gen_phantom(specs[i])
            name = f"{split}_{i:03d}.pgm"
            imaging.write_pgm(image, out / "images" / name)
            imaging.write_mask(mask, out / "masks" / name)
            if a.roi_dilation > 0:
                imaging.write_mask(_dilate(mask, a.roi_dilation), out / "rois" / name)
            entries.append({"image_path": str(out / "images" / name),
                            "mask_path": str(out / "masks" / name), "split": split})
            i += 1
    imaging.write_manifest(out / "manifest.jsonl", entries)


def cmd_train_ksca(a) -> None:
    corpus = _corpus(a.manifest, a.split, a.budget)
    model = pipeline.train_ksca(
        corpus, KernelConfig(gamma_intensity=a.gamma),
        EnsembleConfig(gamma_location=a.gamma_loc, neighborhood_radius=a.radius),
        k=a.atoms, seed=a.seed, solver_cfg=ksc.SolverConfig(lam=a.lam))
    pipeline.save_ksca(a.out, model)


def cmd_train_kscsa(a) -> None:
    corpus = _corpus(a.manifest, a.split)
    model = pipeline.train_kscsa(corpus, KernelConfig(gamma_intensity=a.gamma), k=a.atoms,
                                 per_class_budget=a.budget, seed=a.seed,
                                 solver_cfg=ksc.SolverConfig(lam=a.lam))
    pipeline.save_kscsa(a.out, model)


def cmd_sweep_epsilon(a) -> None:
    model = pipeline.load_kscsa(a.model)
    images, masks = imaging.load_split(a.manifest, a.split)
    rois = [_dilate(m, a.roi_dilation) for m in masks]
    sweep = pipeline.sweep_epsilon(model, images, masks, rois, a.epsilon_grid)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epsilon", "mean_acc", "mean_cr", "tumor_pixels"])
    for eps, acc, cr, n in sweep.rows():
        w.writerow([f"{eps:.6f}", f"{acc:.6f}", f"{cr:.6f}", n])
    _write_text(a.table, buf.getvalue())
    pipeline.save_kscsa(a.out, model.with_epsilon(sweep.best_epsilon))
    print(f"epsilon={sweep.best_epsilon:.6f}", file=sys.stderr)


def cmd_segment_auto(a) -> None:
    model = pipeline.load_ksca(a.model)
    imaging.write_mask(pipeline.segment_ksca(model, imaging.read_pgm(a.image)), a.out)


def cmd_segment_semi(a) -> None:
    model = pipeline.load_kscsa(a.model)
    image = imaging.read_pgm(a.image)
    roi = imaging.read_mask(a.roi)
    if model.epsilon is None and a.epsilon is None:
        raise UsageError("model has no epsilon; run sweep-epsilon or pass --epsilon")
    imaging.write_mask(pipeline.segment_kscsa(model, image, roi, a.epsilon), a.out)


def cmd_baseline_acm(a) -> None:
    cfg = acm.AcmConfig(max_iters=a.max_iters, reinit_every=a.reinit_every,
                        step_size=a.step_size, window=a.window, mu=a.mu)
    mask, trace = acm.evolve(imaging.read_pgm(a.image), imaging.read_mask(a.init), cfg)
    imaging.write_mask(mask, a.out)
    if a.trace:
        Path(a.trace).write_text("".join(f"{i},{e!r}\n" for i, e in enumerate(trace)))


def cmd_eval(a) -> None:
    if len(a.pred) != len(a.truth):
        raise UsageError("--pred and --truth must be given the same number of times")
    reports = []
    for p, t in zip(a.pred, a.truth):
        r = metrics.score(imaging.read_mask(p), imaging.read_mask(t), name=os.path.basename(p))
        reports.append(r)
        print(f"acc={r.acc:.6f} cr={r.cr:.6f}")
    if a.out:
        Path(a.out).write_text(metrics.metrics_csv(reports))


def cmd_diag_correlation(a) -> None:
    rep = diagnostics.correlation_experiment(seed=a.seed, k=a.atoms, gamma=a.gamma, lam=a.lam)
    inter = "absent" if rep.inter is None else f"{rep.inter:.6f}"
    print(f"intra={rep.intra:.6f} inter={inter}")
    if a.out:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["label"] + [str(v) for v in rep.labels])
        for lab, row in zip(rep.labels, rep.matrix):
            w.writerow([str(lab)] + [f"{v:.6f}" for v in row])
        Path(a.out).write_text(buf.getvalue())


def cmd_diag_recon_curve(a) -> None:
    res = diagnostics.recon_curve_experiment(seed=a.seed, k=a.atoms, max_s=a.max_s, budget=a.budget,
                                             kernel_cfg=KernelConfig(gamma_intensity=a.gamma))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["probe", "intensity", "in_training", "s", "error"])
    for i, curve in enumerate(res.curves):
        for s, e in enumerate(curve, 1):
            w.writerow([i, int(res.sample_intensities[i]), int(res.in_training[i]), s, f"{e:.6e}"])
    _write_text(a.out, buf.getvalue())


_COMMANDS = {
    "phantom-gen": cmd_phantom_gen,
    "train-ksca": cmd_train_ksca,
    "train-kscsa": cmd_train_kscsa,
    "sweep-epsilon": cmd_sweep_epsilon,
    "segment-auto": cmd_segment_auto,
    "segment-semi": cmd_segment_semi,
    "baseline-acm": cmd_baseline_acm,
    "eval": cmd_eval,
    "diag-correlation": cmd_diag_correlation,
    "diag-recon-curve": cmd_diag_recon_curve,
}


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"kernseg {args.command}: {exc}", file=sys.stderr)
        return 2
    except (DomainError, ValidationError, ParseError, SolverError, NumericalError,
            RuntimeError, OSError) as exc:
        print(f"kernseg {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
