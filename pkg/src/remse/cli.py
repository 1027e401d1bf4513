"""Command-line entry point.

Exit codes: 0 success, 2 usage/config error, 3 data error, 4 numeric divergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .data import ConfigError, DataError, SynthConfig, generate_synthetic, load_dataset, save_dataset
from .evaluation import evaluate, write_curve, write_report
from .losses import LOSS_NAMES, DegeneratePredictionError
from .numerics import NumericError, make_rng
from .rebalance import DEFAULT_EPS, export_heatmap
from .trainer import (
    ConvergenceError,
    LinearEmbedding,
    StepSizeError,
    TrainConfig,
    TrainingDiverged,
    demo_proposition_a,
    demo_theorem_b,
    diagnostics,
    train,
)

log = logging.getLogger("remse")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _write_config(outdir: Path, args: argparse.Namespace) -> None:
    doc = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    (outdir / "config.json").write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def cmd_synth(args) -> int:
    cfg = SynthConfig(
        classes=args.classes,
        seen=args.seen,
        ds=args.ds,
        dv=args.dv,
        n_per_class=args.n_per_class,
        noise=args.noise,
        gamma=args.gamma,
        value_range=tuple(args.value_range),
        test_fraction=args.test_fraction,
    )
    data = generate_synthetic(cfg, make_rng(args.seed))
    out = Path(args.out)
    save_dataset(*data, out)
    _write_config(out, args)
    print(f"wrote {data.store.instance_count} instances, {data.table.class_count} classes to {out}")
    return EXIT_OK


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        loss=args.loss,
        tau=args.tau,
        lam=args.lam,
        sigma=args.sigma,
        alpha=args.alpha,
        beta=args.beta,
        eps=args.eps,
        mu=args.ema,
        lr=args.lr,
        epochs=args.epochs,
        batch_size=args.batch,
        seed=args.seed,
        init_scale=args.init_scale,
    )


def cmd_train(args) -> int:
    cfg = _train_config(args)
    data = load_dataset(args.data)
    out = Path(args.out) if args.out else Path(args.data) / "run"
    out.mkdir(parents=True, exist_ok=True)
    model, trace = train(data, cfg)
    model.save(out / "model.json", cfg)
    trace.to_csv(out / "trace.csv")
    _write_config(out, args)
    last = trace.records[-1]
    print(f"loss {last.loss:.6g}  error mean {last.error_mean:.4g}  std {last.error_std:.4g}  pcc {last.pcc:.3f}")
    return EXIT_OK


def _load_model(path):
    model, _ = LinearEmbedding.load(path)
    return model


def cmd_eval(args) -> int:
    data = load_dataset(args.data)
    model = _load_model(args.model)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report, curve = evaluate(model.W, data, args.split)
    write_report(report, out)
    write_curve(curve, out / "ausuc.csv")
    _write_config(out, args)
    print(f"T1 {report.T1:.4f}  U {report.U:.4f}  S {report.S:.4f}  H {report.H:.4f}  AUSUC {report.AUSUC:.4f}")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    data = load_dataset(args.data)
    model = _load_model(args.model)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    d = diagnostics(model.W, data, args.split)
    export_heatmap(d["matrix"], out / "heatmap", data.table.names, args.eps)
    summary = {"split": args.split, "pcc": d["pcc"], "error_mean": d["error_mean"], "error_std": d["error_std"]}
    (out / "diagnostics.json").write_text(json.dumps(summary, indent=1) + "\n", encoding="utf-8")
    with open(out / "diagnostics.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(summary.keys())
        w.writerow([args.split, *(repr(float(summary[k])) for k in ("pcc", "error_mean", "error_std"))])
    _write_config(out, args)
    print(f"{args.split}: pcc {d['pcc']:.4f}  mean {d['error_mean']:.4g}  std {d['error_std']:.4g}")
    return EXIT_OK


def cmd_demo(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.which == "theorem-b":
        traj = demo_theorem_b(args.x0, args.y0, args.x, args.y, args.lr, args.alpha, args.steps, args.eps)
        with open(out / "trajectory.csv", "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["step", "e_x", "e_y", "w", "v"])
            for t, row in enumerate(traj):
                w.writerow([t, *(repr(float(x)) for x in row)])
        print(f"final errors e_x={traj[-1, 0]:.3g} e_y={traj[-1, 1]:.3g} after {args.steps} steps")
    else:
        rep = demo_proposition_a()
        with open(out / "report.csv", "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["sample", "pred_norm", "label_norm_cos", "gap"])
            for i in range(rep["pred_norm"].size):
                w.writerow([i, repr(float(rep["pred_norm"][i])), repr(float(rep["projected_norm"][i])),
                            repr(float(rep["gap"][i]))])
        print(f"W = {np.round(rep['W'].ravel(), 8).tolist()}  max gap {rep['gap'].max():.3g}")
    _write_config(out, args)
    return EXIT_OK


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--loss", choices=LOSS_NAMES, default="sce+remse")
    p.add_argument("--alpha", type=float, default=1.0, help="class-level factor exponent")
    p.add_argument("--beta", type=float, default=1.0, help="semantic-level factor exponent")
    p.add_argument("--lambda", dest="lam", type=float, default=1.0, help="weight of the regression term")
    p.add_argument("--tau", type=float, default=20.0, help="cosine softmax scale")
    p.add_argument("--sigma", type=float, default=1.0, help="Balanced MSE temperature")
    p.add_argument("--eps", type=float, default=DEFAULT_EPS, help="floor inside factor ratios")
    p.add_argument("--ema", type=float, default=None, metavar="MU",
                   help="smooth the error matrix across batches (off by default)")
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--init-scale", type=float, default=1.0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="remse", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset directory")
    p.add_argument("--classes", type=int, default=20)
    p.add_argument("--seen", type=int, default=15)
    p.add_argument("--ds", type=int, default=16)
    p.add_argument("--dv", type=int, default=32)
    p.add_argument("--n-per-class", type=int, default=30)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--value-range", type=float, nargs=2, default=[0.0, 100.0], metavar=("LO", "HI"))
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a linear semantic predictor")
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None, help="output directory (default: <data>/run)")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="ZSL/GZSL metrics for a trained model")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test", choices=["train", "test_seen", "test_unseen", "test", "all"],
                   help="split used for the error-matrix metrics")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("diagnose", help="error-matrix heatmap, PCC and mean/std")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test", choices=["train", "test_seen", "test_unseen", "test", "all"])
    p.add_argument("--eps", type=float, default=DEFAULT_EPS)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("demo", help="two-sample reweighting demo or MSE norm demo")
    p.add_argument("which", choices=["theorem-b", "prop-a"])
    p.add_argument("--out", required=True)
    p.add_argument("--x0", type=float, default=1.0)
    p.add_argument("--y0", type=float, default=2.0)
    p.add_argument("--x", type=float, default=0.0)
    p.add_argument("--y", type=float, default=0.0)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--eps", type=float, default=DEFAULT_EPS)
    p.set_defaults(func=cmd_demo)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (DataError, FileNotFoundError, json.JSONDecodeError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingDiverged, StepSizeError, ConvergenceError, NumericError, DegeneratePredictionError) as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ValueError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
