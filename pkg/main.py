"""
Subspace Meta-Optimizer — Main Entry Point
Learned Riemannian optimization with row/column subspace adaptation

Usage:
    python main.py memory-report --model all
    python main.py train --task pca --shapes 20x4 --inner-steps 5 --outer-steps 300 --seed 1
    python main.py evaluate --checkpoint runs/checkpoint.txt --task pca --shapes 20x4,32x8
    python main.py gradcheck --only qr
"""

import argparse
import logging
import os
import sys
from pathlib import Path

from config import load_env, load_run_config
from models.schemas import RunConfig
from tools.csv_io import render_csv, write_atomic, write_csv, write_key_values
from tools.errors import (
    CheckpointError,
    ConfigError,
    DataError,
    DimensionError,
    DivergenceError,
    NumericError,
    SingularityError,
    StateError,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_VERIFY = 4

MODELS = ("vgg16", "resnet18", "resnet50", "all")
OPTIMIZERS = ("rsgd", "rsgdm", "rasa-like", "learned", "row-only", "col-only", "no-subspace-lstm")
MODES = ("full", "row-only", "col-only", "identity", "no-subspace-lstm")


def _banner(title: str) -> None:
    print("=" * 60)
    print(f"  {title}")
    print("=" * 60)


def _write_echo(run: RunConfig) -> Path:
    return write_key_values(Path(run.out_dir) / "resolved-config.txt", run.echo())


# ── memory-report ────────────────────────────────────────────────────

def cmd_memory_report(args) -> int:
    from tools.memory_model import CATALOGS, adaptation_flop_model, format_mb, full_report

    models = list(CATALOGS) if args.model == "all" else [args.model]
    report = full_report(models)
    text = render_csv(
        ("model", "method", "params", "bytes", "mb"),
        [(r.model, r.method, r.params, r.bytes, format_mb(r)) for r in report.rows],
    )

    flops_text = ""
    if args.flops:
        rows = []
        for token in args.flops:
            try:
                d, p = (int(x) for x in token.lower().split("x"))
            except ValueError:
                raise ConfigError(f"bad --flops shape {token!r} (expected DxP)") from None
            if d < 1 or p < 1:
                raise ConfigError(f"--flops shape {token!r} must be positive")
            rows.append((d, p, *adaptation_flop_model(d, p)))
        flops_text = render_csv(("d", "p", "subspace_flops", "full_matrix_flops"), rows)

    if not args.out:
        sys.stdout.write(text)
        if flops_text:
            sys.stdout.write("\n" + flops_text)
        return EXIT_OK

    _banner("📦 MEMORY REPORT — optimizer parameter storage")
    out = write_atomic(args.out, text)
    ours = report.row(report.rows[-1].model, "ours")
    print(f"\n  🧮 ours: {ours.params} params, {ours.bytes} bytes ({ours.kb:.2f} KB, {format_mb(ours)} MB)")
    for row in report.rows[:-1]:
        print(f"  🧮 {row.model} gmLSTM: {row.params:.4e} params, {format_mb(row)} MB")
    print(f"\n💾 Report saved to: {out}")
    if flops_text:
        flops_out = write_atomic(out.with_name(f"{out.stem}-flops.csv"), flops_text)
        print(f"💾 Flop table saved to: {flops_out}")
    return EXIT_OK


# ── train ────────────────────────────────────────────────────────────

def _train_overrides(args) -> dict:
    return {
        "task": args.task,
        "shapes": args.shapes,
        "inner_steps": args.inner_steps,
        "outer_steps": args.outer_steps,
        "seed": args.seed,
        "out_dir": args.out,
        "batch_size": args.batch_size,
        "outer_lr": args.outer_lr,
        "mode": args.mode,
        "persist_theta": args.persist_theta,
        "objective_data": args.objective_data,
    }


def cmd_train(args) -> int:
    from training.checkpoint import save_checkpoint
    from training.meta_trainer import META_HEADER, TRAJECTORY_HEADER, meta_rows, train, trajectory_rows

    run = load_run_config("train", args.config, _train_overrides(args))
    meta = run.meta
    out_dir = Path(run.out_dir)

    _banner("🧠 META-TRAINING — subspace optimizer")
    print(f"\n  📐 Shapes:  {', '.join(s.token() for s in meta.shapes)}")
    print(f"  🔁 Steps:   T={meta.inner_steps}, tau={meta.outer_steps}, seed={meta.seed}")
    print(f"  ⚙️  Outer:   {meta.outer_optimizer} lr={meta.outer_lr}, mode={meta.mode}, objective={meta.objective_data}")
    print(f"\n  ⏳ Training...\n")
    _write_echo(run)

    result = train(meta)

    ckpt = result.checkpoint()
    ckpt.config = run.echo()
    ckpt_path = save_checkpoint(ckpt, out_dir / "checkpoint.txt")
    traj_path = write_csv(out_dir / "trajectory.csv", TRAJECTORY_HEADER, trajectory_rows(result.trajectory))
    meta_path = write_csv(out_dir / "meta.csv", META_HEADER, meta_rows(result.trajectory))

    last = result.trajectory.outer[-1]
    print(f"  ✅ Done: J={last.meta_objective:.6g}, |dJ/dphi|={last.grad_norm:.3g}")
    print(f"  🧮 parameter_count {ckpt.parameter_count}")
    print(f"\n💾 Checkpoint saved to: {ckpt_path}")
    print(f"💾 Trajectory saved to: {traj_path}")
    print(f"💾 Meta log saved to: {meta_path}")
    return EXIT_OK


# ── evaluate ─────────────────────────────────────────────────────────

def _evaluate_overrides(args) -> dict:
    return {
        "task": args.task,
        "shapes": args.shapes,
        "batch_size": args.batch_size,
        "out_dir": args.out,
        "checkpoint": args.checkpoint,
        "optimizer": args.optimizer,
        "steps": args.steps,
        "seeds": args.seeds,
        "alpha": args.alpha,
        "beta": args.beta,
        "beta2": args.beta2,
        "epsilon": args.epsilon,
    }


def cmd_evaluate(args) -> int:
    from training.checkpoint import load_checkpoint
    from training.evaluation import CURVE_HEADER, LEARNED, SUMMARY_HEADER, curve_filename, evaluate, make_optimizer

    run = load_run_config("evaluate", args.config, _evaluate_overrides(args))
    name = run.optimizer or ("learned" if run.checkpoint else None)
    if name is None:
        raise ConfigError("evaluate needs --checkpoint or --optimizer")
    if name in LEARNED and not run.checkpoint:
        raise ConfigError(f"--optimizer {name} needs --checkpoint")

    params = load_checkpoint(run.checkpoint).params if run.checkpoint else None
    optimizer = make_optimizer(name, params, run.alpha, run.beta, run.beta2, run.epsilon)
    out_dir = Path(run.out_dir)

    _banner(f"📊 EVALUATION — {optimizer.name}")
    print(f"\n  📐 Shapes:  {', '.join(s.token() for s in run.meta.shapes)}")
    print(f"  🎲 Seeds:   {', '.join(str(s) for s in run.seeds)}")
    print(f"  🔁 Steps:   {run.steps}\n")
    _write_echo(run)

    curves, summary = evaluate(optimizer, run.meta, run.seeds, run.steps)
    for shape in run.meta.shapes:
        rows = [(c.step, c.seed, c.loss, c.feasibility) for c in curves[shape.param_id]]
        path = write_csv(out_dir / curve_filename(shape), CURVE_HEADER, rows)
        print(f"💾 Curve saved to: {path}")
    summary_path = write_csv(out_dir / "summary.csv", SUMMARY_HEADER,
                             [(s.shape, s.seed, s.initial_loss, s.final_loss, s.oracle_loss) for s in summary])
    for s in summary:
        print(f"  {s.shape} seed={s.seed}: {s.initial_loss:.6g} → {s.final_loss:.6g}")
    print(f"💾 Summary saved to: {summary_path}")
    return EXIT_OK


# ── gradcheck ────────────────────────────────────────────────────────

def cmd_gradcheck(args) -> int:
    from tools.gradcheck import run_suites

    _banner("🔬 GRADIENT CHECK — tape vs central differences")
    failures = []
    for suite, reports in run_suites(args.only).items():
        tol = args.meta_rel_tol if suite == "meta" else args.rel_tol
        print(f"\n  [{suite}] rel tol {tol:g}")
        for report in reports:
            ok = report.passed(tol)
            mark = "✅" if ok else "❌"
            print(f"  {mark} {report.name:<32} abs={report.max_abs_err:.3e} rel={report.max_rel_err:.3e}"
                  f" ({report.probe_count} probes)")
            if not ok:
                failures.append(report.name)

    if failures:
        print(f"\n❌ {len(failures)} check(s) over tolerance: {', '.join(failures)}", file=sys.stderr)
        return EXIT_VERIFY
    print("\n  ✅ All gradient checks passed")
    return EXIT_OK


# ── Parser ───────────────────────────────────────────────────────────

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="submeta",
        description="Subspace Meta-Optimizer — learned Riemannian optimization with row/column adaptation",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python main.py memory-report --model all
  python main.py train --task pca --shapes 20x4 --inner-steps 5 --outer-steps 10 --seed 1
  python main.py evaluate --optimizer rsgd --alpha 0.1 --task pca --shapes 20x4
  python main.py gradcheck --rel-tol 1e-6
        """
    )
    parser.add_argument("--log-level", default=None, help="Logging level (default: $LOG_LEVEL or WARNING)")
    sub = parser.add_subparsers(dest="command", required=True)

    mem = sub.add_parser("memory-report", help="Parameter storage of gmLSTM vs the subspace optimizer")
    mem.add_argument("--model", choices=MODELS, default="all", help="Shape catalog")
    mem.add_argument("--flops", nargs="+", metavar="DxP", help="Also emit the adaptation flop table for these shapes")
    mem.add_argument("--out", help="CSV path (default: print to stdout)")
    mem.set_defaults(handler=cmd_memory_report)

    tr = sub.add_parser("train", help="Meta-train the subspace optimizer")
    tr.add_argument("--config", help="key = value config file")
    tr.add_argument("--task", required=True, choices=("pca", "classifier", "constant"))
    tr.add_argument("--shapes", required=True, help="Comma-separated DxP or task:DxP tokens")
    tr.add_argument("--inner-steps", type=int, help="T")
    tr.add_argument("--outer-steps", type=int, help="tau")
    tr.add_argument("--seed", type=int)
    tr.add_argument("--out", help="Output directory")
    tr.add_argument("--batch-size", type=int)
    tr.add_argument("--outer-lr", type=float)
    tr.add_argument("--mode", choices=MODES)
    tr.add_argument("--persist-theta", action="store_true", default=None,
                    help="Carry theta across outer iterations instead of resampling")
    tr.add_argument("--objective-data", choices=("batch", "full"),
                    help="Score post-update losses on the step's batch (default) or the full dataset")
    tr.set_defaults(handler=cmd_train)

    ev = sub.add_parser("evaluate", help="Run an optimizer on held-out seeds")
    ev.add_argument("--config", help="key = value config file")
    ev.add_argument("--checkpoint", help="Trained checkpoint (implies --optimizer learned)")
    ev.add_argument("--optimizer", choices=OPTIMIZERS, help="Baseline or ablation; learned variants also need --checkpoint")
    ev.add_argument("--task", required=True, choices=("pca", "classifier", "constant"))
    ev.add_argument("--shapes", required=True)
    ev.add_argument("--steps", type=int)
    ev.add_argument("--seeds", help="101,102,... or 101..105")
    ev.add_argument("--batch-size", type=int)
    ev.add_argument("--alpha", type=float)
    ev.add_argument("--beta", type=float)
    ev.add_argument("--beta2", type=float)
    ev.add_argument("--epsilon", type=float)
    ev.add_argument("--out", help="Output directory")
    ev.set_defaults(handler=cmd_evaluate)

    gc = sub.add_parser("gradcheck", help="Finite-difference verification suites")
    gc.add_argument("--only", choices=("autodiff", "qr", "tasks", "meta"))
    gc.add_argument("--rel-tol", type=float, default=1e-6)
    gc.add_argument("--meta-rel-tol", type=float, default=1e-4)
    gc.set_defaults(handler=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    load_env()
    args = build_parser().parse_args(argv)
    level = (args.log_level or os.getenv("LOG_LEVEL") or "WARNING").upper()
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    try:
        return args.handler(args)
    except DivergenceError as e:
        print(f"❌ Diverged after outer step {e.last_good_step}: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except NumericError as e:
        print(f"❌ Numeric failure: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, DataError, CheckpointError, DimensionError, StateError, SingularityError, ValueError) as e:
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
