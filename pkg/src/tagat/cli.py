"""Command-line entry point: ``tagat <subcommand> ...``."""

import argparse
import json
import logging
import sys
from pathlib import Path

from . import fileio
from .errors import TagatError
from .graph import TaskSet, build_graph
from .losses import LossWeights
from .model import TAGAT, ModelConfig
from .synth import SynthConfig, generate_population, subject_ids, task_names
from .train import (
    FoldSpec, TrainConfig, assign_partitions, balanced_partitions, cross_validate,
    cross_validate_all, evaluate, loto_fold, run_label, train,
)

log = logging.getLogger("tagat")


def _add_model_args(p):
    g = p.add_argument_group("model")
    g.add_argument("--d-h", type=int, default=2048)
    g.add_argument("--d-mem", type=int, default=2048)
    g.add_argument("--d-proj", type=int, default=2048)
    g.add_argument("--heads", type=int, default=1)
    g.add_argument("--mlp-hidden", type=int, nargs=3, metavar=("H1", "H2", "H3"))
    g.add_argument("--dropout", type=float, default=0.2)
    g.add_argument("--no-task-aware", action="store_true",
                   help="drop the memory bank (the w/o TA baseline)")
    g.add_argument("--precision", choices=("32", "64"), default="64")
    t = p.add_argument_group("training")
    t.add_argument("--lambda1", type=float, default=50.0)
    t.add_argument("--lambda2", type=float, default=1.0)
    t.add_argument("--lr", type=float, default=4e-6)
    t.add_argument("--step-epochs", type=int, default=10)
    t.add_argument("--gamma", type=float, default=0.4)
    t.add_argument("--epochs", type=int, default=100)
    t.add_argument("--batch-size", type=int, default=16)
    t.add_argument("--momentum", type=float, default=0.0)
    t.add_argument("--weight-decay", type=float, default=0.0)
    t.add_argument("--seed", type=int, default=0)


def _configs(args, d_in, tasks: TaskSet):
    mc = ModelConfig(
        d_in=d_in, d_h=args.d_h, d_mem=args.d_mem, d_proj=args.d_proj, tasks=tasks.names,
        heads=args.heads, mlp_hidden=args.mlp_hidden, dropout=args.dropout,
        task_aware=not args.no_task_aware, dtype=f"float{args.precision}", seed=args.seed,
    )
    tc = TrainConfig(
        lr0=args.lr, step_epochs=args.step_epochs, gamma=args.gamma, epochs=args.epochs,
        batch_size=args.batch_size, weights=LossWeights(args.lambda1, args.lambda2),
        seed=args.seed, momentum=args.momentum, weight_decay=args.weight_decay,
    )
    return mc, tc


def _load_graphs(graph_dir):
    graphs, tasks, partitions = fileio.load_graph_dir(graph_dir)
    if not graphs:
        raise TagatError(f"{graph_dir}: no graphs")
    if not partitions:
        partitions = assign_partitions([g.subject_id for g in graphs])
    return graphs, tasks, partitions


def cmd_synth(args):
    cfg = SynthConfig(
        n_subjects=args.subjects, n_tasks=args.tasks, n_rois=args.rois, T=args.timepoints,
        gender_effect=args.gender_effect, cog_effect=args.cog_effect,
        task_effect=args.task_effect, noise_std=args.noise_std, seed=args.seed,
    )
    out = Path(args.out)
    entries = []
    for ts in generate_population(cfg):
        rel = f"scans/{ts.subject_id}_{ts.task}.csv"
        fileio.write_scan_csv(out / rel, ts.data)
        entries.append({"subject_id": ts.subject_id, "task_name": ts.task, "path": rel,
                        "gender": ts.gender, "cog_score": ts.cog_score})
    manifest = {
        "version": fileio.MANIFEST_VERSION,
        "roi_count": cfg.n_rois,
        "tasks": TaskSet(task_names(cfg.n_tasks)).to_dict(),
        "scans": entries,
        "partitions": balanced_partitions(subject_ids(cfg.n_subjects)),
        "synth_config": cfg.to_dict(),
    }
    fileio.write_json(out / "manifest.json", manifest)
    print(f"wrote {len(entries)} scans to {out}")


def cmd_build_graphs(args):
    manifest, scans = fileio.load_manifest_scans(args.manifest)
    graphs = []
    for ts in scans:
        try:
            graphs.append(build_graph(ts, args.density, args.ridge, args.drop_diagonal))
        except TagatError as exc:
            raise TagatError(f"scan {ts.subject_id}/{ts.task}: {exc}") from exc
    fileio.save_graph_dir(
        args.out, graphs, fileio.manifest_tasks(manifest), manifest.get("partitions"),
        extra={"density": args.density, "ridge": args.ridge, "drop_diagonal": args.drop_diagonal},
    )
    print(f"wrote {len(graphs)} graphs to {args.out}")


def cmd_train(args):
    graphs, tasks, partitions = _load_graphs(args.graphs)
    mc, tc = _configs(args, graphs[0].node_features.shape[1], tasks)
    fold = FoldSpec(tasks.get(args.heldout_task).name, args.test_partition, partitions)
    train_set, _, _ = fold.split(graphs)
    result = train(TAGAT(mc), train_set, tc)
    header = {
        "train_config": tc.to_dict(),
        "fold": {"held_out_task": fold.held_out_task, "test_partition": fold.test_partition},
        "partitions": partitions,
        "rng_state": result.rng_state,
        "history": result.history,
    }
    fileio.save_checkpoint(args.ckpt, result.model, header)
    if args.report:
        fileio.write_json(args.report, {"history": result.history, **header})
    last = result.history[-1]["loss"] if result.history else float("nan")
    print(f"trained {tc.epochs} epochs on {len(train_set)} scans; final loss {last:.6g}")


def _eval_report(model, graphs, fold: FoldSpec, label):
    _, known, unseen = fold.split(graphs)
    cells = {"known": {}, "unseen": {}}
    for task in model.config.tasks:
        subset = [g for g in (unseen if task == fold.held_out_task else known) if g.task == task]
        if subset:
            kind = "unseen" if task == fold.held_out_task else "known"
            cells[kind][task] = evaluate(model, subset).to_dict()
    return {"label": label, "held_out_task": fold.held_out_task,
            "test_partition": fold.test_partition, **cells}


def cmd_eval(args):
    model, header = fileio.load_checkpoint(args.ckpt)
    graphs, _, _ = _load_graphs(args.graphs)
    fold = FoldSpec(header["fold"]["held_out_task"], header["fold"]["test_partition"],
                    header["partitions"])
    tc = TrainConfig.from_dict(header["train_config"])
    report = _eval_report(model, graphs, fold, run_label(model.config, tc))
    fileio.write_json(args.report, report)
    print(json.dumps({k: report[k] for k in ("known", "unseen")}, sort_keys=True))


def cmd_loto(args):
    graphs, tasks, partitions = _load_graphs(args.graphs)
    mc, tc = _configs(args, graphs[0].node_features.shape[1], tasks)
    if args.all_tasks:
        report = cross_validate_all(graphs, mc, tc, partitions)
    else:
        if not args.heldout_task:
            raise TagatError("loto needs --heldout-task NAME or --all-tasks")
        report = cross_validate(graphs, tasks.get(args.heldout_task).name, mc, tc, partitions)
    fileio.write_json(args.report, report)
    runs = report["runs"] if args.all_tasks else [report]
    for run in runs:
        for kind in ("known", "unseen"):
            for task, cell in run[kind].items():
                print(f"{run['label']}\t{kind}\t{task}\tacc {cell['acc_text']}\tcorr {cell['corr_text']}")


def cmd_gradcheck(args):
    from .gradcheck import run_suite

    results = run_suite(args.seed, args.eps)
    for name, err in results.items():
        print(f"{name}\t{err:.3e}")
    worst = max(results.values())
    print(f"max_rel_error {worst:.3e}")
    return 0 if worst <= args.tol else 1


def build_parser():
    parser = argparse.ArgumentParser(prog="tagat", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic population")
    p.add_argument("--subjects", type=int, required=True)
    p.add_argument("--tasks", type=int, required=True)
    p.add_argument("--rois", type=int, required=True)
    p.add_argument("--timepoints", type=int, required=True)
    p.add_argument("--gender-effect", type=float, default=2.0)
    p.add_argument("--cog-effect", type=float, default=2.0)
    p.add_argument("--task-effect", type=float, default=1.0)
    p.add_argument("--noise-std", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("build-graphs", help="build brain graphs from a scan manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--density", type=float, default=0.05)
    p.add_argument("--ridge", type=float, default=None,
                   help="absolute ridge; default 1e-3 * trace(cov) / N per scan")
    p.add_argument("--drop-diagonal", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_graphs)

    p = sub.add_parser("train", help="train one leave-one-task-out fold")
    p.add_argument("--graphs", required=True)
    p.add_argument("--heldout-task", required=True)
    p.add_argument("--test-partition", type=int, required=True, choices=range(1, 6))
    p.add_argument("--ckpt", required=True)
    p.add_argument("--report")
    _add_model_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on its test partition")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--graphs", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("loto", help="5-partition cross-validation with a held-out task")
    p.add_argument("--graphs", required=True)
    p.add_argument("--heldout-task")
    p.add_argument("--all-tasks", action="store_true")
    p.add_argument("--report", required=True)
    _add_model_args(p)
    p.set_defaults(func=cmd_loto)

    p = sub.add_parser("gradcheck", help="finite-difference check at toy scale")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=float, default=1e-4)
    p.add_argument("--tol", type=float, default=1e-5)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args) or 0
    except (TagatError, ValueError, KeyError, OSError) as exc:
        err = {"type": type(exc).__name__, "command": args.command, "message": str(exc)}
        print("error: " + json.dumps(err, sort_keys=True), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
