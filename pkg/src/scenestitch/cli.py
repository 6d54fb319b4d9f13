"""Command-line entry point.

JSON results go to stdout, logs to stderr. Exit status is 0 on success, 1 on
a domain error (reported as JSON on stderr) and 2 on a usage error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

from . import consistency, corpus, evalkit, manipulator, plotting
from . import model as M
from . import tokenizer
from . import scenegraph as sg
from .errors import SceneStitchError
from .model import SamplerConfig

log = logging.getLogger("scenestitch")


def _dump(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


def _schema(args) -> sg.Schema:
    return sg.load_schema_file(args.schema) if args.schema else sg.DEFAULT_SCHEMA


def read_graph(path, schema: sg.Schema) -> sg.SceneGraph:
    path = Path(path)
    data = path.read_bytes()
    if path.suffix == ".json":
        return sg.from_json(json.loads(data))
    return corpus.load_triplets(data, schema)


def read_scene_dir(directory, schema: sg.Schema) -> list[sg.SceneGraph]:
    directory = Path(directory)
    manifest = directory / "manifest.json"
    if manifest.exists():
        names = json.loads(manifest.read_text())["files"]
    else:
        names = sorted(p.name for p in directory.glob("*.txt"))
    return [corpus.load_triplets((directory / n).read_bytes(), schema) for n in names]


def _load_model(path):
    model, config = M.load_checkpoint(Path(path).read_bytes())
    schema = sg.Schema.from_dict(config.schema) if config.schema else sg.DEFAULT_SCHEMA
    sg.register_schema(schema)
    return model, config.vocabulary(), schema


def _policy(args) -> manipulator.StitchPolicy:
    top_k = args.accept == "top4"
    return manipulator.StitchPolicy(
        edge_acceptance=manipulator.ACCEPT_TOP_K if top_k else manipulator.ACCEPT_ALL,
        k=4,
        max_resample_attempts=args.resample,
        repair=args.repair,
        sampler=SamplerConfig(top_p=args.top_p, seed=args.seed),
    )


def _node(text: str) -> sg.NodeRef:
    try:
        return sg.NodeRef.parse(text)
    except ValueError as exc:
        raise SceneStitchError(str(exc)) from None


def _write_manipulation(args, graph: sg.SceneGraph, report: dict) -> None:
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_bytes(corpus.save_triplets(graph))
        out.with_name(out.name + ".json").write_text(_dump(report))
    sys.stdout.write(_dump(report))


def cmd_gen_data(args) -> int:
    schema = _schema(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scenes = corpus.generate_corpus(
        args.count,
        args.seed,
        node_count_range=(args.min_nodes, args.max_nodes),
        margin=args.margin,
        density=args.density,
        schema=schema,
    )
    width = max(5, len(str(args.count)))
    files = []
    for i, g in enumerate(scenes):
        name = f"scene_{i:0{width}d}.txt"
        (out / name).write_bytes(corpus.save_triplets(g))
        files.append(name)
    manifest = {
        "count": args.count,
        "seed": args.seed,
        "min_nodes": args.min_nodes,
        "max_nodes": args.max_nodes,
        "margin": args.margin,
        "density": args.density,
        "schema": schema.schema_id,
        "files": files,
    }
    (out / "manifest.json").write_text(_dump(manifest))
    sys.stdout.write(_dump({"count": len(files), "edges": sum(len(g.edges) for g in scenes), "out": str(out)}))
    return 0


def cmd_train(args) -> int:
    schema = _schema(args)
    scenes = read_scene_dir(args.data, schema)
    n_hold = max(1, int(round(args.holdout_fraction * len(scenes)))) if len(scenes) > 1 else 0
    train, hold = scenes[: len(scenes) - n_hold], scenes[len(scenes) - n_hold:]
    vocab = tokenizer.build_vocab(schema)
    overrides = {"seed": args.seed, "supervision_mode": args.supervision}
    if args.epochs is not None:
        overrides["max_epochs"] = args.epochs
    if args.shuffle_copies is not None:
        overrides["shuffle_copies"] = args.shuffle_copies
    for key in ("hidden_size", "num_heads", "num_layers"):
        if getattr(args, key) is not None:
            overrides[key] = getattr(args, key)
    config = M.make_config(vocab, args.profile, schema, **overrides)
    model, tlog = M.train(config, train, hold, vocab)
    ckpt = Path(args.ckpt)
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    ckpt.write_bytes(M.save_checkpoint(model, config))
    if args.log:
        Path(args.log).write_text(tlog.to_csv())
    if args.vocab:
        Path(args.vocab).write_text(vocab.dumps())
    if args.figures:
        plotting.training_curve(tlog.rows, Path(args.figures) / "training_curve.png")
    sys.stdout.write(
        _dump(
            {
                "ckpt": str(ckpt),
                "train_scenes": len(train),
                "holdout_scenes": len(hold),
                "epochs_run": tlog.rows[-1]["epoch"],
                "best_epoch": tlog.best_epoch,
                "stopped_early": tlog.stopped_early,
                "initial_holdout_loss": tlog.rows[0]["holdout_loss"],
                "best_holdout_loss": min(r["holdout_loss"] for r in tlog.rows),
            }
        )
    )
    return 0


def cmd_add_node(args) -> int:
    model, vocab, schema = _load_model(args.ckpt)
    g = read_graph(args.graph, schema)
    v = sg.NodeRef(args.cls, args.instance)
    res = manipulator.add_node(model, vocab, g, v, _policy(args))
    _write_manipulation(args, res.graph, res.to_dict())
    return 0


def cmd_change_edge(args) -> int:
    model, vocab, schema = _load_model(args.ckpt)
    g = read_graph(args.graph, schema)
    edge = sg.Edge(_node(args.src), _node(args.dst), args.rel)
    if args.naive:
        out = manipulator.naive_change_edge(g, edge)
        report = {"consistent": consistency.is_spatially_consistent(out), "graph": sg.to_json(out)}
        _write_manipulation(args, out, report)
        return 0
    res = manipulator.change_edge(model, vocab, g, edge, _policy(args))
    _write_manipulation(args, res.graph, res.to_dict())
    return 0


def cmd_remove_node(args) -> int:
    schema = _schema(args)
    g = read_graph(args.graph, schema)
    out = manipulator.remove_node_op(g, sg.NodeRef(args.cls, args.instance))
    report = {"consistent": consistency.is_spatially_consistent(out), "graph": sg.to_json(out)}
    _write_manipulation(args, out, report)
    return 0


def cmd_check(args) -> int:
    g = read_graph(args.graph, _schema(args))
    report = consistency.check(g, include_size=args.sizes)
    sys.stdout.write(_dump(report.to_dict()))
    return 0 if report.consistent else 1


def cmd_export_dot(args) -> int:
    g = read_graph(args.graph, _schema(args))
    dot = corpus.to_dot(g)
    if args.out:
        Path(args.out).write_bytes(dot)
    else:
        sys.stdout.write(dot.decode("utf-8"))
    return 0


def cmd_eval(args) -> int:
    model, vocab, schema = _load_model(args.ckpt)
    scenes = read_scene_dir(args.scenes, schema)
    report, outcomes = evalkit.run_edge_eval(model, vocab, scenes, args.holdout_fraction, args.seed)
    result = report.to_dict()
    ranks = [o.rank for o in outcomes]
    if args.cycle_tasks:
        policy = _policy(args)
        result["cycle_bench"] = {}
        for name, adversarial in (("standard", False), ("adversarial", True)):
            tasks = evalkit.cycle_benchmark_tasks(args.cycle_tasks, args.seed, adversarial=adversarial)
            graphs, cmds = [t[0] for t in tasks], [t[1] for t in tasks]
            result["cycle_bench"][name] = {
                method: evalkit.run_cycle_bench(model, vocab, graphs, cmds, method, policy).to_dict()
                for method in ("stitch", "naive")
            }
    if args.report:
        Path(args.report).parent.mkdir(parents=True, exist_ok=True)
        Path(args.report).write_text(_dump(result))
    if args.ranks_csv:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["subject", "object", "truth", "rank"])
        for o in outcomes:
            w.writerow([o.query[0].name, o.query[1].name, o.query[2], o.rank])
        Path(args.ranks_csv).write_text(buf.getvalue())
    if args.figures:
        fig_dir = Path(args.figures)
        plotting.rank_histogram(ranks, len(vocab.relations), fig_dir / "rank_histogram.png")
        if args.cycle_tasks:
            for name, reports in result["cycle_bench"].items():
                plotting.cycle_rates(reports, fig_dir / f"cycle_rates_{name}.png")
    sys.stdout.write(_dump(result))
    return 0


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="seed for every random choice")
    common.add_argument("--schema", help="schema JSON file (built-in 7-relation schema when omitted)")
    common.add_argument("--verbose", action="store_true", help="log progress to stderr")

    manip = argparse.ArgumentParser(add_help=False)
    manip.add_argument("--graph", required=True, help="input graph (.json or triplet text)")
    manip.add_argument("--out", help="write resulting triplets here and the JSON report to <out>.json")

    sampling = argparse.ArgumentParser(add_help=False)
    sampling.add_argument("--top-p", type=float, default=0.7, help="nucleus threshold")
    sampling.add_argument("--repair", action="store_true", help="drop low-confidence predicted edges until acyclic")
    sampling.add_argument("--accept", choices=("all", "top4"), default="all", help="edge acceptance")
    sampling.add_argument("--resample", type=int, default=8, help="max resampling attempts on conflict")

    ckpt = argparse.ArgumentParser(add_help=False)
    ckpt.add_argument("--ckpt", required=True, help="model checkpoint")

    p = argparse.ArgumentParser(prog="scenestitch", description=__doc__.splitlines()[0], formatter_class=fmt)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-data", parents=[common], formatter_class=fmt, help="write a synthetic scene corpus")
    s.add_argument("--count", type=int, required=True, help="number of scenes")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--min-nodes", type=int, default=3, help="fewest objects per scene")
    s.add_argument("--max-nodes", type=int, default=5, help="most objects per scene")
    s.add_argument("--margin", type=float, default=0.5, help="minimum coordinate gap for a spatial relation")
    s.add_argument("--density", type=float, default=0.6, help="fraction of derivable relations kept")
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("train", parents=[common], formatter_class=fmt, help="train a model on a scene directory")
    s.add_argument("--data", required=True, help="directory written by gen-data")
    s.add_argument("--ckpt", required=True, help="checkpoint output path")
    s.add_argument("--profile", choices=sorted(M.PROFILES), default="desk", help="model size preset")
    s.add_argument("--epochs", type=int, help="override the profile's max epochs")
    s.add_argument("--shuffle-copies", type=int, help="edge-order permutations per scene (profile value: 3)")
    s.add_argument("--hidden-size", type=int, help="override the profile's hidden width")
    s.add_argument("--num-heads", type=int, help="override the profile's attention heads")
    s.add_argument("--num-layers", type=int, help="override the profile's layer count")
    s.add_argument(
        "--supervision", choices=(M.FULL_TOKEN, M.PREDICATE_ONLY), default=M.FULL_TOKEN, help="which targets carry loss"
    )
    s.add_argument("--holdout-fraction", type=float, default=0.05, help="trailing share of scenes held out")
    s.add_argument("--log", help="training log CSV path")
    s.add_argument("--vocab", help="also write the vocabulary file here")
    s.add_argument("--figures", help="directory for the loss-curve figure")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser(
        "add-node", parents=[common, ckpt, manip, sampling], formatter_class=fmt, help="insert a node and predict its edges"
    )
    s.add_argument("--class", dest="cls", required=True, help="class label of the new node")
    s.add_argument("--instance", type=int, required=True, help="instance index of the new node")
    s.set_defaults(func=cmd_add_node)

    s = sub.add_parser(
        "change-edge", parents=[common, ckpt, manip, sampling], formatter_class=fmt, help="cut-and-stitch an edge change"
    )
    s.add_argument("--src", required=True, help="node of interest, e.g. chair_1")
    s.add_argument("--dst", required=True, help="other endpoint, e.g. desk_1")
    s.add_argument("--rel", required=True, help="new relation")
    s.add_argument("--naive", action="store_true", help="relabel the edge only (baseline)")
    s.set_defaults(func=cmd_change_edge)

    s = sub.add_parser("remove-node", parents=[common, manip], formatter_class=fmt, help="delete a node and its edges")
    s.add_argument("--class", dest="cls", required=True, help="class label of the node")
    s.add_argument("--instance", type=int, required=True, help="instance index of the node")
    s.set_defaults(func=cmd_remove_node)

    s = sub.add_parser(
        "check", parents=[common], formatter_class=fmt, help="cycle-check a graph; exit 1 when contradictory"
    )
    s.add_argument("--graph", required=True, help="input graph (.json or triplet text)")
    s.add_argument("--sizes", action="store_true", help="also check bigger_than/smaller_than cycles")
    s.set_defaults(func=cmd_check)

    s = sub.add_parser(
        "eval", parents=[common, ckpt, sampling], formatter_class=fmt,
        help="held-out ranking metrics and cycle-rate benchmark",
    )
    s.add_argument("--scenes", required=True, help="directory written by gen-data")
    s.add_argument("--report", help="report JSON path")
    s.add_argument("--ranks-csv", help="per-query ranks CSV path")
    s.add_argument("--holdout-fraction", type=float, default=1.0, help="share of each scene's edges queried")
    s.add_argument(
        "--cycle-tasks", type=int, default=0, help="edge-change tasks per cycle benchmark (standard and adversarial)"
    )
    s.add_argument("--figures", help="directory for report figures")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("export-dot", parents=[common], formatter_class=fmt, help="write a Graphviz DOT rendering")
    s.add_argument("--graph", required=True, help="input graph (.json or triplet text)")
    s.add_argument("--out", help="DOT output path (stdout when omitted)")
    s.set_defaults(func=cmd_export_dot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except SceneStitchError as exc:
        sys.stderr.write(json.dumps(exc.to_dict()) + "\n")
        return 1
    except FileNotFoundError as exc:
        sys.stderr.write(json.dumps({"error": "file_not_found", "message": str(exc)}) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
