"""Command-line entry point.

Precedence, lowest to highest: built-in defaults, the preset, the JSON config
file, ``--set section.key=value`` overrides, then dedicated flags.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import diagnostics
from .config import RunConfig, run_config_from_dict
from .errors import CaqrError, ConfigError, DataError, NumericError
from .evaluator import EvalReport, evaluate
from .kg import KnowledgeGraph, load_triples, read_triples, write_triples
from .queries import QueryInstance, QueryType, read_queries, write_queries
from .synthetic import build_graphs, generate_queries, random_triples, split_triples
from .trainer import load_model, train_loop

EXIT_USAGE = 1

# training flags and their value types
TRAIN_FLAGS = {
    "backend": str,
    "dim": int,
    "margin": float,
    "negatives": int,
    "context_samples": int,
    "lr": float,
    "batch_size": int,
    "var_weight": float,
    "pos_dim": int,
    "role_dim": int,
    "type_dim": int,
    "max_steps": int,
    "checkpoint_every": int,
    "workers": int,
    "seed": int,
    "dtype": str,
}
SWITCHES = ("caqr", "position", "role", "type", "relation_induced")


class UsageError(CaqrError):
    exit_code = EXIT_USAGE


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="caqr", description="Context-aware query embeddings over knowledge graphs.")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--preset", choices=["paper", "desk"], help="base defaults for training fields")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override, e.g. train.dim=32")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add_train_flags(sp):
        g = sp.add_argument_group("training")
        for name, typ in TRAIN_FLAGS.items():
            g.add_argument("--" + name.replace("_", "-"), dest="t_" + name, type=typ)
        for name in SWITCHES:
            flag = name.replace("_", "-")
            g.add_argument(f"--{flag}", dest="s_" + name, action="store_true", default=None)
            g.add_argument(f"--no-{flag}", dest="s_" + name, action="store_false")

    sp = sub.add_parser("build-kg", help="split a triple file (or a random graph) into train/full")
    sp.add_argument("--triples", dest="p_triples")
    sp.add_argument("--out-dir", dest="p_out_dir")
    sp.add_argument("--train-fraction", dest="k_train_fraction", type=float)
    sp.add_argument("--synthetic", nargs=3, type=int, metavar=("ENTITIES", "RELATIONS", "TRIPLES"))
    sp.add_argument("--seed", dest="k_seed", type=int)

    sp = sub.add_parser("make-queries", help="ground queries and label easy/hard answers")
    sp.add_argument("--train-triples", dest="p_train_triples")
    sp.add_argument("--full-triples", dest="p_full_triples")
    sp.add_argument("--out", dest="p_queries")
    sp.add_argument("--types", help="comma separated, e.g. 1p,2p,2i")
    sp.add_argument("--per-type", dest="g_per_type", type=int)
    sp.add_argument("--require-hard", dest="g_require_hard", action="store_true", default=None)
    sp.add_argument("--seed", dest="g_seed", type=int)

    sp = sub.add_parser("train", help="train a model and write a checkpoint")
    sp.add_argument("--train-triples", dest="p_train_triples")
    sp.add_argument("--full-triples", dest="p_full_triples")
    sp.add_argument("--queries", dest="p_train_queries")
    sp.add_argument("--valid-queries", dest="p_valid_queries")
    sp.add_argument("--checkpoint", dest="p_checkpoint")
    sp.add_argument("--metrics", dest="p_metrics")
    add_train_flags(sp)

    sp = sub.add_parser("eval", help="filtered ranking metrics for a query file")
    sp.add_argument("--checkpoint", dest="p_checkpoint")
    sp.add_argument("--train-triples", dest="p_train_triples")
    sp.add_argument("--full-triples", dest="p_full_triples")
    sp.add_argument("--queries", dest="p_queries")
    sp.add_argument("--report", dest="p_report")
    sp.add_argument("--baseline-report", dest="p_baseline_report")
    sp.add_argument("--targets", dest="e_targets", choices=["hard", "all"])

    sp = sub.add_parser("answer", help="top-k entities for one query")
    sp.add_argument("--checkpoint", dest="p_checkpoint")
    sp.add_argument("--train-triples", dest="p_train_triples")
    sp.add_argument("--full-triples", dest="p_full_triples")
    sp.add_argument("--type", dest="a_type")
    sp.add_argument("--anchors", help="comma separated entity labels")
    sp.add_argument("--relations", help="comma separated relation labels")
    sp.add_argument("--top-k", dest="a_top_k", type=int)

    sp = sub.add_parser("gradcheck", help="finite-difference check of every primitive and the full loss")
    sp.add_argument("--backend", choices=["box", "beta", "both"], default="both")
    sp.add_argument("--max-coords", type=int, default=None)
    sp.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("bench-context", help="time the relation-induced context for several sample sizes")
    sp.add_argument("--samples", help="comma separated sample sizes")
    sp.add_argument("--calls", dest="b_calls", type=int)
    sp.add_argument("--dim", dest="b_dim", type=int)
    return p


_PREFIX = {"p_": "paths", "t_": "train", "k_": "kg", "g_": "generate", "e_": "eval", "a_": "answer", "b_": "bench"}


def resolve_config(args) -> RunConfig:
    data: dict = {}
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise ConfigError("config", f"cannot read {args.config}: {exc.strerror}") from None
        if text.strip():
            try:
                data = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ConfigError("config", f"invalid JSON at line {exc.lineno}: {exc.msg}") from None
            if not isinstance(data, dict):
                raise ConfigError("<root>", "config must be a key/value document")
    if args.preset:
        data["preset"] = args.preset
    for item in args.set:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        _put(data, key.split("."), value)
    for name, value in vars(args).items():
        if value is None:
            continue
        if name.startswith("s_"):
            _put(data, ["train", "use_" + name[2:]], value)
        elif name[:2] in _PREFIX:
            _put(data, [_PREFIX[name[:2]], name[2:]], value)
    if getattr(args, "types", None):
        _put(data, ["generate", "types"], args.types.split(","))
    if getattr(args, "anchors", None) is not None:
        _put(data, ["answer", "anchors"], [a for a in args.anchors.split(",") if a])
    if getattr(args, "relations", None) is not None:
        _put(data, ["answer", "relations"], [r for r in args.relations.split(",") if r])
    if getattr(args, "samples", None):
        _put(data, ["bench", "samples"], [int(s) for s in args.samples.split(",")])
    return run_config_from_dict(data)


def _put(data: dict, keys: list, value) -> None:
    for k in keys[:-1]:
        node = data.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(k, "expected a key/value section")
        data = node
    data[keys[-1]] = value


def _need(value, key):
    if value is None:
        raise ConfigError(key, "required for this command")
    return value


def _load_graphs(cfg: RunConfig) -> KnowledgeGraph:
    """Training graph; indexed against the full graph's vocabulary when one is given."""
    train_path = _need(cfg.paths.train_triples, "paths.train_triples")
    if cfg.paths.full_triples:
        kg_full = load_triples(cfg.paths.full_triples)
        return load_triples(train_path, vocab=kg_full)
    return load_triples(train_path)


def _full_graph(cfg: RunConfig, kg_train: KnowledgeGraph) -> KnowledgeGraph:
    return load_triples(cfg.paths.full_triples, vocab=kg_train) if cfg.paths.full_triples else kg_train


def _load_model(cfg: RunConfig, kg: KnowledgeGraph):
    model = load_model(_need(cfg.paths.checkpoint, "paths.checkpoint"))
    if (model.num_entities, model.num_relations) != (kg.num_entities, kg.num_relations):
        raise DataError(
            f"checkpoint was trained on {model.num_entities} entities / {model.num_relations} relations, "
            f"graph has {kg.num_entities} / {kg.num_relations}"
        )
    return model


# --- commands ---------------------------------------------------------------------


def cmd_build_kg(cfg: RunConfig, args, out) -> None:
    out_dir = Path(_need(cfg.paths.out_dir, "paths.out_dir"))
    if args.synthetic:
        n, r, t = args.synthetic
        triples = random_triples(n, r, t, cfg.kg.seed)
    else:
        triples = read_triples(_need(cfg.paths.triples, "paths.triples"))
    train, full = split_triples(triples, cfg.kg.train_fraction, cfg.kg.seed)
    kg_train, kg_full = build_graphs(train, full)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_triples(out_dir / "train.tsv", train)
    write_triples(out_dir / "full.tsv", full)
    stats = {"train": kg_train.stats(), "full": kg_full.stats()}
    (out_dir / "stats.json").write_text(json.dumps(stats, sort_keys=True, indent=2) + "\n")
    print(json.dumps(stats, sort_keys=True), file=out)


def cmd_make_queries(cfg: RunConfig, args, out) -> None:
    kg_train = _load_graphs(cfg)
    kg_full = _full_graph(cfg, kg_train)
    g = cfg.generate
    types = [QueryType(t) for t in g.types]
    instances = generate_queries(kg_train, kg_full, types, g.per_type, g.seed, g.require_hard)
    path = _need(cfg.paths.queries, "paths.queries")
    write_queries(path, instances, kg_full)
    counts = {str(t): sum(1 for i in instances if i.type == t) for t in types}
    print(json.dumps({"written": len(instances), "per_type": counts}, sort_keys=True), file=out)


def cmd_train(cfg: RunConfig, args, out) -> None:
    kg = _load_graphs(cfg)
    train = read_queries(_need(cfg.paths.train_queries, "paths.train_queries"), kg)
    valid = read_queries(cfg.paths.valid_queries, kg) if cfg.paths.valid_queries else None
    result = train_loop(
        kg,
        train,
        cfg.train,
        checkpoint_path=cfg.paths.checkpoint,
        metrics_path=cfg.paths.metrics,
        valid=valid,
        log=lambda s: print(s, file=out),
    )
    last = result.history[-1] if result.history else {}
    print(json.dumps({"steps": len(result.history), "final_loss": last.get("loss")}), file=out)


def cmd_eval(cfg: RunConfig, args, out) -> None:
    kg = _load_graphs(cfg)
    model = _load_model(cfg, kg)
    instances = read_queries(_need(cfg.paths.queries, "paths.queries"), kg)
    baseline = None
    if cfg.paths.baseline_report:
        try:
            baseline = EvalReport.from_dict(json.loads(Path(cfg.paths.baseline_report).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read baseline report: {exc}") from None
    report = evaluate(model, kg, instances, cfg.eval.targets, baseline, cfg.eval.batch_size)
    if cfg.paths.report:
        Path(cfg.paths.report).parent.mkdir(parents=True, exist_ok=True)
        Path(cfg.paths.report).write_text(report.to_json() + "\n")
    print(report.table(), file=out)


def cmd_answer(cfg: RunConfig, args, out) -> None:
    kg = _load_graphs(cfg)
    model = _load_model(cfg, kg)
    a = cfg.answer
    try:
        t = QueryType(a.type)
    except ValueError:
        raise ConfigError("answer.type", f"unknown query type {a.type!r}") from None
    inst = QueryInstance(t, [kg.entity(x) for x in a.anchors], [kg.relation(r) for r in a.relations])
    inst.graph(kg.num_relations)
    model.check_supported([t])
    scores = model.score_all(kg, t, [inst])[0]
    order = np.argsort(scores, kind="stable")[: a.top_k]
    for rank, e in enumerate(order, start=1):
        print(f"{rank}\t{kg.entity_labels[e]}\t{scores[e]:.6g}", file=out)


def cmd_gradcheck(cfg: RunConfig, args, out) -> bool:
    ok = True
    prims = diagnostics.primitive_gradchecks()
    worst = max(prims.values())
    ok &= worst < diagnostics.PRIMITIVE_TOLERANCE
    print(f"primitives max_rel_err={worst:.3e} threshold={diagnostics.PRIMITIVE_TOLERANCE:g}", file=out)
    backends = ["box", "beta"] if args.backend == "both" else [args.backend]
    for b in backends:
        err = diagnostics.full_loss_gradcheck(b, seed=args.seed, max_coords=args.max_coords)
        ok &= err < diagnostics.FULL_LOSS_TOLERANCE
        print(f"full_loss[{b}] max_rel_err={err:.3e} threshold={diagnostics.FULL_LOSS_TOLERANCE:g}", file=out)
    return ok


def cmd_bench_context(cfg: RunConfig, args, out) -> None:
    b = cfg.bench
    times = diagnostics.bench_relation_context(b.samples, b.calls, b.dim, cfg.train.seed)
    first = times[b.samples[0]]
    for k, sec in times.items():
        print(f"K={k}\tmean_us={1e6 * sec:.2f}\tratio={sec / first:.2f}", file=out)


COMMANDS = {
    "build-kg": cmd_build_kg,
    "make-queries": cmd_make_queries,
    "train": cmd_train,
    "eval": cmd_eval,
    "answer": cmd_answer,
    "gradcheck": cmd_gradcheck,
    "bench-context": cmd_bench_context,
}


def run(argv: Optional[Sequence[str]] = None, out=None, log=None) -> int:
    out = out or sys.stdout
    log = log or sys.stderr
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve_config(args)
        print(f"config: {cfg.to_json()}", file=log)
        print(f"seed: {cfg.train.seed}", file=log)
        result = COMMANDS[args.command](cfg, args, out)
        if result is False:
            print("error: code=4 kind=GradientCheckFailed message=gradient error above threshold", file=log)
            return NumericError.exit_code
        return 0
    except CaqrError as exc:
        print(f"error: code={exc.exit_code} kind={type(exc).__name__} message={_one_line(exc)}", file=log)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        code = DataError.exit_code
        print(f"error: code={code} kind={type(exc).__name__} message={_one_line(exc)}", file=log)
        return code


def _one_line(exc) -> str:
    return " ".join(str(exc).split())


def main() -> None:
    sys.exit(run())
