"""Command-line entry point: ``python -m kgadapt COMMAND [flags]``.

Settings come from a key-value config file (``--config``, else
``$KGADAPT_CONFIG``), then ``--set key=value`` pairs, then the dedicated
flags of each command. Exit status: 0 success, 2 usage or parse error,
3 missing or mismatched dependency, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .autodiff import NumericError, no_grad
from .config import ConfigError, RunConfig, coerce, load_config
from .kg import (
    KnowledgeGraph,
    ParseError,
    load_triplet_file,
    read_tasks,
    task_from_record,
    write_tasks,
    write_triplets,
)
from .pipeline import (
    DependencyError,
    benchmark_config,
    build_scorer,
    dumps_record,
    evaluate_tasks,
    load_model,
    metrics_record,
    pretrain_for,
    restore_scorer,
    save_model,
    train_scorer,
)
from .pretrain import TrainingError, load_table, save_table
from .synth import composition_benchmark

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DEPENDENCY = 3
EXIT_NUMERIC = 4

log = logging.getLogger("kgadapt")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


# command flag -> config key
FLAG_KEYS = {"kg": "kg", "tables": "tables", "tasks": "tasks", "checkpoint": "checkpoint", "out": "out",
             "dim": "pretrained_dim", "epochs": "pretrain_epochs", "steps": "steps", "entities": "entities",
             "seed": "seed"}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key-value config file (default: $KGADAPT_CONFIG)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    common.add_argument("--seed", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="kgadapt", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", parents=[common], help="index a triplet file and print a summary")
    p.add_argument("--kg", required=True)

    p = sub.add_parser("pretrain", parents=[common], help="fit TransE embedding tables")
    p.add_argument("--kg", required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("train", parents=[common], help="meta-train the model")
    p.add_argument("--kg", required=True)
    p.add_argument("--tables", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--trace", help="loss trace JSONL (default: OUT.loss.jsonl)")
    p.add_argument("--steps", type=int)

    p = sub.add_parser("eval", parents=[common], help="MRR and Hits@k on held-out tasks")
    p.add_argument("--kg", required=True)
    p.add_argument("--tasks", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--tables", help="default: the tables recorded in the checkpoint")
    p.add_argument("--out", help="metrics JSON (default: CHECKPOINT.metrics.json)")

    p = sub.add_parser("score", parents=[common], help="score the candidates of one task")
    p.add_argument("--task", required=True, help="JSON task record (first line of a JSONL file)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--kg", help="default: the graph recorded in the checkpoint")
    p.add_argument("--tables", help="default: the tables recorded in the checkpoint")

    p = sub.add_parser("synth", parents=[common], help="write the synthetic composition benchmark")
    p.add_argument("--entities", type=int, required=True)
    p.add_argument("--out", required=True, help="output directory")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Config file, then ``--set`` pairs, then dedicated flags."""
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, raw = item.split("=", 1)
        overrides[key.strip()] = coerce(key.strip(), raw)
    for flag, key in FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    return load_config(args.config, overrides)


def _need_file(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise DependencyError(f"{what} not found: {p}")
    return p


def _load_kg(path: str) -> KnowledgeGraph:
    return load_triplet_file(_need_file(path, "knowledge graph"))


def _load_tables(path: str, kg: KnowledgeGraph):
    table = load_table(_need_file(path, "embedding tables"))
    try:
        return table.aligned(kg)
    except (KeyError, ValueError) as exc:
        raise DependencyError(f"embedding tables do not cover the graph: {exc}") from None


def _log_config(cfg: RunConfig, command: str) -> None:
    log.info("command %s seed %d", command, cfg.seed)
    log.info("resolved config:\n%s", cfg.to_text().rstrip())


def cmd_ingest(cfg: RunConfig, args) -> None:
    kg = _load_kg(cfg.kg)
    print(json.dumps({**kg.summary(), "config": cfg.to_text()}, sort_keys=True))


def cmd_pretrain(cfg: RunConfig, args) -> None:
    kg = _load_kg(cfg.kg)
    table = pretrain_for(kg, cfg)
    save_table(table, cfg.out, meta={"config": cfg.to_text()})
    log.info("wrote %d x %d entity table to %s", kg.num_entities, cfg.pretrained_dim, cfg.out)


def cmd_train(cfg: RunConfig, args) -> None:
    kg = _load_kg(cfg.kg)
    table = _load_tables(cfg.tables, kg)
    if table.dim != cfg.pretrained_dim:
        log.info("pretrained_dim set to %d from the tables", table.dim)
        cfg = cfg.replace(pretrained_dim=table.dim)
    cfg = cfg.replace(kg=str(Path(cfg.kg).resolve()), tables=str(Path(cfg.tables).resolve()),
                      checkpoint=str(Path(cfg.out).resolve()))
    scorer = build_scorer(kg, table, cfg)
    trace = Path(args.trace or f"{cfg.out}.loss.jsonl")
    ckpt_dir = str(Path(cfg.out).parent) if cfg.checkpoint_every else None
    with open(trace, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"config": cfg.to_text()}) + "\n")
        result = train_scorer(scorer, cfg, trace_fh=fh, checkpoint_dir=ckpt_dir)
    save_model(cfg.out, scorer, cfg, result.optimizer)
    last = result.losses[-1] if result.losses else float("nan")
    log.info("trained %d steps, final loss %.4f; checkpoint %s, trace %s", len(result.losses), last, cfg.out, trace)


def _restore(cfg: RunConfig, args):
    """Scorer from a checkpoint; flag paths win over the recorded ones."""
    state, saved, meta = load_model(cfg.checkpoint)
    kg_path = args.kg or saved.kg
    tables_path = getattr(args, "tables", None) or saved.tables
    if not kg_path or not tables_path:
        raise DependencyError("checkpoint does not record the graph and tables; pass --kg and --tables")
    kg = _load_kg(kg_path)
    table = _load_tables(tables_path, kg)
    run = saved.replace(kg=kg_path, tables=tables_path, checkpoint=cfg.checkpoint, workers=cfg.workers,
                        tasks=cfg.tasks, out=cfg.out)
    return kg, restore_scorer(kg, table, state, run, meta), run


def cmd_eval(cfg: RunConfig, args) -> None:
    kg, scorer, run = _restore(cfg, args)
    tasks = read_tasks(kg, _need_file(cfg.tasks, "task file"))
    report = evaluate_tasks(scorer, tasks, cfg.workers)
    line = dumps_record(metrics_record(report, run))
    out = Path(cfg.out or f"{cfg.checkpoint}.metrics.json")
    out.write_text(line + "\n", encoding="utf-8")
    print(line)
    log.info("MRR %.4f Hits@1 %.4f Hits@5 %.4f Hits@10 %.4f over %d tasks; record %s",
             report.mrr, report.hits1, report.hits5, report.hits10, len(report.ranks), out)


def cmd_score(cfg: RunConfig, args) -> None:
    path = _need_file(args.task, "task file")
    first = next((ln for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()), None)
    if first is None:
        raise ConfigError(f"{path}: empty task file")
    kg, scorer, _ = _restore(cfg, args)
    try:
        task = task_from_record(kg, json.loads(first))
    except (ValueError, KeyError) as exc:
        raise ParseError(1, str(exc)) from None
    with no_grad():
        scores = scorer.score_task(task)
    order = sorted(range(len(task.candidates)), key=lambda i: -scores[i])
    for i in order:
        print(f"{kg.entities[task.candidates[i]]}\t{scores[i]:.10f}")


def cmd_synth(cfg: RunConfig, args) -> None:
    """Graph, task files, and ``run.cfg`` holding the benchmark settings."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    res = composition_benchmark(cfg.seed, cfg.entities, cfg.num_test_tasks)
    with open(out / "kg.txt", "w", encoding="utf-8") as fh:
        write_triplets(res.kg, fh)
    write_tasks(res.kg, res.train_tasks, out / "train_tasks.jsonl")
    write_tasks(res.kg, res.test_tasks, out / "test_tasks.jsonl")
    run = benchmark_config(
        seed=cfg.seed, entities=cfg.entities, num_test_tasks=cfg.num_test_tasks,
        kg=str((out / "kg.txt").resolve()), tasks=str((out / "test_tasks.jsonl").resolve()),
        training_relations=res.train_relations,
    )
    (out / "run.cfg").write_text(run.to_text(), encoding="utf-8")
    summary = {**res.kg.summary(), "train_tasks": len(res.train_tasks), "test_tasks": len(res.test_tasks)}
    log.info("wrote %s to %s", json.dumps(summary, sort_keys=True), out)


COMMANDS = {
    "ingest": cmd_ingest,
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "eval": cmd_eval,
    "score": cmd_score,
    "synth": cmd_synth,
}


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as exc:
        print(f"kgadapt: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args)
        _log_config(cfg, args.command)
        COMMANDS[args.command](cfg, args)
    except (ConfigError, ParseError) as exc:
        log.error("usage error: %s", exc)
        return EXIT_USAGE
    except (DependencyError, FileNotFoundError) as exc:
        log.error("dependency error: %s", exc)
        return EXIT_DEPENDENCY
    except (NumericError, TrainingError, FloatingPointError) as exc:
        log.error("numeric error: %s", exc)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
