"""Command-line entry point: build stores, run tasks, evaluate, sweep.

The subcommands mirror the experiment workflow: `ingest` executes the seen
split and fills a log store, `run` executes the unseen split in a chosen
mode against a read-only store, `eval` prints tables/transitions/t-tests
over saved reports, `sweep` repeats ingest+run across strategies or k
values, `store inspect` prints a store summary, and `selftest` re-verifies
the numeric contracts.

Configuration precedence is flags > config file (simple `key = value`
lines) > built-in defaults; only the generator endpoint may come from the
environment (LAG_ENDPOINT).
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .backends import (
    Backends,
    HashedBagOfWordsEmbedder,
    HttpGeneratorBackend,
    ReferenceModelGenerator,
    ScriptedGenerator,
)
from .codec import KINDS, SelectionStrategy
from .config import ModelConfig
from .datasets import load_tasks
from .errors import ConfigurationError, InputError, LagError
from .metrics import (
    EvalReport,
    SplitSpec,
    format_report_table,
    format_transitions,
    paired_ttest,
    split,
    transitions,
)
from .model import build_model
from .orchestrator import KV_MODES, MODES, STANDARD, RunConfig, default_strategy
from .runner import ingest_tasks, run_tasks
from .selftest import run_selftest
from .store import LogStore
from .synth import FactChainGenerator


def _read_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigurationError(f"{path}:{line_no}: expected key = value")
            key, value = line.split("=", 1)
            values[key.strip().replace("-", "_")] = value.strip()
    return values


def _build_generator(args, model):
    spec = args.generator
    if spec == "reference":
        return ReferenceModelGenerator(model, max_new=args.max_new)
    if spec == "synth-hop":
        return FactChainGenerator()
    if spec.startswith("scripted:"):
        return ScriptedGenerator.from_file(spec.split(":", 1)[1])
    if spec.startswith(("http://", "https://")):
        return HttpGeneratorBackend(spec, timeout=args.timeout, retries=args.retries)
    raise ConfigurationError(
        f"unknown generator {spec!r}; use reference, synth-hop, "
        "scripted:<path>, or an http(s) endpoint"
    )


def _backends(args) -> Backends:
    model = build_model(ModelConfig(weight_seed=args.model_seed))
    generator = _build_generator(args, model)
    if args.mode in KV_MODES and not generator.accepts_kv_prefix:
        raise ConfigurationError(f"generator {args.generator!r} cannot serve KV modes")
    embedder = HashedBagOfWordsEmbedder(dimension=args.embed_dim, seed=args.seed)
    return Backends(generator=generator, embedder=embedder, model=model)


def _pick_split(tasks, args):
    if args.split == "all":
        return tasks
    seen, unseen = split(tasks, SplitSpec(args.seed, args.seen_fraction))
    return seen if args.split == "seen" else unseen


def _strategy(args) -> SelectionStrategy:
    if args.strategy == "auto":
        return default_strategy(args.mode)
    encoding = "isolated" if args.mode == "kv_isolated" else args.encoding
    return SelectionStrategy(args.strategy, encoding)


def cmd_ingest(args) -> int:
    tasks = _pick_split(load_tasks(args.dataset), args)
    backends = _backends(args)
    store = ingest_tasks(
        tasks,
        _strategy(args),
        backends,
        args.store,
        max_steps=args.max_steps,
        gen_max_new=args.max_new,
        k_docs=args.k_docs,
    )
    m = store.manifest()
    print(f"store {args.store}: {m.count} entries, dim {m.embedding_dim}")
    print(f"fingerprint {m.fingerprint}")
    for kind, count in sorted(m.strategy_histogram.items()):
        print(f"  {kind}: {count}")
    return 0


def cmd_run(args) -> int:
    tasks = _pick_split(load_tasks(args.dataset), args)
    backends = _backends(args)
    store = LogStore(args.store, mode="r") if args.store else None
    cfg = RunConfig(
        mode=args.mode,
        max_steps=args.max_steps if args.max_steps is not None else 8,
        k_logs=args.k_logs,
        k_docs=args.k_docs,
        strategy=_strategy(args),
        gen_max_new=args.max_new,
    )
    report = run_tasks(
        tasks,
        cfg,
        backends,
        store,
        max_steps=args.max_steps,
        jobs=args.jobs,
        label=args.label or args.mode,
    )
    report.save(args.out)
    print(format_report_table([report]))
    print(f"report written to {args.out}")
    return 0


def cmd_eval(args) -> int:
    reports = [EvalReport.load(p) for p in args.reports]
    print(format_report_table(reports))
    if len(reports) == 2:
        counts = transitions(reports[0], reports[1], cap=args.cap)
        print(format_transitions(counts))
        a = [float(r.em) for r in reports[0].rows]
        ids = [r.id for r in reports[0].rows]
        by_id = {r.id: float(r.em) for r in reports[1].rows}
        b = [by_id[i] for i in ids]
        try:
            t, p = paired_ttest(a, b)
            print(f"paired t-test on EM: t = {t:.4f}, p = {p:.4g}")
        except LagError as err:
            print(f"paired t-test on EM: {err}")
    return 0


def cmd_sweep(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    reports = []
    if args.strategies:
        for kind in args.strategies.split(","):
            kind = kind.strip()
            run_args = argparse.Namespace(**vars(args))
            run_args.strategy = kind
            run_args.mode = (
                args.mode
                if kind not in ("all_rounds_text", "last_round_text")
                else ("lag_text_all" if kind == "all_rounds_text" else "lag_text_last")
            )
            run_args.store = str(out_dir / f"store_{kind}")
            run_args.split = "seen"
            cmd_ingest(run_args)
            size = (Path(run_args.store) / "entries.lag").stat().st_size
            run_args.split = "unseen"
            run_args.out = str(out_dir / f"report_{kind}.json")
            run_args.label = kind
            cmd_run(run_args)
            report = EvalReport.load(run_args.out)
            report.label = f"{kind} ({size} payload bytes)"
            reports.append(report)
    else:
        ks = [int(k) for k in args.k.split(",")]
        ingest_args = argparse.Namespace(**vars(args))
        ingest_args.store = str(out_dir / "store")
        ingest_args.split = "seen"
        cmd_ingest(ingest_args)
        for k in ks:
            run_args = argparse.Namespace(**vars(args))
            run_args.store = str(out_dir / "store")
            run_args.split = "unseen"
            run_args.k_logs = k
            run_args.mode = STANDARD if k == 0 else args.mode
            run_args.out = str(out_dir / f"report_k{k}.json")
            run_args.label = f"k={k}"
            cmd_run(run_args)
            reports.append(EvalReport.load(run_args.out))
    print()
    print(format_report_table(reports))
    return 0


def cmd_store_inspect(args) -> int:
    store = LogStore(args.store, mode="r")
    m = store.manifest()
    entries_size = (Path(args.store) / "entries.lag").stat().st_size
    print(f"store {args.store}")
    print(f"  version: {m.version}")
    print(f"  entries: {m.count}")
    print(f"  embedding dim: {m.embedding_dim}")
    print(f"  fingerprint: {m.fingerprint}")
    print(f"  entries.lag bytes: {entries_size}")
    total_payload = sum(e.payload_nbytes for e in store.scan())
    print(f"  payload bytes: {total_payload}")
    for kind, count in sorted(m.strategy_histogram.items()):
        print(f"  strategy {kind}: {count}")
    return 0


def cmd_selftest(args) -> int:
    return 0 if run_selftest() else 1


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key = value config file")
    parser.add_argument("--seed", type=int, default=0, help="split/embedder seed")
    parser.add_argument("--seen-fraction", type=float, default=0.7)
    parser.add_argument("--split", choices=("seen", "unseen", "all"))
    parser.add_argument("--mode", choices=MODES, default="lag_kv")
    parser.add_argument("--strategy", default="auto", choices=("auto",) + KINDS)
    parser.add_argument("--encoding", default="full_trace",
                        choices=("full_trace", "isolated"))
    parser.add_argument("--k-logs", type=int, default=3)
    parser.add_argument("--k-docs", type=int, default=2)
    parser.add_argument("--max-steps", type=int, default=None,
                        help="iteration cap; default 8 for multi-hop, 3 for reasoning")
    parser.add_argument("--max-new", type=int, default=64,
                        help="max tokens per reference-model generation")
    parser.add_argument("--generator",
                        default=os.environ.get("LAG_ENDPOINT", "reference"),
                        help="reference | synth-hop | scripted:<path> | http(s)://...")
    parser.add_argument("--timeout", type=float, default=30.0,
                        help="HTTP generator timeout in seconds")
    parser.add_argument("--retries", type=int, default=2,
                        help="HTTP generator retry count")
    parser.add_argument("--embed-dim", type=int, default=256)
    parser.add_argument("--model-seed", type=int, default=0)
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--label", default="")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lag", description="log-augmented generation toolkit"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="run the seen split and build a log store")
    p.add_argument("--dataset", required=True)
    p.add_argument("--store", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_ingest, default_split="seen")

    p = sub.add_parser("run", help="run tasks against a store and write a report")
    p.add_argument("--dataset", required=True)
    p.add_argument("--store", default=None)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_run, default_split="unseen")

    p = sub.add_parser("eval", help="summarize reports; two reports add "
                                    "transitions and a paired t-test")
    p.add_argument("reports", nargs="+")
    p.add_argument("--cap", type=int, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="sweep strategies or k over ingest+run")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--strategies", help="comma-separated strategy kinds")
    group.add_argument("--k", help="comma-separated k values")
    _add_common(p)
    p.set_defaults(func=cmd_sweep, default_split="unseen")

    p = sub.add_parser("store", help="store utilities")
    store_sub = p.add_subparsers(dest="store_command", required=True)
    pi = store_sub.add_parser("inspect", help="print a store summary")
    pi.add_argument("--store", required=True)
    pi.set_defaults(func=cmd_store_inspect)

    p = sub.add_parser("selftest", help="run the built-in verification suites")
    p.set_defaults(func=cmd_selftest)

    return parser


def _apply_config_file(parser, argv) -> argparse.Namespace:
    # first parse locates --config; file values become defaults, flags win
    args = parser.parse_args(argv)
    config_path = getattr(args, "config", None)
    if config_path:
        values = _read_config_file(config_path)
        known = {a.dest for a in parser._actions}
        sub_actions = [
            a for a in parser._actions if isinstance(a, argparse._SubParsersAction)
        ]
        for sub in sub_actions:
            for sp in sub.choices.values():
                for a in sp._actions:
                    known.add(a.dest)
                sp.set_defaults(
                    **{k: v for k, v in values.items() if k in {a.dest for a in sp._actions}}
                )
        unknown = set(values) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        args = parser.parse_args(argv)
    return args


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config_file(parser, argv)
        if getattr(args, "split", None) is None and hasattr(args, "default_split"):
            args.split = args.default_split
        return args.func(args)
    except LagError as err:
        print(f"error: {err}", file=sys.stderr)
        return err.exit_code
    except FileNotFoundError as err:
        print(f"error: {err}", file=sys.stderr)
        return InputError.exit_code


if __name__ == "__main__":
    sys.exit(main())
