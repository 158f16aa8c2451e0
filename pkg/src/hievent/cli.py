"""Command-line surface: gen-data, train, eval {ppl,inc,masked,sim},
export-embeddings.

Exit codes: 0 success, 2 input/configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import evaluation
from .checkpoint import CheckpointError, check_vocab, load_checkpoint, read_manifest
from .corpus import (
    EventSequence,
    load_corpus,
    load_vocab,
    make_inc_instance,
    build_masked_instances,
    MaskedInstance,
    save_corpus,
    save_vocab,
)
from .model import HierarchicalEventModel
from .ontology import GraphLoadError, load_frame_graph, save_frame_graph
from .runconfig import (
    ConfigError,
    parse_override_args,
    resolve_config,
    split_configs,
    write_resolved,
)
from .synthetic import (
    SyntheticConfig,
    generate_synthetic_corpus,
    load_hard_similarity,
    load_transitive,
    make_hard_similarity_instances,
    make_transitive_instances,
    save_hard_similarity,
    save_transitive,
)
from .training import NumericalError, train

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERICAL = 3


class InputError(ValueError):
    pass


def _require(path: str | None, what: str) -> Path:
    if path is None:
        raise InputError(f"missing required path: {what}")
    p = Path(path)
    if not p.exists():
        raise InputError(f"{what} not found: {p}")
    return p


def _write_report(out_dir: Path, name: str, fields: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / f"report_{name}.txt", "w", encoding="utf-8") as fh:
        for key, value in fields.items():
            fh.write(f"{key}={value}\n")
    with open(out_dir / f"summary_{name}.json", "w", encoding="utf-8") as fh:
        json.dump(fields, fh, indent=1, sort_keys=True)
    for key, value in fields.items():
        print(f"{key}={value}")


# -- gen-data ----------------------------------------------------------------


def cmd_gen_data(args: argparse.Namespace) -> int:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as e:
        print(f"error: output directory not writable: {e}", file=sys.stderr)
        return EXIT_INPUT
    cfg = SyntheticConfig(
        n_scenarios=args.scenarios,
        frames_per_scenario=args.frames_per_scenario,
        n_docs=args.docs,
        events_per_doc=args.events,
        frame_sampling=args.frame_sampling,
    )
    rng = np.random.default_rng(args.seed)
    syn = generate_synthetic_corpus(cfg, rng)
    n_val = max(1, int(args.docs * args.val_fraction))
    n_test = max(1, int(args.docs * args.test_fraction))
    n_train = args.docs - n_val - n_test
    if n_train < 1:
        raise InputError("split fractions leave no training documents")
    splits = {
        "train": syn.corpus[:n_train],
        "val": syn.corpus[n_train : n_train + n_val],
        "test": syn.corpus[n_train + n_val :],
    }
    for name, docs in splits.items():
        save_corpus(docs, out / f"{name}.txt", syn.graph, out / f"{name}.frames")
    save_frame_graph(syn.graph, out / "frame_graph.tsv")
    hard = make_hard_similarity_instances(syn, args.sim_instances, rng)
    transitive = make_transitive_instances(syn, args.sim_instances, rng)
    save_hard_similarity(hard, out / "hard_similarity.tsv")
    save_transitive(transitive, out / "transitive.tsv")
    n_scenarios = sum(syn.graph.is_scenario(f) for f in range(3, len(syn.graph.names)))
    print(f"docs={args.docs}")
    print(f"train_docs={len(splits['train'])}")
    print(f"val_docs={len(splits['val'])}")
    print(f"test_docs={len(splits['test'])}")
    print(f"frames={syn.graph.frame_count}")
    print(f"scenarios={n_scenarios}")
    print(f"edges={len(syn.graph.edges)}")
    print(f"lexical_vocab={syn.vocab.lex_size}")
    return EXIT_OK


# -- train ---------------------------------------------------------------


def cmd_train(args: argparse.Namespace, overrides: dict[str, str]) -> int:
    if args.no_compression:
        overrides["compression_enabled"] = "false"
    resolved = resolve_config(args.config, overrides)
    mcfg, tcfg = split_configs(resolved)
    graph = load_frame_graph(_require(resolved["frame_graph"], "frame_graph"))
    max_events = resolved["max_events"]
    train_seqs = load_corpus(
        _require(resolved["train_corpus"], "train_corpus"),
        graph,
        _require(resolved["train_frames"], "train_frames")
        if resolved["train_frames"]
        else None,
        max_events=max_events,
    )
    val_seqs = load_corpus(
        _require(resolved["val_corpus"], "val_corpus"),
        graph,
        _require(resolved["val_frames"], "val_frames") if resolved["val_frames"] else None,
        max_events=max_events,
    )
    from .corpus import build_vocab

    vocab = build_vocab(train_seqs, graph, resolved["lexical_cap"], resolved["frame_cap"])
    run_dir = Path(args.out)
    run_dir.mkdir(parents=True, exist_ok=True)
    write_resolved(resolved, run_dir / "resolved_config.txt")
    save_vocab(vocab, run_dir / "vocab.json")
    model = HierarchicalEventModel(mcfg, vocab.lex_size, vocab.frame_size, seed=tcfg.seed)

    debug_hook = None
    dump_fh = None
    if args.debug_dump:
        dump_fh = open(args.debug_dump, "w", encoding="utf-8")

        def debug_hook(state, batch, out):
            if out.comp_injections is None:
                return
            record = {
                "step": state.global_step,
                "abstract": out.abstract_frames.tolist(),
                "injections": out.comp_injections.tolist(),
                "base_hard": out.base_chain.hard.tolist(),
            }
            dump_fh.write(json.dumps(record) + "\n")

    try:
        result = train(
            model, train_seqs, val_seqs, graph, vocab, mcfg, tcfg,
            run_dir=run_dir, quiet=args.quiet, debug_hook=debug_hook,
        )
    finally:
        if dump_fh is not None:
            dump_fh.close()
    print(f"run_dir={run_dir}")
    print(f"epochs={result.state.epoch}")
    print(f"best_val_ppl={result.state.best_val_ppl:.6f}")
    print(f"checkpoint={result.best_checkpoint}")
    return EXIT_OK


# -- eval ----------------------------------------------------------------


def _load_model_for_eval(args) -> tuple:
    ckpt_path = _require(args.checkpoint, "checkpoint")
    manifest = read_manifest(ckpt_path)
    vocab_path = args.vocab or str(ckpt_path.parent / "vocab.json")
    vocab = load_vocab(_require(vocab_path, "vocab"))
    check_vocab(manifest, vocab)
    model, manifest = load_checkpoint(ckpt_path)
    graph = load_frame_graph(_require(args.graph, "frame-graph"))
    return model, vocab, graph, manifest


def _load_eval_corpus(args, graph) -> list[EventSequence]:
    corpus_path = _require(args.corpus, "corpus")
    frames_path = Path(args.frames) if args.frames else None
    if frames_path is not None and not frames_path.exists():
        raise InputError(f"frames file not found: {frames_path}")
    return load_corpus(corpus_path, graph, frames_path, max_events=args.max_events)


def cmd_eval_ppl(args) -> int:
    model, vocab, graph, _ = _load_model_for_eval(args)
    data = _load_eval_corpus(args, graph)
    report = evaluation.perplexity(model, data, vocab, graph, batch_size=args.batch_size)
    _write_report(
        Path(args.out or Path(args.checkpoint).parent),
        "ppl",
        {
            "ppl_base": f"{report.base:.6f}",
            "ppl_compression": "-" if report.compression is None
            else f"{report.compression:.6f}",
            "ppl_combined": f"{report.combined:.6f}",
            "tokens": report.token_count,
            "documents": len(data),
        },
    )
    return EXIT_OK


def cmd_eval_inc(args) -> int:
    model, vocab, graph, _ = _load_model_for_eval(args)
    data = _load_eval_corpus(args, graph)
    rng = np.random.default_rng(args.seed)
    n = args.instances or len(data)
    instances = [make_inc_instance(data, rng) for _ in range(n)]
    layer = args.layer
    if layer != "base" and not model.has_compression:
        layer = "base"
    accuracy, count = evaluation.inverse_narrative_cloze(
        model, instances, vocab, graph, layer=layer, batch_size=args.batch_size
    )
    _write_report(
        Path(args.out or Path(args.checkpoint).parent),
        "inc",
        {
            "layer": layer,
            "accuracy_pct": f"{100.0 * accuracy:.2f}",
            "instances": count,
        },
    )
    return EXIT_OK


def cmd_eval_masked(args) -> int:
    model, vocab, graph, _ = _load_model_for_eval(args)
    data = _load_eval_corpus(args, graph)
    if args.control:
        instances = [MaskedInstance(seq, seq, None) for seq in data]
        skipped = 0
    else:
        instances, skipped = build_masked_instances(data, graph)
    if not instances:
        raise InputError("no masked instances could be constructed")
    report = evaluation.masked_event_perplexity(
        model, instances, vocab, graph, batch_size=args.batch_size
    )
    _write_report(
        Path(args.out or Path(args.checkpoint).parent),
        "masked",
        {
            "ppl_base": f"{report.base:.6f}",
            "ppl_compression": "-" if report.compression is None
            else f"{report.compression:.6f}",
            "ppl_combined": f"{report.combined:.6f}",
            "tokens": report.token_count,
            "instances": len(instances),
            "skipped": skipped,
            "control": args.control,
        },
    )
    return EXIT_OK


def cmd_eval_sim(args) -> int:
    model, vocab, graph, _ = _load_model_for_eval(args)
    fields: dict = {}
    all_events = []
    if args.hard:
        hard = load_hard_similarity(_require(args.hard, "hard-similarity file"))
        fields["hard_accuracy_pct"] = (
            f"{100.0 * evaluation.hard_similarity_accuracy(model, hard, vocab, graph):.2f}"
        )
        fields["hard_instances"] = len(hard)
        for inst in hard:
            all_events.extend([*inst.pair_a, *inst.pair_b])
    if args.transitive:
        trans = load_transitive(_require(args.transitive, "transitive file"))
        fields["transitive_spearman"] = (
            f"{evaluation.transitive_correlation(model, trans, vocab, graph):.4f}"
        )
        fields["transitive_instances"] = len(trans)
        for inst in trans:
            all_events.extend([inst.event_1, inst.event_2])
    if not fields:
        raise InputError("eval sim needs --hard and/or --transitive")
    if args.export_embeddings:
        unique = list(dict.fromkeys(all_events))
        _export_embeddings(model, unique, vocab, graph, Path(args.export_embeddings))
        fields["embeddings_file"] = args.export_embeddings
        fields["embeddings"] = len(unique)
    _write_report(Path(args.out or Path(args.checkpoint).parent), "sim", fields)
    return EXIT_OK


def _export_embeddings(model, events, vocab, graph, path: Path) -> None:
    matrix = evaluation.representation_matrix(model, events, vocab, graph)
    with open(path, "w", encoding="utf-8") as fh:
        for ev, vec in zip(events, matrix):
            mod = ev.modifier if ev.modifier is not None else "-"
            vals = " ".join(f"{x:.6f}" for x in vec)
            fh.write(f"{ev.predicate}\t{ev.subject}\t{ev.object}\t{mod}\t{vals}\n")


def cmd_export_embeddings(args) -> int:
    model, vocab, graph, _ = _load_model_for_eval(args)
    data = _load_eval_corpus(args, graph)
    events = list(dict.fromkeys(ev for seq in data for ev in seq.events))
    _export_embeddings(model, events, vocab, graph, Path(args.out))
    print(f"events={len(events)}")
    print(f"dimension={512 if not events else len(evaluation.event_representation(model, events[0], vocab, graph))}")
    print(f"file={args.out}")
    return EXIT_OK


# -- parser ----------------------------------------------------------------


def _add_eval_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--vocab", default=None, help="defaults to vocab.json next to the checkpoint")
    p.add_argument("--out", default=None, help="report directory (default: checkpoint dir)")
    p.add_argument("--batch-size", type=int, default=64)


def _add_corpus_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--corpus", required=True)
    p.add_argument("--frames", default=None)
    p.add_argument("--max-events", type=int, default=5)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hievent")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic corpus + ontology")
    g.add_argument("--out", required=True)
    g.add_argument("--docs", type=int, default=2000)
    g.add_argument("--scenarios", type=int, default=4)
    g.add_argument("--frames-per-scenario", type=int, default=5)
    g.add_argument("--events", type=int, default=5)
    g.add_argument("--seed", type=int, default=7)
    g.add_argument("--frame-sampling", choices=["categorical", "permutation"],
                   default="categorical")
    g.add_argument("--sim-instances", type=int, default=500)
    g.add_argument("--val-fraction", type=float, default=0.1)
    g.add_argument("--test-fraction", type=float, default=0.1)

    t = sub.add_parser("train", help="train a model; extra --key value flags override config")
    t.add_argument("--out", required=True, help="run directory")
    t.add_argument("--config", default=None, help="key=value config file")
    t.add_argument("--no-compression", action="store_true")
    t.add_argument("--debug-dump", default=None, help="JSONL guidance dump")
    t.add_argument("--quiet", action="store_true")

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    esub = e.add_subparsers(dest="eval_command", required=True)

    ep = esub.add_parser("ppl")
    _add_eval_common(ep)
    _add_corpus_args(ep)

    ei = esub.add_parser("inc")
    _add_eval_common(ei)
    _add_corpus_args(ei)
    ei.add_argument("--layer", choices=["base", "compression", "combined"], default="combined")
    ei.add_argument("--instances", type=int, default=None)
    ei.add_argument("--seed", type=int, default=0)

    em = esub.add_parser("masked")
    _add_eval_common(em)
    _add_corpus_args(em)
    em.add_argument("--control", action="store_true", help="score without removing events")

    es = esub.add_parser("sim")
    _add_eval_common(es)
    es.add_argument("--hard", default=None)
    es.add_argument("--transitive", default=None)
    es.add_argument("--export-embeddings", default=None)

    x = sub.add_parser("export-embeddings", help="write event representation vectors")
    _add_eval_common(x)
    _add_corpus_args(x)

    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        if argv and argv[0] == "train":
            args, unknown = parser.parse_known_args(argv)
            overrides = parse_override_args(unknown)
            return cmd_train(args, overrides)
        args = parser.parse_args(argv)
        if args.command == "gen-data":
            return cmd_gen_data(args)
        if args.command == "eval":
            return {
                "ppl": cmd_eval_ppl,
                "inc": cmd_eval_inc,
                "masked": cmd_eval_masked,
                "sim": cmd_eval_sim,
            }[args.eval_command](args)
        if args.command == "export-embeddings":
            return cmd_export_embeddings(args)
        parser.error(f"unknown command {args.command!r}")
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (InputError, ConfigError, GraphLoadError, CheckpointError, FileNotFoundError,
            ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
