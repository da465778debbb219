"""``logpurge`` command line.

Exit codes: 0 on success, 2 for usage or configuration errors, 1 when a
pipeline phase fails (the phase is named on stderr).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .config import RunConfig
from .core import Template, read_sequences, record_to_json, write_sequences
from .detector import NgramDetector
from .embedding import SequenceEmbedder
from .exceptions import InvalidConfig, LogPurgeError
from .metrics import prf1
from .pipeline import load_dataset, report_json, run_pipeline, validate_report, write_outputs
from .synth import generate, split

log = logging.getLogger("logpurge")


class UsageError(Exception):
    pass


# flag dest -> config key
_OVERRIDES = {
    "seed": "run.seed",
    "workers": "run.workers",
    "cache_dir": "paths.cache_dir",
    "out_dir": "paths.out_dir",
    "layout": "parse.layout",
    "depth": "parse.depth",
    "sim_threshold": "parse.sim_threshold",
    "window_len": "window.window_len",
    "stride": "window.stride",
    "dim": "embed.dim",
    "strategy": "run.strategy",
    "alpha": "pluto.alpha",
    "backend": "evaluator.backend",
    "endpoint": "evaluator.endpoint",
    "with_labels": "run.with_labels",
    "stage2": "run.stage2",
    "test": "paths.test",
    "preset": "synth.preset",
    "n_sequences": "synth.n_sequences",
    "top_k": "detector.top_k",
}


def _common(p):
    p.add_argument("--config", help="JSON config file (flat namespaced keys)")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int, help="bound on parallel requests")
    p.add_argument("--cache-dir", help="directory for embedding and evaluator caches")
    p.add_argument("--out-dir", help="write outputs, effective config and report here")
    p.add_argument("-v", "--verbose", action="store_true")


def _ingest(p):
    p.add_argument("--layout", choices=["plain", "bgl"])
    p.add_argument("--depth", type=int)
    p.add_argument("--sim-threshold", type=float)
    p.add_argument("--window-len", type=int)
    p.add_argument("--stride", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="logpurge", description="Purify contaminated log training sets.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", help="mine templates from raw log lines")
    p.add_argument("input", nargs="?", default="-")
    p.add_argument("-o", "--output", default="-")
    p.add_argument("--templates", help="also write the template table (JSON) here")
    _common(p)
    _ingest(p)

    p = sub.add_parser("window", help="group records into sliding-window sequences")
    p.add_argument("input", nargs="?", default="-")
    p.add_argument("-o", "--output", default="-")
    _common(p)
    _ingest(p)

    p = sub.add_parser("embed", help="embed a sequence file into an .npy matrix")
    p.add_argument("input", nargs="?", default="-")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--dim", type=int)
    _common(p)

    p = sub.add_parser("synth", help="generate a labelled synthetic corpus")
    p.add_argument("-o", "--output", default="-")
    p.add_argument("--preset", choices=["default", "residual_heavy", "industry_stress"])
    p.add_argument("--n-sequences", type=int)
    p.add_argument("--test-fraction", type=float, default=0.0,
                   help="hold out this share as a test split (needs --test-output)")
    p.add_argument("--test-output")
    _common(p)

    for name in ("purge", "run"):
        p = sub.add_parser(name, help="purify a dataset" if name == "purge" else "alias of purge")
        p.add_argument("input", nargs="?", default="-")
        p.add_argument("--strategy", choices=["logpurge", "pluto"])
        p.add_argument("--alpha", type=float, help="global anomaly ratio for the pluto strategy")
        p.add_argument("--backend", choices=["chat", "deterministic"])
        p.add_argument("--endpoint", help="chat-completion endpoint for --backend chat")
        p.add_argument("--with-labels", action="store_true", default=None)
        p.add_argument("--no-stage2", dest="stage2", action="store_false", default=None)
        p.add_argument("--test", help="labelled sequence file for downstream detection metrics")
        p.add_argument("--dump-layouts", action="store_true")
        _common(p)
        _ingest(p)

    p = sub.add_parser("detect", help="train and/or apply the n-gram detector")
    p.add_argument("input", nargs="?", help="sequences to score")
    p.add_argument("--model", required=True, help="model file (written by --train, read otherwise)")
    p.add_argument("--train", help="sequence file to train on")
    p.add_argument("--top-k", type=int)
    p.add_argument("-o", "--output", default="-")
    _common(p)

    p = sub.add_parser("eval", help="metrics over prediction or purified files")
    p.add_argument("predictions", nargs="?", help="JSONL rows with pred and label")
    p.add_argument("--purified", help="purified sequence file (labelled)")
    p.add_argument("--dataset", help="original labelled sequence file")
    _common(p)

    p = sub.add_parser("report", help="validate and summarise a report.json")
    p.add_argument("report")
    _common(p)
    return parser


def _config(args) -> RunConfig:
    overrides = {}
    for dest, key in _OVERRIDES.items():
        value = getattr(args, dest, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "config", None):
        if not Path(args.config).is_file():
            raise UsageError(f"config file not found: {args.config}")
        return RunConfig.load(args.config, overrides)
    return RunConfig(overrides)


@contextmanager
def _open_in(path):
    if path in (None, "-"):
        yield sys.stdin
    else:
        if not Path(path).is_file():
            raise UsageError(f"input not found: {path}")
        with open(path) as fh:
            yield fh


@contextmanager
def _open_out(path):
    if path in (None, "-"):
        yield sys.stdout
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            yield fh


def _read_seqs(path):
    with _open_in(path) as fh:
        return read_sequences(fh)


def _snapshot(args, cfg, summary):
    """Effective config plus a small run record, when --out-dir is given."""
    if not getattr(args, "out_dir", None):
        return
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "effective_config.json").write_text(cfg.to_json())
    (out / f"{args.command}.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


# -- subcommands ---------------------------------------------------------------


def cmd_parse(args, cfg):
    from .parsing import DrainParser, FieldLayout, parse_line, parse_records

    layout = FieldLayout.bgl() if cfg["parse.layout"] == "bgl" else FieldLayout()
    with _open_in(args.input) as fh:
        records = [parse_line(line, layout) for line in fh if line.strip()]
    parser = DrainParser(cfg["parse.depth"], cfg["parse.sim_threshold"], cfg["parse.max_children"])
    records = parse_records(records, parser)
    with _open_out(args.output) as fh:
        for rec in records:
            fh.write(json.dumps(record_to_json(rec)) + "\n")
    table = [{"id": t.id, "text": t.text, "support": t.support_count} for t in parser.templates_]
    if args.templates:
        Path(args.templates).write_text(json.dumps({"templates": table}, indent=2) + "\n")
    log.info("parsed %d records into %d templates", len(records), len(table))
    _snapshot(args, cfg, {"records": len(records), "templates": len(table)})


def cmd_window(args, cfg):
    with _open_in(args.input) as fh:
        sequences, texts = load_dataset(fh, cfg)
    templates = [Template(i, tuple(t.split()), 0) for i, t in enumerate(texts)]
    with _open_out(args.output) as fh:
        write_sequences(sequences, fh, templates)
    log.info("%d sequences", len(sequences))
    _snapshot(args, cfg, {"sequences": len(sequences), "templates": len(texts)})


def cmd_embed(args, cfg):
    sequences, templates = _read_seqs(args.input)
    texts = [t.text for t in sorted(templates, key=lambda t: t.id)]
    emb = SequenceEmbedder(cfg["embed.kind"], cfg["embed.dim"], cfg["run.seed"], cfg["embed.endpoint"],
                           cfg.cache_file("embeddings.jsonl"), cfg["embed.max_inflight"],
                           cfg["embed.batch_size"], texts)
    X = emb.fit(sequences).transform(sequences)
    np.save(args.output, X.rows)
    log.info("embedded %d sequences with %s", len(sequences), X.provider_tag)
    _snapshot(args, cfg, {"sequences": len(sequences), "dim": X.dim, "provider": X.provider_tag})


def cmd_synth(args, cfg):
    corpus = generate(cfg.synth_config())
    test = None
    if args.test_fraction:
        if not args.test_output:
            raise UsageError("--test-fraction needs --test-output")
        corpus, test = split(corpus, args.test_fraction, cfg["run.seed"])
    with _open_out(args.output) as fh:
        write_sequences(corpus.sequences, fh, corpus.templates)
    if test is not None:
        with _open_out(args.test_output) as fh:
            write_sequences(test.sequences, fh, test.templates)
    _snapshot(args, cfg, {"sequences": len(corpus.sequences), "test": len(test.sequences) if test else 0})


def cmd_purge(args, cfg):
    with _open_in(args.input) as fh:
        sequences, texts = load_dataset(fh, cfg)
    test = None
    if cfg["paths.test"]:
        test, _ = _read_seqs(cfg["paths.test"])
    result = run_pipeline(sequences, texts, cfg, test_sequences=test)
    out = write_outputs(result, cfg, cfg["paths.out_dir"], texts, dump_layouts=args.dump_layouts)
    for name, seconds in sorted(result.timings.items()):
        log.info("phase %s: %.2fs", name, seconds)
    r = result.report
    line = f"retained {r['retained']} of {r['n_sequences']}, removed {r['removed']}"
    if r["metrics"]:
        line += f"; SP {r['metrics']['subset_purity']:.4f} CRR {r['metrics']['clean_retention']:.4f}"
    print(f"{line} -> {out}", file=sys.stderr)


def cmd_detect(args, cfg):
    if args.train:
        train, _ = _read_seqs(args.train)
        model = NgramDetector(cfg["detector.n"], cfg["detector.top_k"]).fit(train)
        model.save(args.model)
    else:
        if not Path(args.model).is_file():
            raise UsageError(f"model not found: {args.model}")
        model = NgramDetector.load(args.model)
    summary = {"model": args.model}
    if args.input:
        seqs, _ = _read_seqs(args.input)
        pred = model.predict(seqs, top_k=args.top_k)
        with _open_out(args.output) as fh:
            for s, p in zip(seqs, pred):
                row = {"seq_id": s.seq_id, "pred": int(p)}
                if s.ground_truth is not None:
                    row["label"] = s.ground_truth
                fh.write(json.dumps(row) + "\n")
        summary["scored"] = len(seqs)
    _snapshot(args, cfg, summary)


def cmd_eval(args, cfg):
    if args.predictions:
        with _open_in(args.predictions) as fh:
            rows = [json.loads(line) for line in fh if line.strip()]
        if any("label" not in r for r in rows):
            raise UsageError("every prediction row needs a label")
        out = prf1([r["pred"] for r in rows], [r["label"] == "anomalous" for r in rows])
    elif args.purified and args.dataset:
        kept, _ = _read_seqs(args.purified)
        full, _ = _read_seqs(args.dataset)
        if any(s.ground_truth is None for s in kept + full):
            raise UsageError("purified and dataset files must be labelled")
        kept_normal = sum(s.ground_truth == "normal" for s in kept)
        all_normal = sum(s.ground_truth == "normal" for s in full)
        out = {"subset_purity": kept_normal / len(kept) if kept else None,
               "clean_retention": kept_normal / all_normal if all_normal else None}
    else:
        raise UsageError("give a predictions file, or --purified with --dataset")
    print(json.dumps(out, indent=2, sort_keys=True))
    _snapshot(args, cfg, out)


def cmd_report(args, cfg):
    import jsonschema

    if not Path(args.report).is_file():
        raise UsageError(f"report not found: {args.report}")
    report = json.loads(Path(args.report).read_text())
    try:
        validate_report(report)
    except jsonschema.ValidationError as exc:
        print(f"logpurge: report invalid: {exc.message}", file=sys.stderr)
        return 1
    print(report_json({k: report[k] for k in ("strategy", "n_sequences", "retained", "removed", "metrics")}),
          end="")
    return 0


_COMMANDS = {"parse": cmd_parse, "window": cmd_window, "embed": cmd_embed, "synth": cmd_synth,
             "purge": cmd_purge, "run": cmd_purge, "detect": cmd_detect, "eval": cmd_eval, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = _config(args)
        return _COMMANDS[args.command](args, cfg) or 0
    except (UsageError, InvalidConfig) as exc:
        print(f"logpurge: {exc}", file=sys.stderr)
        return 2
    except LogPurgeError as exc:
        print(f"logpurge: phase {exc.phase} failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
