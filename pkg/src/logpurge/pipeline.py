"""End-to-end run: load, embed, purify, report.

The report is deterministic given the effective config and the input, so
wall-clock timings are written to a separate file.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

from .config import RunConfig
from .core import HIGH, LOW, Template, read_sequences, record_from_json, write_sequences
from .detector import NgramDetector, evaluate
from .embedding import SequenceEmbedder
from .engine import LogPurge
from .evaluator import Evaluator
from .exceptions import LogPurgeError
from .metrics import SelectionOutcome, clean_retention, subset_purity
from .parsing import DrainParser, FieldLayout, parse_line, parse_records, window_sequences
from .pluto import PlutoPurifier

SCHEMA_VERSION = "1.0"
SCHEMA_PATH = Path(__file__).with_name("report.schema.json")


@contextmanager
def phase(name, timings=None):
    """Tag escaping pipeline errors with ``name`` and record the elapsed time."""
    t0 = time.perf_counter()
    try:
        yield
    except LogPurgeError as exc:
        if "phase" not in vars(exc):
            exc.phase = name
        raise
    finally:
        if timings is not None:
            timings[name] = timings.get(name, 0.0) + time.perf_counter() - t0


# -- input -------------------------------------------------------------------


def _first_json(lines):
    for line in lines:
        if line.strip():
            try:
                obj = json.loads(line)
            except json.JSONDecodeError:
                return None
            return obj if isinstance(obj, dict) else None
    return None


def load_dataset(lines, cfg: RunConfig, timings=None):
    """Sequences and template texts from a sequence file, a record file or raw log lines."""
    lines = list(lines)
    head = _first_json(lines)
    if head is not None and ("tids" in head or "templates" in head):
        with phase("load", timings):
            sequences, templates = read_sequences(lines)
        texts = [t.text for t in sorted(templates, key=lambda t: t.id)]
        if not texts and sequences:
            texts = [f"template {i}" for i in range(1 + max(max(s.template_ids) for s in sequences))]
        return sequences, texts
    with phase("parse", timings):
        if head is not None:
            records = [record_from_json(json.loads(l)) for l in lines if l.strip()]
        else:
            layout = FieldLayout.bgl() if cfg["parse.layout"] == "bgl" else FieldLayout()
            records = [parse_line(l, layout) for l in lines if l.strip()]
        parser = DrainParser(cfg["parse.depth"], cfg["parse.sim_threshold"], cfg["parse.max_children"])
        if any(r.template_id is None for r in records):
            records = parse_records(records, parser)
            texts = [t.text for t in parser.templates_]
        else:
            texts = [f"template {i}" for i in range(1 + max(r.template_id for r in records))]
    with phase("window", timings):
        records = sorted(records, key=lambda r: r.timestamp)
        sequences = window_sequences(records, cfg["window.window_len"], cfg["window.stride"])
    return sequences, texts


# -- run ---------------------------------------------------------------------


@dataclass
class PipelineResult:
    report: dict
    selected: list
    rules: list
    timings: dict
    layouts: list = field(default_factory=list)
    estimator: object = None


def _labelled(sequences):
    return bool(sequences) and all(s.ground_truth is not None for s in sequences)


def _finite(x):
    return None if x is None or not math.isfinite(x) else float(x)


def _selection_metrics(sequences, ids):
    if not _labelled(sequences) or len(ids) == 0:
        return None
    outcome = SelectionOutcome.from_sequences(sequences, ids)
    return {"subset_purity": subset_purity(outcome), "clean_retention": clean_retention(outcome)}


def config_digest(cfg: RunConfig) -> str:
    return hashlib.sha256(cfg.to_json().encode()).hexdigest()


def run_pipeline(sequences, template_texts, cfg: RunConfig, test_sequences=None, transport=None,
                 embed_transport=None) -> PipelineResult:
    timings = {}
    n = len(sequences)
    with phase("embed", timings):
        embedder = SequenceEmbedder(cfg["embed.kind"], cfg["embed.dim"], cfg["run.seed"], cfg["embed.endpoint"],
                                    cfg.cache_file("embeddings.jsonl"), cfg["embed.max_inflight"],
                                    cfg["embed.batch_size"], template_texts, embed_transport)
        X = embedder.fit(sequences).transform(sequences)

    report = {"schema_version": SCHEMA_VERSION, "strategy": cfg["run.strategy"], "n_sequences": n,
              "n_templates": len(template_texts), "config_digest": config_digest(cfg),
              "embedding": X.provider_tag}
    layouts = []
    if cfg["run.strategy"] == "pluto":
        with phase("pluto", timings):
            est = PlutoPurifier(cfg["regions.K"], cfg["pluto.alpha"], cfg["pluto.spike_method"],
                                cfg["pluto.percentile"], cfg["pluto.center"], cfg["run.seed"]).fit(X.rows)
        selected = est.get_support(indices=True)
        rules = []
        report["pluto"] = {
            "alpha": cfg["pluto.alpha"],
            "high_clusters": [int(k) for k in est.high_clusters_],
            "dominance_table": [
                {**row, "dom": _finite(row["dom"]), "dom_infinite": not math.isfinite(row["dom"])}
                for row in est.dominance_table_
            ],
        }
        report["stage1"] = report["stage2"] = None
    else:
        evaluator = Evaluator(cfg.backend_config(cfg.cache_file("responses.jsonl")), template_texts,
                              transport=transport)
        with phase("purge", timings):
            est = LogPurge(evaluator, K=cfg["regions.K"], k_nn=cfg["regions.k_nn"], epsilon=cfg["regions.epsilon"],
                           r_min=cfg["regions.r_min"], M=cfg["regions.M"], n_max=cfg["purge.n_max"],
                           percentile=cfg["purge.percentile"], min_size=cfg["purge.min_size"],
                           val_fraction=cfg["purge.val_fraction"], stage2=cfg["run.stage2"],
                           with_labels=cfg["run.with_labels"], detector_n=cfg["detector.n"],
                           detector_top_k=cfg["detector.top_k"], perplexity=cfg["tsne.perplexity"],
                           tsne_iter=cfg["tsne.iterations"], learning_rate=cfg["tsne.learning_rate"],
                           random_state=cfg["run.seed"]).fit(X, sequences)
        for key, value in est.timings_.items():
            timings[f"purge.{key}"] = value
        selected = est.selected_ids_
        rules = list(est.rules_.rules)
        verdicts = [v.label for v in est.region_verdicts_]
        report["stage1"] = {
            "regions": len(est.regions_),
            "high_regions": verdicts.count(HIGH),
            "low_regions": verdicts.count(LOW),
            "converged": bool(est.converged_),
            "n_iter": int(est.n_iter_),
            "retained": len(est.stage1_train_set_),
            "representative_fraction": est.representative_fraction_,
            "iterations": [
                {"iteration": s.iteration, "low_regions": len(s.low_regions), "low_members": len(s.low_members),
                 "train_size": len(s.train_set), "errors": len(s.error_set), "new_rules": len(s.new_rules),
                 "subset_purity": (_selection_metrics(sequences, sorted(s.train_set)) or {}).get("subset_purity")}
                for s in est.stage1_history_
            ],
        }
        subs = est.subregions_
        report["stage2"] = {
            "enabled": bool(cfg["run.stage2"]),
            "regions_projected": len(est.layouts_),
            "subregions": len(subs),
            "high_subregions": sum(o.label == HIGH for o in subs),
            "removed": len(est.stage1_train_set_) - len(selected),
            "cut": _finite(est.stage2_cut_) if cfg["run.stage2"] and subs else None,
        }
        report["pluto"] = None
        for k, (members, Y) in sorted(est.layouts_.items()):
            layouts += [{"seq_id": int(i), "x": float(x), "y": float(y), "region_id": int(k)}
                        for i, (x, y) in zip(members, Y)]

    report["retained"] = int(len(selected))
    report["removed"] = n - int(len(selected))
    report["rules"] = [{"text": r.text, "iteration": r.iteration_added, "template_id": r.template_id,
                        "label": r.label, "source_error_ids": list(r.source_error_ids)} for r in rules]
    report["metrics"] = _selection_metrics(sequences, selected)
    report["detection"] = None
    if test_sequences is not None and len(selected):
        with phase("detect", timings):
            det = NgramDetector(cfg["detector.n"], cfg["detector.top_k"]).fit(
                [sequences[i] for i in selected])
            report["detection"] = evaluate(det, test_sequences)
    return PipelineResult(report, [sequences[i] for i in selected], [r.text for r in rules], timings, layouts, est)


# -- output ------------------------------------------------------------------


def report_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def write_outputs(result: PipelineResult, cfg: RunConfig, out_dir, template_texts=None, dump_layouts=False):
    """Write purified.jsonl, rules.txt, report.json, effective_config.json and timings.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    templates = None
    if template_texts is not None:
        templates = [Template(i, tuple(t.split()), 0) for i, t in enumerate(template_texts)]
    with (out / "purified.jsonl").open("w") as fh:
        write_sequences(result.selected, fh, templates)
    (out / "rules.txt").write_text("".join(t + "\n" for t in result.rules))
    (out / "report.json").write_text(report_json(result.report))
    (out / "effective_config.json").write_text(cfg.to_json())
    (out / "timings.json").write_text(json.dumps(result.timings, indent=2, sort_keys=True) + "\n")
    if dump_layouts:
        with (out / "layouts.jsonl").open("w") as fh:
            for row in result.layouts:
                fh.write(json.dumps(row) + "\n")
    return out


def load_schema() -> dict:
    return json.loads(SCHEMA_PATH.read_text())


def validate_report(report: dict) -> None:
    import jsonschema

    jsonschema.validate(report, load_schema())
