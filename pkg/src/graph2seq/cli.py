"""Command-line entry point: preprocess, train, translate, evaluate, gradcheck.

Exit codes: 0 success, 1 validation failure, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from collections import Counter
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Optional, Sequence

log = logging.getLogger("graph2seq")

TASKS = ("amr-gen", "nmt", "nmt-plus")
TASK_WIDTH = {"amr-gen": 576, "nmt": 512, "nmt-plus": 448}

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class ValidationError(Exception):
    """Bad input or arguments; maps to exit code 1."""


# --- configuration ------------------------------------------------------------


@dataclass
class RunConfig:
    task: str = "amr-gen"
    seed: int = 1
    train: Any = None
    encoder: Any = None
    decoder: Any = None
    eval: Any = None
    paths: dict = field(default_factory=dict)

    @classmethod
    def for_task(cls, task: str, seed: int = 1) -> "RunConfig":
        from .decoder import DecoderConfig
        from .encoder import EncoderConfig
        from .graph import AMR_TAGS, SEQUENTIAL_TAGS
        from .metrics import EvalConfig
        from .training import TrainConfig

        if task not in TASKS:
            raise ValidationError(f"unknown task {task!r}; expected one of {', '.join(TASKS)}")
        tags = SEQUENTIAL_TAGS if task == "nmt-plus" else AMR_TAGS
        return cls(
            task=task,
            seed=seed,
            train=TrainConfig(seed=seed),
            encoder=EncoderConfig(hidden=TASK_WIDTH[task], tags=tags),
            decoder=DecoderConfig(),
            eval=EvalConfig.for_task(task),
        )

    def merged(self, overrides: dict[str, dict[str, Any]]) -> "RunConfig":
        """Apply ``{section: {key: value}}``; unknown keys are rejected."""
        out = self
        for section, values in overrides.items():
            if not values:
                continue
            if section == "run":
                for k, v in values.items():
                    if k not in ("seed",):
                        raise ValidationError(f"unknown top-level config key {k!r}")
                    out = replace(out, seed=int(v), train=replace(out.train, seed=int(v)))
                continue
            current = getattr(out, section, None)
            if current is None or section == "paths":
                raise ValidationError(f"unknown config section {section!r}")
            names = {f.name for f in fields(current)}
            bad = set(values) - names
            if bad:
                raise ValidationError(f"unknown keys in [{section}]: {', '.join(sorted(bad))}")
            try:
                out = replace(out, **{section: replace(current, **values)})
            except (TypeError, ValueError) as exc:
                raise ValidationError(f"[{section}]: {exc}") from None
        return out

    def header(self) -> dict:
        enc = asdict(self.encoder)
        enc["tags"] = [t.value for t in self.encoder.tags]
        return {
            "task": self.task,
            "seed": self.seed,
            "train": asdict(self.train),
            "encoder": enc,
            "decoder": asdict(self.decoder),
            "eval": asdict(self.eval),
        }


def load_config_file(path: str) -> dict[str, dict[str, Any]]:
    """TOML file with optional [train], [encoder], [decoder], [eval] tables and a top-level seed."""
    import tomli

    try:
        with open(path, "rb") as fh:
            data = tomli.load(fh)
    except FileNotFoundError:
        raise ValidationError(f"config file not found: {path}") from None
    except tomli.TOMLDecodeError as exc:
        raise ValidationError(f"cannot parse {path}: {exc}") from None
    out: dict[str, dict[str, Any]] = {"run": {}}
    for key, value in data.items():
        if isinstance(value, dict):
            out[key] = dict(value)
        else:
            out["run"][key] = value
    if "encoder" in out and "tags" in out["encoder"]:
        from .graph import EdgeTag

        out["encoder"]["tags"] = tuple(EdgeTag(t) for t in out["encoder"]["tags"])
    return out


# flag name -> (section, field)
OVERRIDE_FLAGS = {
    "batch_size": ("train", "batch_size"),
    "lr": ("train", "lr"),
    "dropout": ("train", "dropout"),
    "max_checkpoints": ("train", "max_checkpoints"),
    "patience": ("train", "patience"),
    "hidden": ("encoder", "hidden"),
    "layers": ("encoder", "layers"),
    "pos_dim": ("encoder", "pos_dim"),
    "dec_hidden": ("decoder", "hidden"),
    "dec_embed": ("decoder", "embed"),
}


def build_run_config(args: argparse.Namespace) -> RunConfig:
    """Task defaults, then the config file, then explicit flags."""
    cfg = RunConfig.for_task(args.task)
    if getattr(args, "config", None):
        cfg = cfg.merged(load_config_file(args.config))
    flags: dict[str, dict[str, Any]] = {"run": {}}
    if getattr(args, "seed", None) is not None:
        flags["run"]["seed"] = args.seed
    for name, (section, key) in OVERRIDE_FLAGS.items():
        value = getattr(args, name, None)
        if value is not None:
            flags.setdefault(section, {})[key] = value
    cfg = cfg.merged(flags)
    cfg.encoder.dropout = cfg.train.dropout
    return cfg


# --- file helpers -------------------------------------------------------------


def _read_text(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ValidationError(f"file not found: {path}") from None


def _read_lines(path: str) -> list[str]:
    return _read_text(path).splitlines()


def load_split(prefix: str):
    """Graphs (and targets and anonymisation maps when present) written by ``preprocess``."""
    from .graph import LeviGraph

    gpath = Path(f"{prefix}.graphs.jsonl")
    if not gpath.exists():
        raise ValidationError(f"missing graph file {gpath} (run 'preprocess' first)")
    graphs = [LeviGraph.from_json(line) for line in gpath.read_text(encoding="utf-8").splitlines() if line.strip()]
    tpath = Path(f"{prefix}.tok")
    targets = None
    if tpath.exists():
        targets = [line.split() for line in tpath.read_text(encoding="utf-8").splitlines()]
        if len(targets) != len(graphs):
            raise ValidationError(f"{tpath}: {len(targets)} lines but {len(graphs)} graphs")
    mpath = Path(f"{prefix}.map.json")
    maps = json.loads(mpath.read_text(encoding="utf-8")) if mpath.exists() else None
    return graphs, targets, maps


def _stats(graphs) -> dict:
    from .graph import EdgeTag

    positions: Counter[int] = Counter()
    tags: Counter[str] = Counter()
    for g in graphs:
        positions.update(g.positions)
        for t, n in g.tag_counts().items():
            tags[t.value] += n
    return {
        "instances": len(graphs),
        "nodes": sum(g.num_nodes for g in graphs),
        "edges": sum(len(g.edges) for g in graphs),
        "edges_by_tag": {t.value: tags[t.value] for t in EdgeTag},
        "position_histogram": {str(k): positions[k] for k in sorted(positions)},
    }


# --- subcommands --------------------------------------------------------------


def cmd_preprocess(args) -> int:
    graphs, targets, maps, failures = [], [], [], []
    if args.task == "amr-gen":
        _preprocess_amr(args, graphs, targets, maps, failures)
    else:
        _preprocess_conll(args, graphs, targets, failures)
    stats = _stats(graphs)
    stats["failures"] = len(failures)
    for where, msg in failures:
        log.error("instance %s: %s", where, msg)
    if failures and args.strict:
        print(json.dumps(stats, indent=2))
        return EXIT_INVALID
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    Path(f"{out}.graphs.jsonl").write_text("".join(g.to_json() + "\n" for g in graphs), encoding="utf-8")
    if any(t is not None for t in targets):
        Path(f"{out}.tok").write_text("".join(" ".join(t or []) + "\n" for t in targets), encoding="utf-8")
    if args.task == "amr-gen":
        Path(f"{out}.map.json").write_text(json.dumps(maps, ensure_ascii=False), encoding="utf-8")
    Path(f"{out}.stats.json").write_text(json.dumps(stats, indent=2))
    print(json.dumps(stats, indent=2))
    return EXIT_OK


def _preprocess_amr(args, graphs, targets, maps, failures) -> None:
    import re

    from .amr import (
        AnonymizationError,
        PenmanError,
        alignments_from_paths,
        anonymize,
        parse_alignment_comment,
        read_alignment_jsonl,
        read_amr_corpus,
        simplify,
    )
    from .graph import GraphError, prepare

    blocks = [b for b in re.split(r"\n\s*\n", _read_text(args.input)) if b.strip()]
    side = read_alignment_jsonl(_read_text(args.alignments)) if args.alignments else None
    for i, block in enumerate(blocks):
        try:
            entries = list(read_amr_corpus(block))
        except PenmanError as exc:
            failures.append((i, str(exc)))
            continue
        if not entries:
            continue
        entry = entries[0]
        try:
            g = simplify(entry.graph)
            if side is not None:
                triples = side[i] if i < len(side) else []
            else:
                triples = parse_alignment_comment(entry.meta.get("alignments", ""))
            aligns = alignments_from_paths(g, triples)
            anon, surface, amap = anonymize(g, aligns, entry.tokens)
            graphs.append(prepare(anon.to_labeled()))
        except (AnonymizationError, GraphError, ValueError) as exc:
            failures.append((i, str(exc)))
            continue
        targets.append(surface)
        maps.append(amap.to_json())


def _preprocess_conll(args, graphs, targets, failures) -> None:
    import re

    from .dependency import ConllColumns, ConllError, build_nmt_graph, parse_conll

    cols = ConllColumns(args.form_col, args.head_col, args.rel_col)
    blocks = [b for b in re.split(r"\n\s*\n", _read_text(args.input)) if b.strip()]
    tgt_lines = _read_lines(args.target) if args.target else None
    if tgt_lines is not None and len(tgt_lines) != len(blocks):
        raise ValidationError(f"{args.target}: {len(tgt_lines)} lines but {len(blocks)} sentences")
    for i, block in enumerate(blocks):
        try:
            sents = parse_conll(block, cols)
            if not sents:
                continue
            graphs.append(build_nmt_graph(sents[0], with_sequential=args.task == "nmt-plus"))
        except ConllError as exc:
            failures.append((i, str(exc)))
            continue
        targets.append(tgt_lines[i].split() if tgt_lines is not None else None)


def cmd_train(args) -> int:
    import numpy as np

    from .model import Graph2Seq, ModelConfig
    from .training import Instance, build_vocabularies, train

    cfg = build_run_config(args)
    tr_graphs, tr_targets, _ = load_split(args.train)
    dv_graphs, dv_targets, _ = load_split(args.dev)
    if tr_targets is None or dv_targets is None:
        raise ValidationError("training and dev splits need target (.tok) files")
    train_set = [Instance(g, t, i) for i, (g, t) in enumerate(zip(tr_graphs, tr_targets))]
    dev_set = [Instance(g, t, i) for i, (g, t) in enumerate(zip(dv_graphs, dv_targets))]
    src, tgt = build_vocabularies(train_set)
    model = Graph2Seq(ModelConfig(cfg.encoder, cfg.decoder), src, tgt, seed=cfg.seed, dtype=np.float32)
    header = {"run": cfg.header(), "parameters": model.params.count()}
    print(json.dumps(header, indent=2))
    result = train(model, train_set, dev_set, cfg.train, args.output, header=header)
    print(json.dumps({"best_checkpoint": str(result.best_path), "checkpoints": len(result.checkpoints)}))
    return EXIT_OK


def cmd_translate(args) -> int:
    from .amr import AnonymizationMap, deanonymize
    from .inference import Ensemble, InferenceError, decode_corpus
    from .model import Graph2Seq

    if not args.checkpoint:
        raise ValidationError("at least one --checkpoint is required")
    models = []
    for path in args.checkpoint:
        if not Path(path).exists():
            raise ValidationError(f"checkpoint not found: {path}")
        models.append(Graph2Seq.from_checkpoint(path))
    try:
        model = Ensemble(models) if len(models) > 1 else models[0]
    except InferenceError as exc:
        raise ValidationError(f"incompatible checkpoints: {exc}") from None
    graphs, _, maps = load_split(args.test)
    amr = args.task == "amr-gen"
    decoded = decode_corpus(model, graphs, beam=args.beam, max_len=args.max_len, unk_replace=amr)
    lines = []
    for i, d in enumerate(decoded):
        words = d.words
        if amr and maps is not None:
            words = deanonymize(words, AnonymizationMap.from_json(maps[i]))
        lines.append(" ".join(words))
    text = "".join(line + "\n" for line in lines)
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if args.trace:
        Path(args.trace).write_text("".join(d.trace(i) + "\n" for i, d in enumerate(decoded)), encoding="utf-8")
    unfinished = sum(not d.result.finished for d in decoded)
    if unfinished:
        log.warning("%d of %d hypotheses hit the length limit", unfinished, len(decoded))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .metrics import EvalConfig, bleu, bootstrap_significance, chrf_pp, wilcoxon_signed_rank

    overrides = {}
    if args.bootstrap_samples is not None:
        overrides["bootstrap_samples"] = args.bootstrap_samples
    try:
        cfg = EvalConfig.for_task(args.task, **overrides)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    hyp = _read_lines(args.hyp)
    ref = _read_lines(args.ref)
    if len(hyp) != len(ref):
        raise ValidationError(f"{len(hyp)} hypotheses but {len(ref)} references")
    if not ref:
        raise ValidationError("empty reference file")
    chrf_a = [chrf_pp(h, r, cfg) for h, r in zip(hyp, ref)]
    report: dict[str, Any] = {
        "task": args.task,
        "config": asdict(cfg),
        "sentences": len(ref),
        "bleu": bleu(hyp, ref, cfg).score,
        "chrf++": sum(chrf_a) / len(chrf_a),
    }
    if args.compare:
        other = _read_lines(args.compare)
        if len(other) != len(ref):
            raise ValidationError(f"{len(other)} comparison hypotheses but {len(ref)} references")
        chrf_b = [chrf_pp(h, r, cfg) for h, r in zip(other, ref)]
        stat, p = wilcoxon_signed_rank(chrf_a, chrf_b)
        report["compare"] = {
            "bleu": bleu(other, ref, cfg).score,
            "chrf++": sum(chrf_b) / len(chrf_b),
            "bootstrap_p": bootstrap_significance(hyp, other, ref, cfg, seed=args.seed or 0),
            "wilcoxon_statistic": stat,
            "wilcoxon_p": p,
        }
    text = json.dumps(report, indent=2)
    if args.output:
        Path(args.output).write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .numeric import GRADIENT_RULES
    from .verify import run_suite

    if args.inject_bug is not None and args.inject_bug not in GRADIENT_RULES:
        raise ValidationError(f"unknown op {args.inject_bug!r}; known: {', '.join(sorted(GRADIENT_RULES))}")
    results = run_suite(args.bits, args.inject_bug)
    failed = 0
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        failed += not r.passed
        print(f"{status} {r.name:<18} rel_err={r.error:.3e} threshold={r.threshold:.0e}")
    print(f"{len(results) - failed}/{len(results)} checks passed ({args.bits}-bit)")
    return EXIT_OK if failed == 0 else EXIT_INVALID


# --- argument parsing ---------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="graph2seq", description="Graph-to-sequence toolkit")
    p.add_argument("--threads", type=int, default=None, help="cap on numeric library threads")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        sp.add_argument("--task", choices=TASKS, default="amr-gen")
        if seed:
            sp.add_argument("--seed", type=int, default=None)

    sp = sub.add_parser("preprocess", help="raw AMR or CoNLL input -> graph files")
    common(sp, seed=False)
    sp.add_argument("--input", required=True, help="PENMAN file (amr-gen) or CoNLL file (nmt, nmt-plus)")
    sp.add_argument("--output", required=True, help="output prefix")
    sp.add_argument("--alignments", help="JSON-lines alignment file (otherwise ::alignments comments)")
    sp.add_argument("--target", help="target sentences, one per line (nmt tasks)")
    sp.add_argument("--form-col", type=int, default=1)
    sp.add_argument("--head-col", type=int, default=6)
    sp.add_argument("--rel-col", type=int, default=7)
    sp.add_argument("--strict", action="store_true", help="fail when any instance cannot be processed")
    sp.set_defaults(func=cmd_preprocess)

    sp = sub.add_parser("train", help="train a model on preprocessed splits")
    common(sp)
    sp.add_argument("--train", required=True, help="training split prefix")
    sp.add_argument("--dev", required=True, help="dev split prefix")
    sp.add_argument("--output", required=True, help="checkpoint directory")
    sp.add_argument("--config", help="TOML configuration file")
    sp.add_argument("--batch-size", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--dropout", type=float)
    sp.add_argument("--max-checkpoints", type=int)
    sp.add_argument("--patience", type=int)
    sp.add_argument("--hidden", type=int, help="encoder width")
    sp.add_argument("--layers", type=int, help="GGNN layers")
    sp.add_argument("--pos-dim", type=int)
    sp.add_argument("--dec-hidden", type=int)
    sp.add_argument("--dec-embed", type=int)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("translate", help="beam-search decode a preprocessed split")
    common(sp)
    sp.add_argument("--test", required=True, help="split prefix to decode")
    sp.add_argument("--checkpoint", action="append", default=[], help="repeat to ensemble")
    sp.add_argument("--beam", type=int, default=5)
    sp.add_argument("--max-len", type=int, default=None)
    sp.add_argument("--output", help="hypothesis file (default stdout)")
    sp.add_argument("--trace", help="JSON-lines decoding trace")
    sp.set_defaults(func=cmd_translate)

    sp = sub.add_parser("evaluate", help="BLEU and chrF++, optionally with significance tests")
    common(sp)
    sp.add_argument("--hyp", required=True)
    sp.add_argument("--ref", required=True)
    sp.add_argument("--compare", help="second system for bootstrap and Wilcoxon tests")
    sp.add_argument("--bootstrap-samples", type=int)
    sp.add_argument("--output", help="write the JSON report here as well")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    sp.add_argument("--bits", type=int, choices=(32, 64), default=32)
    sp.add_argument("--inject-bug", metavar="OP", help="corrupt one gradient rule (negative control)")
    sp.set_defaults(func=cmd_gradcheck)
    return p


def _cap_threads(n: Optional[int]) -> None:
    if n is None:
        return
    if n < 1:
        raise ValidationError("--threads must be positive")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        _cap_threads(args.threads)
        return args.func(args)
    except ValidationError as exc:
        log.error("%s", exc)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001
        from .graph import GraphError

        if isinstance(exc, (GraphError, KeyError)):
            log.error("invalid input: %s", exc)
            return EXIT_INVALID
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
