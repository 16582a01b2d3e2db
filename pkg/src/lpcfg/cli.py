"""Command-line interface.

Subcommands: train, perturb-train, parse, combine, train-reranker, eval,
oracle, synth. Exit codes: 0 success, 1 runtime failure, 2 usage or config
error. Thread count comes from the LPCFG_THREADS environment variable.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from pathlib import Path

from . import grammar as gio
from .ensemble import (CandidateSet, Plan, PlanError, RerankGroup, RerankerModel,
                       hierarchical_combine, max_marginal_coverage, max_tree_coverage,
                       reranker_select, reranker_train, span_score)
from .estimation import (THREADS_ENV, ClusteringConfig, TrainingData, cluster_treebank,
                         num_threads, train_base_pcfg)
from .evaluate import oracle_f1, parseval
from .noise import NoiseSpec, train_ensemble
from .parser import PRUNE_THRESHOLD, UnparseableError, fallback_tree, parse
from .synth import SynthSpec, planted_grammar, random_grammar, sample_treebank
from .trees import (Tree, TreeFormatError, binarize, debinarize, format_tagged, parse_bracketed,
                    parse_tagged, read_treebank, write_treebank)

log = logging.getLogger("lpcfg")

DEFAULTS = {"m": 24, "k": 100, "restarts": 10, "seed": 0, "unk_threshold": 5,
            "threshold": PRUNE_THRESHOLD}
DEFAULT_GRID = {"schemes": ["dropout"], "sigmas": [0.05, 0.1, 0.15, 0.2], "replicates": 20}
MANIFEST = "manifest.json"


class ConfigError(Exception):
    """Bad flags, config files or inputs detected before any work is done."""


# --------------------------------------------------------------------------
# helpers

def _read_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def _write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _require(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"no such file: {path}")
    return p


def _settings(args, keys) -> dict:
    """flags > config file > defaults."""
    out = {k: DEFAULTS[k] for k in keys if k in DEFAULTS}
    if getattr(args, "config", None):
        cfg = _read_json(_require(args.config))
        out.update({k: cfg[k] for k in keys if k in cfg})
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            out[k] = v
    return out


def _clustering_config(args) -> ClusteringConfig:
    s = _settings(args, ["m", "k", "restarts", "seed", "unk_threshold"])
    try:
        return ClusteringConfig(k=s["k"], m=s["m"], restarts=s["restarts"], seed=s["seed"],
                                unk_threshold=s["unk_threshold"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _read_trees(path) -> list[Tree]:
    try:
        return read_treebank(_require(path))
    except TreeFormatError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _read_tagged(path) -> list[list[tuple[str, str]]]:
    with open(_require(path), encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    try:
        return [parse_tagged(ln) for ln in lines]
    except TreeFormatError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _read_lines_of_trees(path) -> list[Tree | None]:
    """One tree per line; unreadable or blank lines become None."""
    out: list[Tree | None] = []
    with open(_require(path), encoding="utf-8") as fh:
        for line in fh.read().splitlines():
            try:
                trees = parse_bracketed(line)
                out.append(trees[0] if len(trees) == 1 else None)
            except TreeFormatError:
                out.append(None)
    return out


def _save_training_outputs(out: Path, data: TrainingData, grammar, base) -> None:
    out.mkdir(parents=True, exist_ok=True)
    gio.save(grammar, out / "grammar.txt")
    gio.save(base, out / "base.txt")
    data.inside_index.dump(out / "inside_features.tsv")
    data.outside_index.dump(out / "outside_features.tsv")


# --------------------------------------------------------------------------
# train

def cmd_train(args) -> int:
    config = _clustering_config(args)
    treebank = [binarize(t) for t in _read_trees(args.treebank)]
    if not treebank:
        raise ConfigError(f"{args.treebank}: empty treebank")
    start = time.perf_counter()
    data = TrainingData.build(treebank, config.head_rules)
    result = cluster_treebank(data, config)
    base = train_base_pcfg(treebank, config.unk_threshold)
    out = Path(args.out)
    _save_training_outputs(out, data, result.grammar, base)
    _write_json(out / MANIFEST, {
        "kind": "single", "treebank": str(args.treebank), "config": _config_dict(config),
        "models": [{"name": "grammar", "path": "grammar.txt", "noise": "none",
                    "seed": config.seed, "status": "ok",
                    "seconds": round(time.perf_counter() - start, 3)}],
        "base": "base.txt"})
    log.info("trained %d-parameter grammar from %d trees", result.grammar.num_parameters,
             len(treebank))
    return 0


def _config_dict(config: ClusteringConfig) -> dict:
    d = asdict(config)
    d["noise"] = config.noise.tag()
    return d


# --------------------------------------------------------------------------
# perturb-train

def _grid(args) -> tuple[list[NoiseSpec], int]:
    grid = dict(DEFAULT_GRID)
    if args.grid:
        grid.update(_read_json(_require(args.grid)))
    if args.schemes:
        grid["schemes"] = args.schemes.split(",")
    if args.sigmas:
        try:
            grid["sigmas"] = [float(s) for s in args.sigmas.split(",")]
        except ValueError:
            raise ConfigError(f"bad --sigmas {args.sigmas!r}") from None
    if args.replicates is not None:
        grid["replicates"] = args.replicates
    reps = grid["replicates"]
    if not isinstance(reps, int) or reps < 1:
        raise ConfigError(f"replicates must be a positive integer, got {reps!r}")
    if not grid["schemes"] or not grid["sigmas"]:
        raise ConfigError("noise grid is empty")
    try:
        specs = [NoiseSpec(s, float(x)) for s in grid["schemes"] for x in grid["sigmas"]]
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return specs, reps


def cmd_perturb_train(args) -> int:
    config = _clustering_config(args)
    specs, reps = _grid(args)
    treebank = [binarize(t) for t in _read_trees(args.treebank)]
    if not treebank:
        raise ConfigError(f"{args.treebank}: empty treebank")
    out = Path(args.out)
    (out / "models").mkdir(parents=True, exist_ok=True)
    data = TrainingData.build(treebank, config.head_rules)
    base = train_base_pcfg(treebank, config.unk_threshold)
    gio.save(base, out / "base.txt")
    data.inside_index.dump(out / "inside_features.tsv")
    data.outside_index.dump(out / "outside_features.tsv")
    members = train_ensemble(data, config, specs, reps, workers=args.workers)
    entries = []
    for mem in members:
        entry = {"name": mem.name, "scheme": mem.spec.scheme, "sigma": mem.spec.sigma,
                 "replicate": mem.replicate, "seed": mem.seed,
                 "seconds": round(mem.seconds, 3)}
        if mem.error is None:
            path = f"models/{mem.name}.txt"
            gio.save(mem.grammar, out / path)
            entry.update(path=path, status="ok")
        else:
            entry.update(path=None, status="failed", error=mem.error)
        entries.append(entry)
    _write_json(out / MANIFEST, {"kind": "ensemble", "treebank": str(args.treebank),
                                 "config": _config_dict(config), "master_seed": config.seed,
                                 "models": entries, "base": "base.txt"})
    failed = sum(e["status"] != "ok" for e in entries)
    log.info("trained %d models, %d failed", len(entries) - failed, failed)
    return 1 if failed == len(entries) else 0


# --------------------------------------------------------------------------
# parse

def _load_models(path) -> tuple[list[tuple[str, object]], object | None]:
    """(name, grammar) pairs plus the base grammar from a model directory,
    a manifest, or a single grammar file."""
    p = _require(path)
    if p.is_dir():
        p = p / MANIFEST if (p / MANIFEST).exists() else p / "grammar.txt"
    if p.name.endswith(".json"):
        man = _read_json(p)
        root = p.parent
        models = [(e["name"], gio.load(root / e["path"])) for e in man["models"]
                  if e.get("status") == "ok"]
        base = gio.load(root / man["base"]) if man.get("base") else None
        return models, base
    base_path = p.parent / "base.txt"
    base = gio.load(base_path) if base_path.exists() and base_path != p else None
    return [(p.stem, gio.load(p))], base


def _parse_all(grammar, base, sentences, threshold) -> tuple[list[Tree], list[dict], list[int]]:
    def one(sent):
        try:
            tree, chart = parse(grammar, base, sent, threshold)
            return tree, chart.span_table(), None
        except (UnparseableError, ValueError) as exc:
            return fallback_tree(sent), {}, str(exc)

    with ThreadPoolExecutor(num_threads()) as pool:
        results = list(pool.map(one, sentences))
    failures = []
    for idx, (_, _, err) in enumerate(results):
        if err is not None:
            log.warning("sentence %d: %s; wrote fallback tree", idx, err)
            failures.append(idx)
    return [r[0] for r in results], [r[1] for r in results], failures


def _write_marginals(path, tables) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for idx, table in enumerate(tables):
            spans = [[a, i, j, p] for (a, i, j), p in sorted(table.items(), key=lambda kv: (kv[0][1], kv[0][2], kv[0][0]))]
            fh.write(json.dumps({"id": idx, "spans": spans}) + "\n")


def _read_marginals(path) -> list[dict]:
    out = []
    with open(_require(path), encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                out.append({(a, i, j): p for a, i, j, p in rec["spans"]})
    return out


def cmd_parse(args) -> int:
    threshold = _settings(args, ["threshold"])["threshold"]
    sentences = _read_tagged(args.input)
    models, base = _load_models(args.model)
    if args.base:
        base = gio.load(_require(args.base))
    if args.no_prune:
        base = None
    if not models:
        raise ConfigError(f"{args.model}: no usable models")
    single = len(models) == 1
    out = Path(args.out)
    if not single:
        out.mkdir(parents=True, exist_ok=True)
    n_failed = 0
    for name, g in models:
        trees, tables, failures = _parse_all(g, base, sentences, threshold)
        n_failed += len(failures)
        tree_path = out if single else out / f"{name}.mrg"
        write_treebank(tree_path, trees)
        marg = args.marginals_out if single else (out / f"{name}.marg.jsonl" if args.marginals_out else None)
        if marg:
            _write_marginals(marg, tables)
        if failures:
            with open(f"{tree_path}.failures", "w", encoding="utf-8") as fh:
                fh.write("".join(f"{i}\n" for i in failures))
    log.info("parsed %d sentences with %d model(s), %d failures", len(sentences), len(models),
             n_failed)
    return 0


# --------------------------------------------------------------------------
# combine / rerank

def _candidate_streams(paths) -> list[list[Tree | None]]:
    streams = [_read_lines_of_trees(p) for p in paths]
    if len({len(s) for s in streams}) > 1:
        raise ConfigError("candidate files have different line counts")
    return streams


def _rerankers(specs) -> dict[str, RerankerModel]:
    out = {}
    for spec in specs or []:
        name, _, path = spec.partition("=")
        if not path:
            name, path = "default", name
        out[name] = RerankerModel.load(_require(path))
    return out


def cmd_combine(args) -> int:
    streams = _candidate_streams(args.inputs)
    margs = [_read_marginals(p) for p in args.marginals] if args.marginals else None
    if margs is not None and (len(margs) != len(streams)
                              or any(len(m) != len(streams[0]) for m in margs)):
        raise ConfigError("need one marginal file per input, aligned with the trees")
    rerankers = _rerankers(args.reranker)
    plan = None
    if args.plan:
        try:
            plan = Plan.load(_require(args.plan))
        except PlanError as exc:
            raise ConfigError(str(exc)) from None
        if plan.model_indices() and plan.model_indices()[-1] >= len(streams):
            raise ConfigError("plan references more models than inputs")
    elif args.method == "maxmrg" and margs is None:
        raise ConfigError("maxmrg needs --marginals")
    elif args.method == "maxent" and not rerankers:
        raise ConfigError("maxent needs --reranker")
    out = []
    for idx in range(len(streams[0])):
        row = [s[idx] for s in streams]
        keep = [k for k, t in enumerate(row) if t is not None]
        if not keep:
            log.warning("sentence %d: no candidates", idx)
            out.append(None)
            continue
        trees = [binarize(row[k]) for k in keep]
        tables = [margs[k][idx] for k in keep] if margs else None
        try:
            if plan is not None:
                if len(keep) != len(row):
                    raise ValueError("a candidate is missing")
                result = hierarchical_combine(plan, trees, tables, rerankers)
            elif args.method == "maxtre":
                result = max_tree_coverage(CandidateSet(trees))
            elif args.method == "maxmrg":
                result = max_marginal_coverage(CandidateSet(trees, marginals=tables))
            else:
                model = rerankers.get("default") or next(iter(rerankers.values()))
                scores = [span_score(t, m) for t, m in zip(trees, tables)] if tables else None
                result = reranker_select(model, CandidateSet(trees, sources=keep), scores)
        except (ValueError, PlanError) as exc:
            log.warning("sentence %d: %s; kept the first candidate", idx, exc)
            result = trees[0]
        out.append(result)
    with open(args.out, "w", encoding="utf-8") as fh:
        for t in out:
            fh.write(f"{debinarize(t) if t is not None else '()'}\n")
    return 0


def cmd_train_reranker(args) -> int:
    gold = _read_trees(args.gold)
    streams = _candidate_streams(args.inputs)
    if len(streams[0]) != len(gold):
        raise ConfigError("gold and candidate files have different line counts")
    margs = [_read_marginals(p) for p in args.marginals] if args.marginals else None
    groups = []
    for idx, g in enumerate(gold):
        row = [(k, s[idx]) for k, s in enumerate(streams) if s[idx] is not None]
        if not row:
            continue
        trees = [binarize(t) for _, t in row]
        scores = [span_score(t, margs[k][idx]) for (k, _), t in zip(row, trees)] if margs else []
        groups.append(RerankGroup(trees, g, [k for k, _ in row], scores))
    model = reranker_train(groups, l2=args.l2)
    model.save(args.out)
    return 0


# --------------------------------------------------------------------------
# eval / oracle

def cmd_eval(args) -> int:
    gold = _read_lines_of_trees(args.gold)
    pred = _read_lines_of_trees(args.pred)
    if len(gold) != len(pred):
        raise ConfigError(f"gold has {len(gold)} lines, prediction has {len(pred)}")
    if any(g is None for g in gold):
        raise ConfigError(f"{args.gold}: unreadable gold tree")
    failures = set()
    if args.failures:
        with open(_require(args.failures), encoding="utf-8") as fh:
            failures = {int(x) for x in fh.read().split()}
    score = parseval(gold, pred, failures, args.max_len)
    print(f"sentences {score.sentences}  failures {score.failures}")
    print(f"P {score.precision:.2f}  R {score.recall:.2f}  F1 {score.f1:.2f}  "
          f"exact {score.exact_match:.2f}")
    if args.json:
        _write_json(args.json, score.summary())
    if args.tsv:
        with open(args.tsv, "w", encoding="utf-8") as fh:
            fh.write("sentence\tprecision\trecall\tf1\n")
            for idx, p, r, f in score.per_sentence:
                fh.write(f"{idx}\t{p:.2f}\t{r:.2f}\t{f:.2f}\n")
    return 0


def cmd_oracle(args) -> int:
    gold = _read_lines_of_trees(args.gold)
    streams = _candidate_streams(args.inputs)
    if len(streams[0]) != len(gold):
        raise ConfigError("gold and candidate files have different line counts")
    cands = [[s[i] if s[i] is not None else fallback_tree([(w, "X") for w in g.words()])
              for s in streams] for i, g in enumerate(gold)]
    score, picks = oracle_f1(gold, cands)
    print(f"oracle F1 {score.f1:.2f} over {len(streams)} models")
    if args.json:
        _write_json(args.json, {**score.summary(), "picks": picks})
    return 0


# --------------------------------------------------------------------------
# synth

def cmd_synth(args) -> int:
    if args.num < 0:
        raise ConfigError("--num must be >= 0")
    if args.planted:
        g = planted_grammar()
    else:
        try:
            g = random_grammar(SynthSpec(args.interminals, args.preterminals, args.m, args.vocab,
                                         args.seed))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    trees = sample_treebank(g, args.num, args.seed, args.max_len) if args.num else []
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    gio.save(g, out / "grammar.txt")
    write_treebank(out / "treebank.mrg", [t.tree for t in trees])
    with open(out / "annotated.txt", "w", encoding="utf-8") as fh:
        fh.write("".join(f"{t}\n" for t in trees))
    with open(out / "sentences.txt", "w", encoding="utf-8") as fh:
        fh.write("".join(format_tagged(t.tree.leaves()) + "\n" for t in trees))
    return 0


# --------------------------------------------------------------------------
# argument parsing

def _add_training_flags(p) -> None:
    p.add_argument("--treebank", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON file with m, k, restarts, seed, unk_threshold")
    p.add_argument("--m", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--restarts", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--unk-threshold", dest="unk_threshold", type=int)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lpcfg", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="estimate one grammar by clustering")
    _add_training_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("perturb-train", help="train a noise-perturbed ensemble")
    _add_training_flags(p)
    p.add_argument("--grid", help="JSON with schemes, sigmas, replicates")
    p.add_argument("--schemes", help="comma list: dropout,add,mul")
    p.add_argument("--sigmas", help="comma list of noise levels")
    p.add_argument("--replicates", type=int)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_perturb_train)

    p = sub.add_parser("parse", help="MBR-parse tagged sentences")
    p.add_argument("--model", required=True, help="model dir, manifest or grammar file")
    p.add_argument("--input", required=True, help="one word_TAG sentence per line")
    p.add_argument("--out", required=True, help="tree file (directory for ensembles)")
    p.add_argument("--base", help="pruning grammar (default: base.txt next to the model)")
    p.add_argument("--no-prune", action="store_true")
    p.add_argument("--threshold", type=float)
    p.add_argument("--config")
    p.add_argument("--marginals-out")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("combine", help="combine several parses per sentence")
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--method", choices=["maxtre", "maxmrg", "maxent"], default="maxtre")
    p.add_argument("--marginals", nargs="+")
    p.add_argument("--reranker", action="append", help="NAME=PATH or PATH")
    p.add_argument("--plan", help="JSON combination plan")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_combine)

    p = sub.add_parser("train-reranker", help="fit the log-linear reranker")
    p.add_argument("--gold", required=True)
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--marginals", nargs="+")
    p.add_argument("--l2", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_reranker)

    p = sub.add_parser("eval", help="labelled bracket scores")
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--failures")
    p.add_argument("--max-len", type=int)
    p.add_argument("--json")
    p.add_argument("--tsv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("oracle", help="oracle F1 over candidate streams")
    p.add_argument("--gold", required=True)
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--json")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("synth", help="sample a synthetic grammar and treebank")
    p.add_argument("--out", required=True)
    p.add_argument("--num", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--interminals", type=int, default=3)
    p.add_argument("--preterminals", type=int, default=3)
    p.add_argument("--m", type=int, default=2)
    p.add_argument("--vocab", type=int, default=6)
    p.add_argument("--max-len", type=int)
    p.add_argument("--planted", action="store_true", help="use the planted PP-attachment grammar")
    p.set_defaults(func=cmd_synth)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    log.debug("threads: %d (%s)", num_threads(), THREADS_ENV)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"lpcfg {args.command}: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.debug("failure", exc_info=True)
        print(f"lpcfg {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
