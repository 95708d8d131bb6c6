"""``csatrans`` command line: ingest, train, eval, inp, inspect, gradcheck, pe dump.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numerical failure.
Logs go to stderr; artifacts go to the paths given on the command line.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import re
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, CsaTransError, EmptyCorpus

log = logging.getLogger("csatrans")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; route that to our exit code 1 instead."""

    def __init__(self, *args, **kwargs):
        kwargs.setdefault("allow_abbrev", False)
        super().__init__(*args, **kwargs)

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def default_seed() -> int:
    raw = os.environ.get("CSA_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError as exc:
        raise UsageError(f"CSA_SEED must be an integer, got {raw!r}") from exc


# -- ingest ------------------------------------------------------------------------

_PY_DOC = re.compile(r'"""(.*?)"""|\'\'\'(.*?)\'\'\'', re.S)
_JAVA_DOC = re.compile(r"/\*\*(.*?)\*/", re.S)
_EXT = {"python": ".py", "java": ".java"}


def _doc_summary(code: str, lang: str) -> list[str]:
    from .ast_ingest import tokenize_summary

    m = (_PY_DOC if lang == "python" else _JAVA_DOC).search(code)
    if not m:
        return []
    text = next(g for g in m.groups() if g is not None)
    lines = [ln.strip().lstrip("*").strip() for ln in text.strip().splitlines()]
    first = next((ln for ln in lines if ln), "")
    return tokenize_summary(first)


def _source_items(path: Path, lang: str):
    """(origin_id, code, summary) from a directory of source files or a JSONL file."""
    from .ast_ingest import tokenize_summary

    if path.is_dir():
        for f in sorted(path.rglob(f"*{_EXT[lang]}")):
            code = f.read_text(encoding="utf8", errors="replace")
            yield str(f.relative_to(path)), code, _doc_summary(code, lang)
        return
    with open(path, encoding="utf8") as fh:
        for i, line in enumerate(fh):
            if not line.strip():
                continue
            obj = json.loads(line)
            summary = obj.get("summary", "")
            tokens = tokenize_summary(summary) if isinstance(summary, str) else list(summary)
            yield str(obj.get("id", i)), obj["code"], tokens


def cmd_ingest(args) -> int:
    from .ast_ingest import iter_source_records, write_jsonl

    path = Path(args.input)
    if not path.exists():
        raise EmptyCorpus(f"input {path} does not exist")
    records, failures = [], 0
    for item in iter_source_records(_source_items(path, args.lang), args.lang, args.max_nodes):
        if isinstance(item, Exception):
            failures += 1
            log.warning("skipped: %s", item)
        else:
            records.append(item)
    n = write_jsonl(records, args.out)
    if failures:
        log.warning("%d input(s) failed to parse and were skipped", failures)
    log.info("wrote %d records to %s", n, args.out)
    return EXIT_OK


# -- train / eval ----------------------------------------------------------------

def resolve_config(args):
    from .model import ModelConfig, preset

    cfg = preset(args.preset).to_dict()
    if args.config:
        with open(args.config) as fh:
            data = json.load(fh)
        if "preset" in data:
            cfg = preset(data.pop("preset")).to_dict()
        cfg.update(data)
    overrides = {
        "attention_mode": args.attention, "batch_size": args.batch_size, "lr": args.lr,
        "sparsity": args.sparsity, "dropout": args.dropout,
        "seed": args.seed if args.seed_given else None,
    }
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    return ModelConfig.from_dict(cfg)


def _load_records(path):
    from .ast_ingest import read_jsonl

    if not Path(path).exists():
        raise EmptyCorpus(f"data file {path} does not exist")
    return read_jsonl(path)


def split_validation(records, fraction: float):
    if fraction <= 0 or len(records) < 2:
        return list(records), list(records)
    n_val = max(1, int(round(fraction * len(records))))
    return list(records[:-n_val]), list(records[-n_val:])


def cmd_train(args) -> int:
    from .plotting import loss_curve_png
    from .training import TrainState, evaluate_records, load_checkpoint, save_checkpoint, train

    records = _load_records(args.data)
    if not records:
        raise EmptyCorpus(f"{args.data} holds no records")
    train_recs, val_recs = split_validation(records, args.val_fraction)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "checkpoint.npz"
    if args.resume:
        state = load_checkpoint(args.resume)
        log.info("resumed from %s at step %d", args.resume, state.step)
    else:
        cfg = resolve_config(args)
        state = TrainState.create(cfg, train_recs)
    resolved = state.cfg.to_dict()
    log.info("resolved config %s", json.dumps(resolved, sort_keys=True))
    (out / "config.json").write_text(json.dumps(resolved, indent=2, sort_keys=True))
    log_path = out / "train_log.csv"
    train(state, train_recs, args.steps, log_path=log_path, eval_every=args.eval_every,
          eval_records=val_recs, stop_bleu=args.stop_bleu, ckpt_path=ckpt, ckpt_every=args.ckpt_every)
    save_checkpoint(state, ckpt)
    metrics = evaluate_records(state, val_recs)
    metrics.update(step=state.step, attention_mode=state.cfg.attention_mode, split="validation")
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True))
    with open(log_path, newline="") as fh:
        rows = [{k: float(v) for k, v in r.items()} for r in csv.DictReader(fh)]
    if rows:
        loss_curve_png(rows, out / "loss.png")
    print(json.dumps(metrics, sort_keys=True))
    return EXIT_OK


def cmd_eval(args) -> int:
    from .training import evaluate_records, load_checkpoint

    state = load_checkpoint(args.ckpt)
    records = _load_records(args.data)
    if args.limit:
        records = records[: args.limit]
    metrics = evaluate_records(state, records, sentence_bleu=args.sentence_bleu)
    text = json.dumps(metrics, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


# -- inp ---------------------------------------------------------------------

def cmd_inp(args) -> int:
    from .inp import InpSettings, run_benchmark, write_results_csv
    from .plotting import inp_bars_png

    records = _load_records(args.data)
    settings = InpSettings(epochs=args.epochs, d_pe=args.dim)
    rows = run_benchmark(records, args.pe, args.k, runs=args.runs, seed=args.seed, settings=settings)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_results_csv(rows, out)
    inp_bars_png(rows, out.with_suffix(".png"))
    for r in rows:
        print(f"{r['scheme']:<11} k={r['k']}  {100 * r['mean_acc']:6.2f} +- {100 * r['std']:5.2f}  ({r['runs']} runs)")
    return EXIT_OK


# -- inspect -----------------------------------------------------------------

def _find_record(records, record_id: str):
    for r in records:
        if r.ast.origin_id == record_id:
            return r
    if record_id.isdigit() and int(record_id) < len(records):
        return records[int(record_id)]
    raise EmptyCorpus(f"no record with id {record_id!r}")


def cmd_inspect(args) -> int:
    from .plotting import heatmap_png, write_ppm
    from .relations import compute_relations
    from .sbm import mask_relationship_breakdown
    from .training import load_checkpoint

    state = load_checkpoint(args.ckpt)
    rec = _find_record(_load_records(args.data), args.record_id)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = state.model.eval()
    from .autodiff import no_grad

    with no_grad():
        model.encode(state.batch([rec]))
    rel = compute_relations(rec.ast, state.cfg.p_max)
    report = {"record_id": rec.ast.origin_id, "n_nodes": len(rec.ast.nodes),
              "attention_mode": state.cfg.attention_mode, "layers": []}
    for li, attn in enumerate(model.encoder_attention()):
        mask = np.asarray(attn.last["mask"])[0]
        weights = attn.last["weights"][0]
        for h in range(mask.shape[0]):
            np.savetxt(out / f"mask_l{li}_h{h}.csv", mask[h].astype(int), fmt="%d", delimiter=",")
        agg_mask = mask.mean(axis=0)
        agg_w = weights.mean(axis=0)
        write_ppm(agg_mask, out / f"mask_l{li}.ppm")
        write_ppm(agg_w, out / f"scores_l{li}.ppm")
        heatmap_png(agg_w, out / f"scores_l{li}.png", f"layer {li} mean attention", rec.ast.types)
        entry = {"layer": li, "heads": [mask_relationship_breakdown(mask[h], rel) for h in range(mask.shape[0])]}
        entry["all_heads"] = mask_relationship_breakdown(mask.any(axis=0), rel)
        report["layers"].append(entry)
    (out / "breakdown.json").write_text(json.dumps(report, indent=2))
    print(json.dumps({"out_dir": str(out), "layers": len(report["layers"])}))
    return EXIT_OK


# -- gradcheck ---------------------------------------------------------------

def cmd_gradcheck(args) -> int:
    from .checks import CASES, INJECTED_BUG, run_suite

    cases = dict(CASES)
    if args.inject_bug:
        cases.update(INJECTED_BUG)
    rows = run_suite(range(args.seeds), cases, tol=args.tol)
    for r in rows:
        print(f"{r['op']:<22} max_rel_err={r['max_rel_err']:.3e}  {'PASS' if r['passed'] else 'FAIL'}")
    failed = [r["op"] for r in rows if not r["passed"]]
    if failed:
        log.error("gradient check failed for: %s", ", ".join(failed))
        return EXIT_NUMERIC
    return EXIT_OK


# -- pe dump -----------------------------------------------------------------

def cmd_pe_dump(args) -> int:
    from .ast_ingest import build_vocab
    from .autodiff import no_grad
    from .pe import CodeStructureEmbedder, CseConfig, TreePE, TripletPE, laplacian_pe, sequential_pe
    from .pe.cse import RelationBatch
    from .relations import compute_relations

    records = _load_records(args.data)
    ast = _find_record(records, args.record_id).ast
    rng = np.random.default_rng([args.seed, 0])
    with no_grad():
        if args.scheme == "sequential":
            pe = sequential_pe(len(ast.nodes), args.dim)
        elif args.scheme == "laplacian":
            pe = laplacian_pe(ast, args.dim)
        elif args.scheme == "tree":
            pe = TreePE(args.dim, degree=8, depth=max(1, args.dim // 8))(ast).data
        elif args.scheme == "triplet":
            pe = TripletPE(rng, args.dim, [r.ast for r in records])(ast).data
        else:
            if args.ckpt:
                from .training import load_checkpoint

                state = load_checkpoint(args.ckpt)
                cse, vocab, p_max = state.model.cse.eval(), state.node_vocab, state.cfg.p_max
            else:
                vocab = build_vocab(records, "node_types", 10000)
                cse = CodeStructureEmbedder(rng, CseConfig(d_pe=args.dim, layers=2, heads=4), len(vocab)).eval()
                p_max = cse.cfg.p_max
            rb = RelationBatch.from_relations([compute_relations(ast, p_max)])
            pe = cse(np.array([vocab.encode(ast.types)]), rb).data[0]
    np.savetxt(args.out, pe, delimiter=",", fmt="%.10g")
    log.info("wrote %s PE %s to %s", args.scheme, pe.shape, args.out)
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def build_parser() -> Parser:
    from .inp import K_VALUES, SCHEMES

    p = Parser(prog="csatrans", description="Structure-aware code summarization toolkit.")
    p.add_argument("--seed", type=int, default=None, help="defaults to $CSA_SEED, then 0")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=Parser)
    sub.required = True

    s = sub.add_parser("ingest", help="parse source files into AST records")
    s.add_argument("--lang", choices=("python", "java"), required=True)
    s.add_argument("--input", required=True, help="directory of source files or JSONL with id/code/summary")
    s.add_argument("--out", required=True)
    s.add_argument("--max-nodes", type=int, default=150)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("train", help="train the summarizer")
    s.add_argument("--config")
    s.add_argument("--preset", choices=("python", "java"), default="python")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--steps", type=int, required=True)
    s.add_argument("--attention", choices=("sbm", "vanilla"))
    s.add_argument("--batch-size", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--sparsity", type=float)
    s.add_argument("--dropout", type=float)
    s.add_argument("--val-fraction", type=float, default=0.1)
    s.add_argument("--eval-every", type=int, default=0)
    s.add_argument("--stop-bleu", type=float)
    s.add_argument("--ckpt-every", type=int, default=100)
    s.add_argument("--resume")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="greedy-decode a dataset and score it")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out")
    s.add_argument("--limit", type=int, default=0)
    s.add_argument("--sentence-bleu", action="store_true")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("inp", help="intermediate node prediction benchmark")
    s.add_argument("--k", type=int, nargs="+", choices=K_VALUES, default=[1])
    s.add_argument("--pe", nargs="+", choices=SCHEMES, default=list(SCHEMES))
    s.add_argument("--runs", type=int, default=10)
    s.add_argument("--epochs", type=int, default=30)
    s.add_argument("--dim", type=int, default=64)
    s.add_argument("--data", required=True)
    s.add_argument("--out", default="inp_results.csv")
    s.set_defaults(func=cmd_inp)

    s = sub.add_parser("inspect", help="dump SBM masks and attention for one record")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--record-id", required=True)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_inspect)

    s = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op")
    s.add_argument("--seeds", type=int, default=5)
    s.add_argument("--tol", type=float, default=1e-4)
    s.add_argument("--inject-bug", action="store_true", help="add a deliberately wrong op (negative control)")
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("pe", help="positional encoding utilities")
    pe_sub = s.add_subparsers(dest="pe_command", parser_class=Parser)
    pe_sub.required = True
    d = pe_sub.add_parser("dump", help="write one record's PE matrix as CSV")
    d.add_argument("--scheme", choices=SCHEMES, default="csa")
    d.add_argument("--data", required=True)
    d.add_argument("--record-id", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--dim", type=int, default=64)
    d.add_argument("--ckpt")
    d.set_defaults(func=cmd_pe_dump)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        # an explicit --seed or $CSA_SEED overrides a config file; the fallback 0 does not
        args.seed_given = args.seed is not None or "CSA_SEED" in os.environ
        if args.seed is None:
            args.seed = default_seed()
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_USAGE
    except CsaTransError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return exc.exit_code
    except FloatingPointError as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    except (OSError, json.JSONDecodeError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    raise SystemExit(main())
