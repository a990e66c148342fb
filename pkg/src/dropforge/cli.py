"""Command line entry point: ``dropforge <subcommand>``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor

from . import annotator, harness, heads, ingest, metrics
from .decoder import DecodeConfig, decode_answer

log = logging.getLogger("dropforge")


def max_workers() -> int:
    env = os.environ.get("DROPFORGE_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def parallel_map(fn, items):
    """Order-preserving map capped by ``DROPFORGE_THREADS``."""
    items = list(items)
    workers = min(max_workers(), max(len(items), 1))
    if workers == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _open_out(path):
    return open(path, "w", encoding="utf-8") if path and path != "-" else sys.stdout


def _write_rows(path, rows):
    fh = _open_out(path)
    try:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
    finally:
        if fh is not sys.stdout:
            fh.close()


def cmd_ingest(args) -> int:
    with open(args.drop_json, "rb") as fh:
        dataset = ingest.parse_drop_dataset(fh.read())
    examples = ingest.examples_from_dataset(dataset, args.max_len)
    _write_rows(args.output, (ex.to_json() for ex in examples))
    log.info("wrote %d examples (%d qa pairs skipped)", len(examples), dataset.skipped)
    return 0


def cmd_annotate(args) -> int:
    examples = ingest.read_examples_jsonl(args.examples)
    anns = parallel_map(annotator.annotate_example, examples)
    _write_rows(args.output, (a.to_json(ex.example_id) for ex, a in zip(examples, anns)))
    return 0


def cmd_stats(args) -> int:
    anns = list(harness.load_annotations(args.annotations).values())
    if args.kinds:
        kinds = tuple(k.strip() for k in args.kinds.split(",") if k.strip())
        rows = [(",".join(kinds), annotator.corpus_stats(anns, kinds))]
    else:
        rows = [(label, annotator.corpus_stats(anns, kinds)) for label, kinds in annotator.TABLE_CONFIGS]
    print(annotator.format_stats_table(rows))
    return 0


def cmd_decode(args) -> int:
    examples = ingest.read_examples_jsonl(args.examples)
    config = DecodeConfig(args.beam, args.max_signed, args.max_spans, args.top_k, args.max_span_len)

    if args.oracle:
        anns = harness.load_annotations(args.oracle)
        cfg = harness.MockConfig(noise_scale=args.noise)

        def run(ex):
            ann = anns.get(ex.example_id)
            if ann is None or ann.is_empty():
                return {"example_id": ex.example_id, "answer_type": None, "answer_texts": [], "trace": {"skipped": True}}
            return harness.decode_with_oracle(ex, ann, cfg, config).to_json(ex.example_id)

    else:
        if args.weights:
            weights = heads.HeadWeights.load(args.weights)
        else:
            weights = harness.mock_head_weights(args.dim, args.mock_seed)
        cfg = harness.MockConfig(seed=args.mock_seed, D=weights.D)

        def run(ex):
            if args.reps:
                enc = heads.EncoderOutput.load(os.path.join(args.reps, ex.example_id))
            else:
                enc = harness.gen_encoder_output(ex, cfg)
            outs = heads.compute_heads(enc, ex.numbers, weights)
            pred = decode_answer(ex, outs, heads.make_reranker(outs, weights, config.max_signed), config)
            return pred.to_json(ex.example_id)

    _write_rows(args.output, parallel_map(run, examples))
    return 0


def cmd_eval(args) -> int:
    preds = {}
    with open(args.predictions, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                row = json.loads(line)
                preds[row["example_id"]] = row.get("answer_texts", [])
    with open(args.drop_json, "rb") as fh:
        dataset = ingest.parse_drop_dataset(fh.read())
    golds = {qid: g for _, _, qas in dataset for qid, _, g in qas}
    report = metrics.evaluate_corpus(preds, golds)
    print(json.dumps(report, indent=2))
    return 0


def cmd_selftest(args) -> int:
    raw = None
    if args.dataset:
        with open(args.dataset, "rb") as fh:
            raw = fh.read()
    report = harness.selftest(raw, harness.MockConfig(noise_scale=args.noise))
    print(report.format())
    return 0 if report.ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dropforge", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="tokenize a DROP json file into examples jsonl")
    s.add_argument("drop_json")
    s.add_argument("-o", "--output", default="-")
    s.add_argument("--max-len", type=int, default=ingest.DEFAULT_MAX_LEN)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("annotate", help="search weak-supervision annotations")
    s.add_argument("examples")
    s.add_argument("-o", "--output", default="-")
    s.set_defaults(func=cmd_annotate)

    s = sub.add_parser("stats", help="annotation coverage table")
    s.add_argument("annotations")
    s.add_argument("--kinds", help="comma list from: " + ",".join(annotator.KINDS))
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("decode", help="decode answers")
    s.add_argument("examples")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--weights", help="head weight directory")
    src.add_argument("--mock-seed", type=int, help="mock encoder and mock head weights")
    src.add_argument("--oracle", help="annotation jsonl driving oracle head outputs")
    s.add_argument("--reps", help="directory of per-example encoder outputs (with --weights)")
    s.add_argument("--dim", type=int, default=32, help="mock representation width")
    s.add_argument("--noise", type=float, default=0.02, help="oracle noise scale")
    s.add_argument("--beam", type=int, default=3)
    s.add_argument("--max-signed", type=int, default=heads.MAX_SIGNED)
    s.add_argument("--max-spans", type=int, default=heads.MAX_SPANS)
    s.add_argument("--top-k", type=int, default=20)
    s.add_argument("--max-span-len", type=int, default=10)
    s.add_argument("-o", "--output", default="-")
    s.set_defaults(func=cmd_decode)

    s = sub.add_parser("eval", help="EM/F1 of predictions against a DROP file")
    s.add_argument("predictions")
    s.add_argument("drop_json")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("selftest", help="end-to-end oracle run plus property checks")
    s.add_argument("--dataset", help="DROP json to use instead of the bundled fixture")
    s.add_argument("--noise", type=float, default=0.02)
    s.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "decode" and args.mock_seed is None:
        args.mock_seed = 0
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
