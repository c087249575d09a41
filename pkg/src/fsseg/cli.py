"""Command line entry point: ``fsseg <command> ...``."""
from __future__ import annotations

import argparse
import csv
import logging
import sys

from . import harness
from .corpus import Corpus, CorpusError, load_corpus, save_corpus
from .metrics import EvaluationError, evaluate, fleiss_kappa
from .normalize import bundled_dictionary, load_dictionary, normalize_corpus
from .optim import OptimizationError

log = logging.getLogger("fsseg")


def _cmd_normalize(args) -> int:
    corpus = load_corpus(args.input)
    dicts = [bundled_dictionary(p[len("bundled:"):]) if p.startswith("bundled:")
             else load_dictionary(p) for p in args.dict]
    out, report = normalize_corpus(corpus, dicts, args.lowercase)
    save_corpus(out, args.out)
    print(f"replacements={report.replacements} tokens_in={report.tokens_in} "
          f"tokens_out={report.tokens_out}")
    for variant, hits in report.per_entry_hits.most_common():
        print(f"  {variant}\t{hits}")
    return 0


def _cmd_train(args) -> int:
    cfg = harness.load_config(args.config, model=args.model)
    cfg.check_paths()
    corpus = harness.prepare_corpus(load_corpus(args.train, expect_labels=True), cfg)
    model, trace = harness.train_model(corpus, cfg)
    model.save(args.out)
    if args.trace:
        harness.write_trace(trace, args.trace)
    log.info("model written to %s", args.out)
    return 0


def _cmd_predict(args) -> int:
    model = harness.load_model(args.model_file)
    corpus = load_corpus(args.input)
    pred = harness.decode_many(model, corpus.sequences)
    save_corpus(Corpus([s.with_tags(p) for s, p in zip(corpus, pred)], corpus.source_kind),
                args.out)
    return 0


def _cmd_evaluate(args) -> int:
    gold = load_corpus(args.gold, expect_labels=True)
    pred = load_corpus(args.pred, expect_labels=True)
    g_tags, p_tags = [], []
    for seq in gold:
        try:
            other = pred.get(seq.key)
        except KeyError:
            raise EvaluationError(f"turn {seq.key} missing from predictions") from None
        if other.words != seq.words:
            raise EvaluationError(f"turn {seq.key}: tokens differ between gold and predictions")
        g_tags.append(list(seq.tags))
        p_tags.append(list(other.tags))
    report = evaluate(g_tags, p_tags)
    text = report.format()
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            fh.write(text)
    print(report.format_table())
    return 0


def _cmd_cv(args) -> int:
    cfg = harness.load_config(args.config, model=args.model)
    corpus = load_corpus(args.corpus, expect_labels=True)
    plan = harness.make_folds(corpus, args.k, args.seed,
                              by_dialogue=args.by_dialogue or cfg.dialogue_folds)
    result = harness.run_cv(corpus, plan, cfg, args.out_dir)
    print(harness.format_cv(result, cfg.model), end="")
    return 0


def _cmd_synth(args) -> int:
    gen = harness.SyntheticGenerator(args.seed, args.profile)
    save_corpus(gen.generate(args.n), args.out)
    print(f"sequences={args.n} segments={gen.segments_emitted}")
    return 0


def _read_ratings(path: str) -> list[list[int]]:
    """Items x categories counts; an optional header whose first cell is
    ``item``, ``id`` or blank marks the first column as item labels."""
    rows = []
    label_col = False
    with open(path, newline="", encoding="utf-8") as fh:
        for k, row in enumerate(csv.reader(fh)):
            cells = [c.strip() for c in row]
            if not any(cells):
                continue
            if k == 0 and not all(c.lstrip("-").isdigit() for c in cells):
                label_col = cells[0].lower() in ("", "item", "id")
                continue
            if label_col or not cells[0].lstrip("-").isdigit():
                cells = cells[1:]
            try:
                rows.append([int(c) for c in cells])
            except ValueError:
                raise EvaluationError(f"{path}:{k + 1}: ratings must be integers") from None
    return rows


def _cmd_kappa(args) -> int:
    kappa = fleiss_kappa(_read_ratings(args.ratings))
    print(kappa if isinstance(kappa, str) else f"{kappa:.6f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fsseg", description="Functional segment tagging toolkit.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("normalize", help="rewrite slang/dialect tokens to standard forms")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--dict", action="append", default=[],
                   help="dictionary file, or bundled:chat / bundled:dialect (repeatable)")
    p.add_argument("--lowercase", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_normalize)

    p = sub.add_parser("train", help="train a tagger")
    p.add_argument("--model", choices=harness.MODEL_KINDS, required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--trace", help="write the per-iteration trace as CSV")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("predict", help="tag a corpus with a trained model")
    p.add_argument("--model-file", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("evaluate", help="score predictions against gold tags")
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--report")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("cv", help="k-fold cross-validation")
    p.add_argument("--model", choices=harness.MODEL_KINDS, required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config")
    p.add_argument("--out-dir")
    p.add_argument("--by-dialogue", action="store_true")
    p.set_defaults(func=_cmd_cv)

    p = sub.add_parser("synth", help="write a synthetic labeled corpus")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--profile", choices=harness.PROFILES, default="message")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("kappa", help="Fleiss' kappa from an items x categories count CSV")
    p.add_argument("--ratings", required=True)
    p.set_defaults(func=_cmd_kappa)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CorpusError, EvaluationError, harness.ConfigError, OptimizationError,
            harness.FoldError, OSError) as exc:
        print(f"fsseg: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
