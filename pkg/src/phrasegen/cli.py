"""Command-line interface exposing the pipeline end-to-end.

Every command resolves its configuration (flags, optionally backed by a
`key = value` config file), writes the resolved record plus seed into a
content-addressed run directory, and exits 0 on success or nonzero with a
single-line `error: ...` on stderr. Input files are never mutated.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import analysis, extrinsic, grammars
from . import corpus as corpus_mod
from . import generators as gen
from . import metrics as mx
from .corpus import CorpusError, Signature, Split

OUT_ROOT_ENV = "PHRASEGEN_OUT_ROOT"


class CliError(Exception):
    pass


def _read_config_file(path):
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise CliError(f"{path}:{lineno}: expected `key = value`")
            key, _, value = line.partition("=")
            values[key.strip().replace("-", "_")] = value.strip()
    return values


def _apply_config_file(parser, argv):
    """Use config-file entries as defaults for the invoked subcommand,
    rejecting unknown keys."""
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config")
    known, rest = probe.parse_known_args(argv)
    if not known.config:
        return
    command = next((tok for tok in rest if not tok.startswith("-")), None)
    subparsers = next(
        a for a in parser._actions if isinstance(a, argparse._SubParsersAction)
    )
    subparser = subparsers.choices.get(command)
    if subparser is None:
        return  # argparse will report the unknown command itself
    values = _read_config_file(known.config)
    actions = {a.dest: a for a in subparser._actions}
    defaults = {}
    for key, raw in values.items():
        action = actions.get(key)
        if action is None:
            raise CliError(f"unknown config key {key!r}")
        if action.type is not None:
            defaults[key] = action.type(raw)
        elif isinstance(action, argparse._StoreTrueAction):
            defaults[key] = raw.lower() in ("1", "true", "yes")
        else:
            defaults[key] = raw
    subparser.set_defaults(**defaults)


def _run_dir(command, resolved):
    root = os.environ.get(OUT_ROOT_ENV, "runs")
    digest = hashlib.sha256(
        json.dumps(resolved, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()[:12]
    path = os.path.join(root, f"{command}-{digest}")
    os.makedirs(path, exist_ok=True)
    with open(os.path.join(path, "config.txt"), "w", encoding="utf-8") as fh:
        for key in sorted(resolved):
            fh.write(f"{key} = {resolved[key]}\n")
    return path


def _resolve(args, command):
    resolved = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config")}
    for key, value in list(resolved.items()):
        if isinstance(value, list):
            resolved[key] = ",".join(str(v) for v in value)
        elif value is not None and not isinstance(value, (str, int, float, bool)):
            resolved[key] = str(value)
    return _run_dir(command, resolved), resolved


def _load_corpus(args):
    inventory = corpus_mod.load_inventory(args.inventory)
    return corpus_mod.load_corpus(args.corpus, inventory), inventory


def _out_path(args, run_dir, default_name):
    return args.out if args.out else os.path.join(run_dir, default_name)


def _generator_config(args):
    fields = (
        "embed_dim", "hidden_dim", "latent_dim", "kl_anneal_steps", "word_dropout",
        "temperature", "max_decode_len", "learning_rate", "batch_size", "epochs",
        "seed",
    )
    kwargs = {f: getattr(args, f) for f in fields if getattr(args, f, None) is not None}
    return gen.GeneratorConfig(**kwargs)


def _add_generator_flags(sub):
    sub.add_argument("--embed-dim", type=int, dest="embed_dim")
    sub.add_argument("--hidden-dim", type=int, dest="hidden_dim")
    sub.add_argument("--latent-dim", type=int, dest="latent_dim")
    sub.add_argument("--kl-anneal-steps", type=int, dest="kl_anneal_steps")
    sub.add_argument("--word-dropout", type=float, dest="word_dropout")
    sub.add_argument("--temperature", type=float)
    sub.add_argument("--max-decode-len", type=int, dest="max_decode_len")
    sub.add_argument("--learning-rate", type=float, dest="learning_rate")
    sub.add_argument("--batch-size", type=int, dest="batch_size")
    sub.add_argument("--epochs", type=int)


# ---------------------------------------------------------------------------
# commands


def cmd_synth_corpus(args):
    run_dir, _ = _resolve(args, "synth-corpus")
    if args.builtin:
        maker = grammars.BUILTIN_GRAMMARS.get(args.builtin)
        if maker is None:
            raise CliError(f"unknown builtin grammar {args.builtin!r}; "
                           f"known: {sorted(grammars.BUILTIN_GRAMMARS)}")
        spec = maker() if args.per_signature is None else maker(per_signature=args.per_signature)
    else:
        if not args.grammar or not args.inventory:
            raise CliError("either --builtin or both --grammar and --inventory are required")
        inventory = corpus_mod.load_inventory(args.inventory)
        spec = corpus_mod.load_grammar(args.grammar, inventory,
                                       per_signature=args.per_signature)
    result = corpus_mod.generate_synthetic_corpus(spec, seed=args.seed)
    out = _out_path(args, run_dir, "corpus.tsv")
    corpus_mod.save_corpus(result, out)
    inv_out = args.inventory_out or os.path.join(run_dir, "inventory.txt")
    corpus_mod.save_inventory(spec.slot_inventory, inv_out)
    print(f"wrote {len(result)} phrases, {len(result.signatures())} signatures -> {out}")
    return 0


def cmd_split(args):
    run_dir, _ = _resolve(args, "split")
    c, _ = _load_corpus(args)
    ratios = tuple(float(r) for r in args.ratios.split(","))
    result = corpus_mod.stratified_split(c, ratios, seed=args.seed)
    out = _out_path(args, run_dir, "corpus.tsv")
    corpus_mod.save_corpus(result, out)
    counts = {s.value: len(result.phrases(s)) for s in Split}
    print(f"split {counts} -> {out}")
    return 0


def cmd_train(args):
    run_dir, _ = _resolve(args, "train")
    c, _ = _load_corpus(args)
    kind = gen.ModelKind(args.kind)
    objective = gen.TrainingObjective(args.objective)
    cfg = _generator_config(args)
    model = gen.train_generator(kind, objective, c, cfg)
    out = args.out or os.path.join(run_dir, "model")
    gen.save_model(model, out)
    curve = model.curve[-1] if model.curve else {}
    print(f"trained {kind.value}/{objective.value}: final ce={curve.get('ce', float('nan')):.4f} -> {out}")
    return 0


def _parse_input_phrase(text, target, inventory):
    tokens = tuple(
        corpus_mod.classify_token(t, inventory) for t in text.split() if t
    )
    return corpus_mod.CarrierPhrase(tokens, target)


def cmd_generate(args):
    run_dir, _ = _resolve(args, "generate")
    model = gen.load_model(args.model)
    strategy = gen.SamplingStrategy(args.strategy)
    target = Signature.from_flag(args.target) if args.target else None
    input_phrase = None
    if args.input:
        if target is None:
            raise CliError("--input requires --target to name the input's signature")
        input_phrase = _parse_input_phrase(args.input, target, model.slot_inventory)
    request = gen.GenerationRequest(
        strategy=strategy,
        count=args.count,
        input_phrase=input_phrase,
        target=None if (model.kind is gen.ModelKind.VAE or model.kind is gen.ModelKind.S2S)
        else target,
        seed=args.seed,
        temperature=args.temperature,
    )
    sequences = gen.generate(model, request)
    out = _out_path(args, run_dir, "generated.tsv")
    with open(out, "w", encoding="utf-8") as fh:
        for tokens in sequences:
            fh.write(f"{args.target or ''}\t{' '.join(tokens)}\n")
    print(f"wrote {len(sequences)} phrases -> {out}")
    return 0


def _load_generated(path):
    hyps = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line.strip():
                continue
            flag, _, tokens = line.partition("\t")
            sig = Signature.from_flag(flag) if flag else None
            hyps.append((tuple(tokens.split()), sig))
    return hyps


def cmd_eval_intrinsic(args):
    run_dir, _ = _resolve(args, "eval-intrinsic")
    c, inventory = _load_corpus(args)
    hyps = _load_generated(args.generated)
    report = mx.intrinsic_report(
        hyps,
        mx.references(c, Split.TRAIN),
        mx.references(c, Split.TEST),
        inventory,
        assign_uncontrolled=args.assign,
    )
    out = _out_path(args, run_dir, "intrinsic.txt")
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(report.to_text())
    print(report.to_text(), end="")
    return 0


def cmd_classify(args):
    run_dir, _ = _resolve(args, "classify")
    c, _ = _load_corpus(args)
    cfg = extrinsic.ClassifierConfig(epochs=args.epochs, seed=args.seed)
    examples = extrinsic.intent_examples(c, (Split.TRAIN, Split.DEV))
    clf = extrinsic.train_classifier(examples, cfg)
    test = c.phrases(Split.TEST)
    preds = clf.predict_tokens([p.surface() for p in test])
    gold = [extrinsic.IntentLabel.of(p.signature) for p in test]
    score = extrinsic.macro_f1(preds, gold)
    out = _out_path(args, run_dir, "classify.txt")
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(f"intents = {len(set(gold))}\nmacro_f1 = {score!r}\n")
    print(f"macro_f1 = {score:.4f} over {len(set(gold))} intents -> {out}")
    return 0


def cmd_eval_extrinsic(args):
    run_dir, _ = _resolve(args, "eval-extrinsic")
    c, _ = _load_corpus(args)
    models = [(os.path.basename(path.rstrip("/")), gen.load_model(path))
              for path in args.model]
    cfg = extrinsic.ClassifierConfig(epochs=args.epochs, seed=args.seed)
    result = extrinsic.augmentation_experiment(
        c, models, cfg=cfg, per_phrase=args.per_phrase, seed=args.seed,
        n_resamples=args.resamples,
    )
    out = _out_path(args, run_dir, "extrinsic.txt")
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(result.to_text())
    record_path = os.path.join(run_dir, "extrinsic.jsonl")
    with open(record_path, "w", encoding="utf-8") as fh:
        for arm in result.arms:
            fh.write(json.dumps({
                "arm": arm.name, "macro_f1": arm.macro_f1, "delta": arm.delta,
                "p_value": arm.p_value, "n_synthetic": arm.n_synthetic,
                "duplicate_fraction": arm.duplicate_fraction,
            }, sort_keys=True) + "\n")
    print(result.to_text(), end="")
    return 0


def cmd_sweep(args):
    run_dir, _ = _resolve(args, "sweep")
    c, _ = _load_corpus(args)
    base = _generator_config(args)
    grid = analysis.default_grid(base=base, max_runs=args.max_runs)
    store = args.store or os.path.join(run_dir, "sweep.jsonl")
    records = analysis.run_sweep(
        grid, c, store, per_phrase=args.per_phrase, eval_seed=args.seed,
        classifier_cfg=extrinsic.ClassifierConfig(epochs=args.classifier_epochs,
                                                  seed=args.seed),
        with_extrinsic=not args.no_extrinsic, workers=args.workers,
    )
    failures = sum(1 for r in records if r.error)
    print(f"sweep store has {len(records)} records ({failures} failed) -> {store}")
    return 0


def cmd_analyze(args):
    run_dir, _ = _resolve(args, "analyze")
    records = analysis.load_store(args.store)
    study = analysis.intrinsic_extrinsic_study(records)
    usable = [r for r in records if r.error is None]
    acc = [r.report.accuracy_bleu4 for r in usable]
    div = [r.report.diversity_unique_rate for r in usable]
    text = study.to_text()
    text += f"pearson_accuracy_vs_diversity\t{analysis.pearson_r(acc, div)!r}\t-\n"
    out = _out_path(args, run_dir, "study.txt")
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(text)
    print(text, end="")
    return 0


def cmd_plot(args):
    run_dir, _ = _resolve(args, "plot")
    records = analysis.load_store(args.store)
    prefix = args.out or os.path.join(run_dir, "scatter")
    csv_path, svg_path = analysis.export_scatter(records, args.x, args.y, prefix)
    print(f"wrote {csv_path} and {svg_path}")
    return 0


# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="phrasegen",
        description="Carrier-phrase generation, evaluation, and augmentation toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_out=True):
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--seed", type=int, default=0)
        if with_out:
            p.add_argument("--out")

    p = sub.add_parser("synth-corpus", help="expand a template grammar into a corpus")
    common(p)
    p.add_argument("--grammar")
    p.add_argument("--inventory")
    p.add_argument("--builtin", choices=sorted(grammars.BUILTIN_GRAMMARS))
    p.add_argument("--per-signature", type=int, dest="per_signature")
    p.add_argument("--inventory-out", dest="inventory_out")
    p.set_defaults(func=cmd_synth_corpus)

    p = sub.add_parser("split", help="stratified train/dev/test split")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--inventory", required=True)
    p.add_argument("--ratios", default="0.7,0.15,0.15")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train a generator")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--inventory", required=True)
    p.add_argument("--kind", required=True, choices=[k.value for k in gen.ModelKind])
    p.add_argument("--objective", required=True,
                   choices=[o.value for o in gen.TrainingObjective])
    _add_generator_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="sample phrases from a trained model")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--strategy", required=True,
                   choices=[s.value for s in gen.SamplingStrategy])
    p.add_argument("--target", help="signature flag domain|intent|slot1,slot2")
    p.add_argument("--input", help="input phrase tokens (posterior / s2s)")
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--temperature", type=float)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("eval-intrinsic", help="score generated phrases")
    common(p)
    p.add_argument("--generated", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--inventory", required=True)
    p.add_argument("--assign", action="store_true",
                   help="assign signatures to unlabeled hypotheses by BLEU")
    p.set_defaults(func=cmd_eval_intrinsic)

    p = sub.add_parser("classify", help="train and evaluate the intent classifier")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--inventory", required=True)
    p.add_argument("--epochs", type=int, default=12)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("eval-extrinsic", help="baseline vs augmented classifiers")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--inventory", required=True)
    p.add_argument("--model", action="append", required=True,
                   help="model directory (repeatable)")
    p.add_argument("--per-phrase", type=int, default=10, dest="per_phrase")
    p.add_argument("--epochs", type=int, default=12)
    p.add_argument("--resamples", type=int, default=1000)
    p.set_defaults(func=cmd_eval_extrinsic)

    p = sub.add_parser("sweep", help="hyperparameter sweep with resumable store")
    common(p, with_out=False)
    p.add_argument("--corpus", required=True)
    p.add_argument("--inventory", required=True)
    p.add_argument("--store")
    p.add_argument("--max-runs", type=int, default=40, dest="max_runs")
    p.add_argument("--per-phrase", type=int, default=10, dest="per_phrase")
    p.add_argument("--classifier-epochs", type=int, default=8, dest="classifier_epochs")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--no-extrinsic", action="store_true", dest="no_extrinsic")
    _add_generator_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("analyze", help="intrinsic-vs-extrinsic OLS study")
    common(p)
    p.add_argument("--store", required=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("plot", help="export a scatter CSV + SVG")
    common(p)
    p.add_argument("--store", required=True)
    p.add_argument("--x", required=True)
    p.add_argument("--y", required=True)
    p.set_defaults(func=cmd_plot)

    return parser


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config_file(parser, argv)
        args = parser.parse_args(argv)
        return args.func(args)
    except (CliError, CorpusError, ValueError, KeyError, OSError) as err:
        message = str(err).replace("\n", " ")
        print(f"error: {message}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
