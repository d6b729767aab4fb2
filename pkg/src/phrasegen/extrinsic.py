"""Extrinsic intent-classification harness.

Trains a bidirectional GRU classifier over intents (domain + intent,
slots dropped), compares a baseline trained on train+dev against arms
augmented with generated phrases, and reports macro-F1 deltas with a
paired bootstrap significance test.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import layers
from .corpus import PAD_ID, RESERVED, Split, Vocabulary
from .generators import GenerationRequest, ModelKind, SamplingStrategy, generate


@dataclass(frozen=True)
class IntentLabel:
    domain: str
    intent: str

    @classmethod
    def of(cls, signature):
        return cls(signature.domain, signature.intent)

    def key(self):
        return (self.domain, self.intent)


@dataclass
class ClassifierConfig:
    embed_dim: int = 24
    hidden_dim: int = 32
    epochs: int = 12
    learning_rate: float = 2e-3
    batch_size: int = 32
    seed: int = 0
    init_scale: float = 0.08

    def __post_init__(self):
        for name in ("embed_dim", "hidden_dim", "epochs", "learning_rate", "batch_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


class Classifier:
    """Bidirectional GRU encoder, concatenated final states, softmax."""

    def __init__(self, vocab, labels, cfg):
        self.vocab = vocab
        self.labels = tuple(labels)
        self.label_index = {l: i for i, l in enumerate(self.labels)}
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.params = ad.ParamSet()
        self.emb = layers.Embedding(self.params, "emb", len(vocab), cfg.embed_dim, rng,
                                    cfg.init_scale)
        self.encoder = layers.BiGruEncoder(self.params, "enc", cfg.embed_dim,
                                           cfg.hidden_dim, rng, cfg.init_scale)
        self.out = layers.Linear(self.params, "out", 2 * cfg.hidden_dim, len(self.labels),
                                 rng, cfg.init_scale)

    def logits(self, ids, mask):
        steps = [self.emb(ids[:, t]) for t in range(ids.shape[1])]
        return self.out(self.encoder.final_state(steps, mask))

    def predict_tokens(self, token_seqs):
        """Predict an IntentLabel for each token sequence."""
        preds = []
        for start in range(0, len(token_seqs), 256):
            chunk = token_seqs[start:start + 256]
            ids, mask = layers.pad_sequences(
                [self.vocab.encode(t) for t in chunk], PAD_ID
            )
            arg = np.argmax(self.logits(ids, mask).data, axis=1)
            preds.extend(self.labels[i] for i in arg)
        return preds


def train_classifier(examples, cfg=None):
    """Train on (tokens, IntentLabel) pairs; deterministic per seed."""
    cfg = cfg or ClassifierConfig()
    if not examples:
        raise ValueError("no training examples")
    labels = sorted({label for _, label in examples}, key=lambda l: l.key())
    if len(labels) < 2:
        raise ValueError("intent classification needs at least 2 intents")
    surfaces = sorted({t for tokens, _ in examples for t in tokens})
    vocab = Vocabulary(RESERVED + tuple(s for s in surfaces if s not in RESERVED))
    clf = Classifier(vocab, labels, cfg)
    ids_all = [tuple(vocab.encode(tokens)) for tokens, _ in examples]
    gold = np.array([clf.label_index[label] for _, label in examples], dtype=np.intp)
    rng = np.random.default_rng(cfg.seed)
    n = len(examples)
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            ids, mask = layers.pad_sequences([ids_all[i] for i in idx], PAD_ID)
            with ad.Tape() as tape:
                logits = clf.logits(ids, mask)
                hot = ad.constant(layers.one_hot(gold[idx], len(labels)))
                loss = ad.scale(ad.sum(ad.mul(ad.log(ad.softmax(logits)), hot)),
                                -1.0 / len(idx))
                ad.backward(tape, loss)
            ad.clip_global_norm(clf.params, 5.0)
            ad.adam_step(clf.params, lr=cfg.learning_rate)
            clf.params.zero_grad()
    return clf


def macro_f1(predictions, gold):
    """Unweighted mean F1 over the intents present in the gold labels.

    Intents with no gold and no predicted positives are excluded; an
    intent whose precision or recall denominator is zero scores F1 = 0.
    """
    if len(predictions) != len(gold):
        raise ValueError("predictions and gold must have equal length")
    if not gold:
        raise ValueError("macro_f1 on empty input")
    classes = sorted({g for g in gold}, key=lambda l: l.key())
    scores = []
    for c in classes:
        tp = sum(1 for p, g in zip(predictions, gold) if p == c and g == c)
        fp = sum(1 for p, g in zip(predictions, gold) if p == c and g != c)
        fn = sum(1 for p, g in zip(predictions, gold) if p != c and g == c)
        if tp == 0 and (tp + fp == 0 or tp + fn == 0):
            scores.append(0.0)
            continue
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        scores.append(0.0 if precision + recall == 0 else
                      2 * precision * recall / (precision + recall))
    return float(np.mean(scores))


def paired_significance(baseline_preds, augmented_preds, gold, n_resamples=1000, seed=0):
    """One-sided paired bootstrap p-value for "augmented beats baseline".

    Resamples test items with replacement and counts resamples where the
    macro-F1 delta is <= 0; p = (count + 1) / (n_resamples + 1).
    """
    if n_resamples < 1000:
        raise ValueError("n_resamples must be >= 1000")
    n = len(gold)
    if not (len(baseline_preds) == len(augmented_preds) == n) or n == 0:
        raise ValueError("prediction vectors and gold must share a nonzero length")
    rng = np.random.default_rng(seed)
    at_most_zero = 0
    for _ in range(n_resamples):
        idx = rng.integers(0, n, size=n)
        g = [gold[i] for i in idx]
        delta = (macro_f1([augmented_preds[i] for i in idx], g)
                 - macro_f1([baseline_preds[i] for i in idx], g))
        if delta <= 0:
            at_most_zero += 1
    return (at_most_zero + 1) / (n_resamples + 1)


@dataclass
class ExperimentArm:
    name: str
    macro_f1: float
    delta: float
    p_value: float | None
    n_synthetic: int
    duplicate_fraction: float
    predictions: list = field(default_factory=list, repr=False)


@dataclass
class ExperimentResult:
    baseline_f1: float
    baseline_predictions: list = field(default_factory=list, repr=False)
    gold: list = field(default_factory=list, repr=False)
    arms: list = field(default_factory=list)

    def to_text(self):
        lines = [f"{'arm':24s}\tmacro_f1\tdelta\tp_value\tn_synth\tdup_frac"]
        lines.append(f"{'baseline':24s}\t{self.baseline_f1:.4f}\t{0.0:+.4f}\t-\t0\t-")
        for arm in self.arms:
            p = "-" if arm.p_value is None else f"{arm.p_value:.4f}"
            lines.append(
                f"{arm.name:24s}\t{arm.macro_f1:.4f}\t{arm.delta:+.4f}\t{p}"
                f"\t{arm.n_synthetic}\t{arm.duplicate_fraction:.2f}"
            )
        return "".join(line + "\n" for line in lines)


def intent_examples(corpus, splits):
    out = []
    for split in splits:
        for p in corpus.phrases(split):
            out.append((p.surface(), IntentLabel.of(p.signature)))
    return out


def synthesize_for_dev(model, corpus, per_phrase=10, seed=0):
    """Generate per-dev-phrase synthetic examples labeled by target intent.

    CVAE-family models sample the prior conditioned on the dev phrase's
    signature; other models feed the dev phrase through the posterior (S2S
    included). Labels always come from the requested target signature.
    """
    dev = corpus.phrases(Split.DEV)
    prior_ok = (model.objective.value == "recon"
                and model.kind is not ModelKind.S2S
                and model.kind is not ModelKind.VAE)
    strategy = SamplingStrategy.PRIOR if prior_ok else SamplingStrategy.POSTERIOR
    out = []
    for i, phrase in enumerate(dev):
        if strategy is SamplingStrategy.PRIOR:
            request = GenerationRequest(strategy=strategy, count=per_phrase,
                                        target=phrase.signature, seed=seed + i)
        else:
            request = GenerationRequest(strategy=strategy, count=per_phrase,
                                        input_phrase=phrase, seed=seed + i)
        for tokens in generate(model, request):
            if tokens:
                out.append((tokens, IntentLabel.of(phrase.signature)))
    return out


def augmentation_experiment(corpus, generator_models, cfg=None, per_phrase=10,
                            seed=0, n_resamples=1000):
    """Baseline (train+dev) vs augmented (train+dev+synthetic) classifiers.

    `generator_models` is a list of (name, model or synthetic example list);
    passing a list directly supports control arms. All arms share the
    classifier seed, so an empty synthetic set reproduces the baseline
    exactly. Evaluation is on the test split.
    """
    cfg = cfg or ClassifierConfig()
    base_examples = intent_examples(corpus, (Split.TRAIN, Split.DEV))
    test = corpus.phrases(Split.TEST)
    test_tokens = [p.surface() for p in test]
    gold = [IntentLabel.of(p.signature) for p in test]
    baseline = train_classifier(base_examples, cfg)
    base_preds = baseline.predict_tokens(test_tokens)
    base_f1 = macro_f1(base_preds, gold)
    result = ExperimentResult(baseline_f1=base_f1, baseline_predictions=base_preds,
                              gold=gold)
    seen = {tokens for tokens, _ in base_examples}
    for name, source in generator_models:
        if isinstance(source, list):
            synthetic = source
        else:
            synthetic = synthesize_for_dev(source, corpus, per_phrase=per_phrase, seed=seed)
        dup = (sum(1 for tokens, _ in synthetic if tokens in seen) / len(synthetic)
               if synthetic else 1.0)
        arm_clf = train_classifier(base_examples + synthetic, cfg)
        arm_preds = arm_clf.predict_tokens(test_tokens)
        arm_f1 = macro_f1(arm_preds, gold)
        p = None
        if synthetic:
            p = paired_significance(base_preds, arm_preds, gold,
                                    n_resamples=n_resamples, seed=seed)
        result.arms.append(ExperimentArm(
            name=name, macro_f1=arm_f1, delta=arm_f1 - base_f1, p_value=p,
            n_synthetic=len(synthetic), duplicate_fraction=dup,
            predictions=arm_preds,
        ))
    return result
