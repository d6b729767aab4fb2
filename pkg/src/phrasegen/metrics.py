"""Intrinsic evaluation: corpus BLEU-4 against signature-partitioned
reference pools, slot carry-over, unique/match rates, and BLEU-based
signature assignment.

Conventions pinned here (the measurement contract of this repo):
  * corpus_bleu4 is unsmoothed corpus-level BLEU: clipped n-gram counts are
    pooled over all hypotheses before the geometric mean, references are
    the same-signature pool, brevity penalty uses the closest reference
    length (ties resolve to the shorter one).
  * LEAVE_ONE_OUT removes one occurrence of the hypothesis itself (self
    comparisons, used for diversity) or of the generator's input phrase
    (posterior sampling) from the hypothesis's reference pool.
  * sentence_bleu4_smoothed (signature assignment only) add-1 smooths the
    n >= 2 precisions and floors a zero unigram precision at 1/(2*len) so
    fully disjoint candidates still rank below overlapping ones.

All functions are pure; reference sets map Signature -> list of token
tuples.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, fields
from enum import Enum

from .corpus import Signature, TokenKind


class BleuMode(Enum):
    STANDARD = "standard"
    LEAVE_ONE_OUT = "leave_one_out"


def ngram_counts(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _closest_ref_length(ref_lengths, hyp_len):
    return min(ref_lengths, key=lambda r: (abs(r - hyp_len), r))


def corpus_bleu4_detail(hypotheses, refs, mode=BleuMode.STANDARD, inputs=None):
    """Corpus BLEU-4 plus scored/excluded counts.

    hypotheses: list of (tokens, Signature); refs: Signature -> [tokens].
    Hypotheses whose signature has no references (or whose pool becomes
    empty after leave-one-out removal) are excluded and counted.
    """
    if inputs is not None and len(inputs) != len(hypotheses):
        raise ValueError("inputs must align one-to-one with hypotheses")
    numer = [0, 0, 0, 0]
    denom = [0, 0, 0, 0]
    hyp_len_sum = 0
    ref_len_sum = 0
    scored = 0
    excluded = 0
    for idx, (hyp, sig) in enumerate(hypotheses):
        hyp = tuple(hyp)
        pool = [tuple(r) for r in refs.get(sig, ())]
        if mode is BleuMode.LEAVE_ONE_OUT:
            drop = tuple(inputs[idx]) if inputs is not None else hyp
            if drop in pool:
                pool.remove(drop)
        if not pool:
            excluded += 1
            continue
        scored += 1
        hyp_len_sum += len(hyp)
        ref_len_sum += _closest_ref_length([len(r) for r in pool], len(hyp))
        for n in range(1, 5):
            counts = ngram_counts(hyp, n)
            if not counts:
                continue
            max_ref = Counter()
            for ref in pool:
                for gram, c in ngram_counts(ref, n).items():
                    if c > max_ref[gram]:
                        max_ref[gram] = c
            for gram, c in counts.items():
                numer[n - 1] += min(c, max_ref[gram])
                denom[n - 1] += c
    if scored == 0:
        raise ValueError("no hypothesis had a nonempty reference pool")
    if any(d == 0 for d in denom) or any(m == 0 for m in numer):
        score = 0.0
    else:
        log_p = sum(math.log(numer[i] / denom[i]) for i in range(4)) / 4.0
        bp = 1.0 if hyp_len_sum >= ref_len_sum else math.exp(1.0 - ref_len_sum / hyp_len_sum)
        score = bp * math.exp(log_p)
    return score, scored, excluded


def corpus_bleu4(hypotheses, refs, mode=BleuMode.STANDARD, inputs=None):
    score, _, _ = corpus_bleu4_detail(hypotheses, refs, mode, inputs)
    return score


def sentence_bleu4_smoothed(hyp, refs):
    """Smoothed sentence BLEU-4 used only to rank signatures."""
    hyp = tuple(hyp)
    pool = [tuple(r) for r in refs]
    if not pool:
        raise ValueError("sentence_bleu4_smoothed requires at least one reference")
    if not hyp:
        return 0.0
    log_p = 0.0
    for n in range(1, 5):
        counts = ngram_counts(hyp, n)
        total = len(hyp) - n + 1 if len(hyp) >= n else 0
        max_ref = Counter()
        for ref in pool:
            for gram, c in ngram_counts(ref, n).items():
                if c > max_ref[gram]:
                    max_ref[gram] = c
        match = sum(min(c, max_ref[gram]) for gram, c in counts.items())
        if n == 1:
            p = match / total if match > 0 else 1.0 / (2.0 * total)
        else:
            p = (match + 1.0) / (total + 1.0)
        log_p += math.log(p)
    ref_len = _closest_ref_length([len(r) for r in pool], len(hyp))
    bp = 1.0 if len(hyp) >= ref_len else math.exp(1.0 - ref_len / len(hyp))
    return bp * math.exp(log_p / 4.0)


def assign_signature(hyp, train_refs):
    """Signature whose references score the hypothesis highest; ties break
    by lexicographic signature order."""
    if not train_refs:
        raise ValueError("assign_signature requires a nonempty reference set")
    best_sig = None
    best_score = -1.0
    for sig in sorted(train_refs, key=lambda s: s.key()):
        score = sentence_bleu4_smoothed(hyp, train_refs[sig])
        if score > best_score:
            best_sig = sig
            best_score = score
    return best_sig


def slot_carry_over(hypotheses, slot_inventory):
    """Fraction of hypotheses whose slot-token multiset equals the target
    signature's slot types exactly."""
    if not hypotheses:
        return 0.0
    hits = 0
    for hyp, sig in hypotheses:
        slots = sorted(t for t in hyp if t in slot_inventory)
        if tuple(slots) == sig.slot_types:
            hits += 1
    return hits / len(hypotheses)


def unique_rate(hypotheses):
    """Distinct sequences within each target-signature group over total."""
    if not hypotheses:
        return 0.0
    groups = {}
    for hyp, sig in hypotheses:
        groups.setdefault(sig, set()).add(tuple(hyp))
    distinct = sum(len(g) for g in groups.values())
    return distinct / len(hypotheses)


def match_rate(hypotheses, train_refs):
    """Fraction of hypotheses appearing verbatim in the same-signature
    train references."""
    if not hypotheses:
        return 0.0
    pools = {sig: {tuple(r) for r in rs} for sig, rs in train_refs.items()}
    hits = 0
    for hyp, sig in hypotheses:
        if tuple(hyp) in pools.get(sig, ()):
            hits += 1
    return hits / len(hypotheses)


@dataclass(frozen=True)
class IntrinsicReport:
    """The six-number accuracy/diversity/novelty bundle plus bookkeeping."""

    accuracy_bleu4: float
    accuracy_slot_co: float
    diversity_one_minus_bleu4: float
    diversity_unique_rate: float
    novelty_one_minus_bleu4: float
    novelty_one_minus_match: float
    n_hypotheses: int = 0
    excluded_fraction: float = 0.0

    METRICS = (
        "accuracy_bleu4",
        "accuracy_slot_co",
        "diversity_one_minus_bleu4",
        "diversity_unique_rate",
        "novelty_one_minus_bleu4",
        "novelty_one_minus_match",
    )

    def __post_init__(self):
        for name in self.METRICS:
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name}={v} outside [0, 1]")

    def metric(self, name):
        """Look up a metric by its dotted report name, e.g. accuracy.bleu4."""
        key = name.replace(".", "_")
        if key not in self.METRICS:
            raise KeyError(f"unknown metric {name!r}; known: {sorted(self.METRICS)}")
        return getattr(self, key)

    def to_text(self):
        lines = []
        for f in fields(self):
            lines.append(f"{f.name} = {getattr(self, f.name)!r}")
        return "".join(line + "\n" for line in lines)

    @classmethod
    def from_text(cls, text):
        values = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            key, _, raw = line.partition(" = ")
            key = key.strip()
            values[key] = int(raw) if key == "n_hypotheses" else float(raw)
        return cls(**values)


def references(corpus, split):
    """Signature -> surface-token lists for one split of a corpus."""
    refs = {}
    for phrase in corpus.phrases(split):
        refs.setdefault(phrase.signature, []).append(phrase.surface())
    return refs


def intrinsic_report(
    generated,
    train_refs,
    test_refs,
    slot_inventory,
    inputs_used=None,
    assign_uncontrolled=False,
):
    """Score a generated set on all six intrinsic metrics.

    generated: list of (tokens, Signature or None). Entries without a
    target signature (uncontrolled prior sampling) require
    `assign_uncontrolled`, which routes them through assign_signature
    against the train references. `inputs_used`, when given, aligns with
    `generated` and excludes each entry's input phrase from its accuracy
    and novelty reference pools.
    """
    if not generated:
        raise ValueError("intrinsic_report requires a nonempty generated set")
    hyps = []
    for hyp, sig in generated:
        hyp = tuple(hyp)
        if sig is None:
            if not assign_uncontrolled:
                raise ValueError(
                    "hypothesis without target signature; enable assign_uncontrolled"
                )
            sig = assign_signature(hyp, train_refs)
        hyps.append((hyp, sig))
    acc_mode = BleuMode.LEAVE_ONE_OUT if inputs_used is not None else BleuMode.STANDARD
    acc_bleu, scored, excluded = corpus_bleu4_detail(hyps, test_refs, acc_mode, inputs_used)
    nov_bleu, _, _ = corpus_bleu4_detail(hyps, train_refs, acc_mode, inputs_used)
    self_refs = {}
    for hyp, sig in hyps:
        self_refs.setdefault(sig, []).append(hyp)
    div_bleu, _, _ = corpus_bleu4_detail(hyps, self_refs, BleuMode.LEAVE_ONE_OUT)
    return IntrinsicReport(
        accuracy_bleu4=acc_bleu,
        accuracy_slot_co=slot_carry_over(hyps, slot_inventory),
        diversity_one_minus_bleu4=1.0 - div_bleu,
        diversity_unique_rate=unique_rate(hyps),
        novelty_one_minus_bleu4=1.0 - nov_bleu,
        novelty_one_minus_match=1.0 - match_rate(hyps, train_refs),
        n_hypotheses=len(hyps),
        excluded_fraction=excluded / (scored + excluded),
    )


def phrase_hypotheses(corpus, split):
    """A split's phrases viewed as (tokens, signature) hypotheses."""
    return [(p.surface(), p.signature) for p in corpus.phrases(split)]


def slot_tokens(phrase):
    return [t.surface for t in phrase.tokens if t.kind is TokenKind.SLOT]
