"""Carrier-phrase data model, ingestion, filtering, splitting, and a
synthetic template-grammar corpus generator.

A carrier phrase is a delexicalized token sequence ("is movie_title
suitable for children") whose entity values have been replaced by slot
types. The triple (domain, intent, sorted slot types) is the phrase's
signature and acts as the control label for generation.

File formats (all UTF-8, line-delimited):
  corpus:    domain TAB intent TAB slots(comma) TAB tokens(space) TAB split
  inventory: one slot-type name per line
  grammar:   domain TAB intent TAB slots(comma) TAB template
Template alternation: `( red | blue | )` chooses one alternative per group
(an empty alternative makes the group optional); a bare token `play|start`
is shorthand for a single-token group.
"""

from __future__ import annotations

import itertools
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class CorpusError(ValueError):
    pass


class TokenKind(Enum):
    WORD = "word"
    SLOT = "slot"


@dataclass(frozen=True)
class Token:
    surface: str
    kind: TokenKind

    def __post_init__(self):
        if not self.surface:
            raise CorpusError("token surface must be nonempty")
        if self.kind is TokenKind.WORD and any(c.isspace() for c in self.surface):
            raise CorpusError(f"word token contains whitespace: {self.surface!r}")


def classify_token(surface, slot_inventory):
    kind = TokenKind.SLOT if surface in slot_inventory else TokenKind.WORD
    return Token(surface, kind)


@dataclass(frozen=True)
class Signature:
    """Functionality category: domain, intent, and sorted slot-type multiset."""

    domain: str
    intent: str
    slot_types: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "slot_types", tuple(self.slot_types))
        if list(self.slot_types) != sorted(self.slot_types):
            raise CorpusError(f"slot_types must be sorted: {self.slot_types}")

    @classmethod
    def make(cls, domain, intent, slot_types=()):
        return cls(domain, intent, tuple(sorted(slot_types)))

    def key(self):
        return (self.domain, self.intent, self.slot_types)

    def intent_label(self):
        return (self.domain, self.intent)

    def to_flag(self):
        return f"{self.domain}|{self.intent}|{','.join(self.slot_types)}"

    @classmethod
    def from_flag(cls, text):
        parts = text.split("|")
        if len(parts) != 3:
            raise CorpusError(f"signature flag must be domain|intent|slots: {text!r}")
        domain, intent, slots = parts
        slot_types = tuple(s for s in slots.split(",") if s) if slots else ()
        return cls.make(domain, intent, slot_types)


@dataclass(frozen=True)
class CarrierPhrase:
    tokens: tuple
    signature: Signature

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if len(self.tokens) < 1:
            raise CorpusError("carrier phrase must have at least one token")
        slots = sorted(t.surface for t in self.tokens if t.kind is TokenKind.SLOT)
        if tuple(slots) != self.signature.slot_types:
            raise CorpusError(
                f"slot tokens {slots} do not match signature slots "
                f"{list(self.signature.slot_types)} for {self.signature.to_flag()}"
            )

    def surface(self):
        return tuple(t.surface for t in self.tokens)


class Split(Enum):
    TRAIN = "train"
    DEV = "dev"
    TEST = "test"


@dataclass(frozen=True)
class Corpus:
    """Immutable list of (phrase, split) entries."""

    entries: tuple

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))

    def __len__(self):
        return len(self.entries)

    def phrases(self, split=None):
        if split is None:
            return [p for p, _ in self.entries]
        return [p for p, s in self.entries if s is split]

    def signatures(self, split=None):
        seen = {}
        for p, s in self.entries:
            if split is None or s is split:
                seen.setdefault(p.signature.key(), p.signature)
        return [seen[k] for k in sorted(seen)]

    def slot_inventory(self):
        names = set()
        for p, _ in self.entries:
            names.update(p.signature.slot_types)
        return frozenset(names)

    def by_signature(self, split=None):
        groups = {}
        for p, s in self.entries:
            if split is None or s is split:
                groups.setdefault(p.signature, []).append(p)
        return groups


# ---------------------------------------------------------------------------
# operations


def delexicalize(raw_tokens, slot_lexicon):
    """Replace slot-value token spans with their slot types.

    Matching is longest-first, left-to-right, case-insensitive; equal-length
    overlaps resolve to the lexicographically smaller slot-type name.
    Non-matching tokens pass through lowercased.
    """
    if not raw_tokens:
        raise CorpusError("cannot delexicalize an empty phrase")
    lexicon = {}
    for span, slot_type in slot_lexicon.items():
        span = tuple(w.lower() for w in span)
        if not span:
            raise CorpusError("slot lexicon spans must be nonempty")
        lexicon.setdefault(span, slot_type)
        if slot_type < lexicon[span]:
            lexicon[span] = slot_type
    words = [w.lower() for w in raw_tokens]
    out = []
    i = 0
    n = len(words)
    max_len = max((len(k) for k in lexicon), default=0)
    while i < n:
        best = None  # (span_len, slot_type)
        for span_len in range(min(max_len, n - i), 0, -1):
            candidate = tuple(words[i:i + span_len])
            slot_type = lexicon.get(candidate)
            if slot_type is not None:
                best = (span_len, slot_type)
                break
        if best is None:
            out.append(Token(words[i], TokenKind.WORD))
            i += 1
        else:
            out.append(Token(best[1], TokenKind.SLOT))
            i += best[0]
    return out


def frequency_filter(corpus, min_count, min_per_signature):
    """Drop rare carrier phrases, then signatures left with too few phrases.

    A phrase's frequency is the number of occurrences of its
    (surface, signature) pair in the raw corpus; signatures are kept only
    when at least `min_per_signature` distinct surfaces survive.
    """
    if min_count < 1 or min_per_signature < 1:
        raise CorpusError("min_count and min_per_signature must be >= 1")
    freq = Counter((p.surface(), p.signature) for p, _ in corpus.entries)
    kept = [(p, s) for p, s in corpus.entries if freq[(p.surface(), p.signature)] >= min_count]
    distinct = {}
    for p, _ in kept:
        distinct.setdefault(p.signature, set()).add(p.surface())
    kept = [(p, s) for p, s in kept if len(distinct[p.signature]) >= min_per_signature]
    if not kept:
        raise CorpusError("corpus exhausted by filtering")
    return Corpus(tuple(kept))


def stratified_split(corpus, ratios, seed, min_split_size=4):
    """Assign splits per signature according to `ratios`.

    Signatures with fewer than `min_split_size` phrases go entirely to
    train. Counts use largest-remainder rounding (ties favor train, then
    dev). Deterministic for a given seed.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise CorpusError("ratios must be three nonnegative numbers")
    if abs(1.0 - (ratios[0] + ratios[1] + ratios[2])) > 1e-9:
        raise CorpusError(f"ratios must sum to 1, got {ratios}")
    rng = np.random.default_rng(seed)
    groups = {}
    for p, _ in corpus.entries:
        groups.setdefault(p.signature.key(), []).append(p)
    entries = []
    for key in sorted(groups):
        phrases = groups[key]
        n = len(phrases)
        if n < min_split_size:
            entries.extend((p, Split.TRAIN) for p in phrases)
            continue
        order = rng.permutation(n)
        counts = _largest_remainder(n, ratios)
        cursor = 0
        for split, count in zip((Split.TRAIN, Split.DEV, Split.TEST), counts):
            for idx in order[cursor:cursor + count]:
                entries.append((phrases[idx], split))
            cursor += count
    return Corpus(tuple(entries))


def _largest_remainder(n, ratios):
    exact = [n * r for r in ratios]
    counts = [int(x) for x in exact]
    leftover = n - sum(counts)
    remainders = sorted(
        range(3), key=lambda i: (-(exact[i] - counts[i]), i)
    )
    for i in range(leftover):
        counts[remainders[i]] += 1
    return counts


def paraphrase_pairs(corpus):
    """All ordered pairs of distinct train phrases sharing a signature."""
    pairs = []
    for sig in corpus.signatures(Split.TRAIN):
        phrases = [p for p in corpus.phrases(Split.TRAIN) if p.signature == sig]
        for i, a in enumerate(phrases):
            for j, b in enumerate(phrases):
                if i != j:
                    pairs.append((a, b))
    return pairs


def reconstruction_pairs(corpus):
    """Identity (input, output) pairs over the train split."""
    return [(p, p) for p in corpus.phrases(Split.TRAIN)]


# ---------------------------------------------------------------------------
# vocabulary

PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3
RESERVED = ("<pad>", "<bos>", "<eos>", "<unk>")


class Vocabulary:
    """Bijection between train-split token surfaces and contiguous ids.

    Ids 0..3 are reserved for PAD/BOS/EOS/UNK; out-of-vocabulary tokens map
    to UNK when encoding.
    """

    def __init__(self, tokens):
        tokens = tuple(tokens)
        if tokens[:4] != RESERVED:
            raise CorpusError("vocabulary must start with the reserved symbols")
        self.tokens = tokens
        self._index = {t: i for i, t in enumerate(tokens)}
        if len(self._index) != len(tokens):
            raise CorpusError("vocabulary tokens must be unique")

    def __len__(self):
        return len(self.tokens)

    def encode(self, surfaces):
        return [self._index.get(s, UNK_ID) for s in surfaces]

    def decode(self, ids):
        return [self.tokens[i] for i in ids]

    def id_of(self, surface):
        return self._index.get(surface, UNK_ID)

    def digest(self):
        import hashlib

        return hashlib.sha256("\n".join(self.tokens).encode("utf-8")).hexdigest()


def build_vocab(corpus):
    train = corpus.phrases(Split.TRAIN)
    if not train:
        raise CorpusError("cannot build a vocabulary from an empty train split")
    surfaces = sorted({t.surface for p in train for t in p.tokens})
    for r in RESERVED:
        if r in surfaces:
            raise CorpusError(f"corpus token collides with reserved symbol {r}")
    return Vocabulary(RESERVED + tuple(surfaces))


# ---------------------------------------------------------------------------
# serialization


def save_corpus(corpus, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(corpus_to_text(corpus))


def corpus_to_text(corpus):
    lines = []
    for p, s in corpus.entries:
        sig = p.signature
        lines.append(
            "\t".join(
                (sig.domain, sig.intent, ",".join(sig.slot_types), " ".join(p.surface()), s.value)
            )
        )
    return "".join(line + "\n" for line in lines)


def load_corpus(path, slot_inventory):
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    return corpus_from_text(text, slot_inventory, origin=str(path))


def corpus_from_text(text, slot_inventory, origin="<string>"):
    entries = []
    split_by_name = {s.value: s for s in Split}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 5:
            raise CorpusError(f"{origin}:{lineno}: expected 5 tab-separated fields")
        domain, intent, slots, tokens, split_name = parts
        if split_name not in split_by_name:
            raise CorpusError(f"{origin}:{lineno}: unknown split {split_name!r}")
        slot_types = tuple(s for s in slots.split(",") if s)
        sig = Signature.make(domain, intent, slot_types)
        toks = tuple(classify_token(t, slot_inventory) for t in tokens.split(" ") if t)
        try:
            phrase = CarrierPhrase(toks, sig)
        except CorpusError as err:
            raise CorpusError(f"{origin}:{lineno}: {err}")
        entries.append((phrase, split_by_name[split_name]))
    if not entries:
        raise CorpusError(f"{origin}: no phrases found")
    return Corpus(tuple(entries))


def save_inventory(slot_inventory, path):
    with open(path, "w", encoding="utf-8") as fh:
        for name in sorted(slot_inventory):
            fh.write(name + "\n")


def load_inventory(path):
    with open(path, "r", encoding="utf-8") as fh:
        return frozenset(line.strip() for line in fh if line.strip())


# ---------------------------------------------------------------------------
# template grammar


@dataclass(frozen=True)
class Template:
    """Token sequence with alternation groups; each group contributes one
    alternative (possibly empty) per expansion."""

    segments: tuple  # tuple of groups; group = tuple of alternatives; alternative = tuple of tokens
    source: str = ""

    def expand(self):
        seen = set()
        out = []
        for combo in itertools.product(*self.segments):
            phrase = tuple(itertools.chain.from_iterable(combo))
            if phrase and phrase not in seen:
                seen.add(phrase)
                out.append(phrase)
        return out


def parse_template(text):
    tokens = text.split()
    segments = []
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if tok == "(":
            j = i + 1
            alts, current = [], []
            while j < len(tokens) and tokens[j] != ")":
                if tokens[j] == "|":
                    alts.append(tuple(current))
                    current = []
                else:
                    current.append(tokens[j])
                j += 1
            if j == len(tokens):
                raise CorpusError(f"unclosed alternation group in template: {text!r}")
            alts.append(tuple(current))
            segments.append(tuple(alts))
            i = j + 1
        elif "|" in tok:
            segments.append(tuple((alt,) if alt else () for alt in tok.split("|")))
            i += 1
        else:
            segments.append(((tok,),))
            i += 1
    if not segments:
        raise CorpusError("empty template")
    return Template(tuple(segments), source=text)


@dataclass(frozen=True)
class GrammarSpec:
    """Per-signature templates plus the registered slot-type inventory."""

    rules: tuple  # tuple of (Signature, tuple of Template)
    slot_inventory: frozenset
    per_signature: int | None = None

    def __post_init__(self):
        for sig, templates in self.rules:
            for slot in sig.slot_types:
                if slot not in self.slot_inventory:
                    raise CorpusError(
                        f"{sig.to_flag()}: slot type {slot!r} is not registered"
                    )
            for tpl in templates:
                for group in tpl.segments:
                    for alt in group:
                        for tok in alt:
                            if tok in self.slot_inventory and tok not in sig.slot_types:
                                raise CorpusError(
                                    f"{sig.to_flag()}: template uses slot {tok!r} "
                                    f"outside the signature"
                                )

    def signatures(self):
        return [sig for sig, _ in self.rules]


def generate_synthetic_corpus(spec, seed, per_signature=None):
    """Expand every rule and sample phrases per signature, deterministically.

    All phrases land in the train split; apply `stratified_split` afterwards.
    Expansions that violate the signature's slot multiset raise.
    """
    if per_signature is None:
        per_signature = spec.per_signature
    rng = np.random.default_rng(seed)
    entries = []
    for sig, templates in sorted(spec.rules, key=lambda r: r[0].key()):
        seen = set()
        surfaces = []
        for tpl in templates:
            for surface in tpl.expand():
                if surface not in seen:
                    seen.add(surface)
                    surfaces.append(surface)
        if not surfaces:
            raise CorpusError(f"{sig.to_flag()}: templates expand to no phrases")
        if per_signature is not None and len(surfaces) > per_signature:
            idx = sorted(rng.choice(len(surfaces), size=per_signature, replace=False))
            surfaces = [surfaces[i] for i in idx]
        for surface in surfaces:
            tokens = tuple(classify_token(t, spec.slot_inventory) for t in surface)
            entries.append((CarrierPhrase(tokens, sig), Split.TRAIN))
    return Corpus(tuple(entries))


def save_grammar(spec, path):
    with open(path, "w", encoding="utf-8") as fh:
        for sig, templates in spec.rules:
            for tpl in templates:
                fh.write(
                    "\t".join(
                        (sig.domain, sig.intent, ",".join(sig.slot_types), tpl.source)
                    )
                    + "\n"
                )


def load_grammar(path, slot_inventory, per_signature=None):
    rules = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 4:
                raise CorpusError(f"{path}:{lineno}: expected 4 tab-separated fields")
            domain, intent, slots, template = parts
            sig = Signature.make(domain, intent, tuple(s for s in slots.split(",") if s))
            rules.setdefault(sig, []).append(parse_template(template))
    ordered = tuple((sig, tuple(tpls)) for sig, tpls in rules.items())
    return GrammarSpec(ordered, frozenset(slot_inventory), per_signature=per_signature)
