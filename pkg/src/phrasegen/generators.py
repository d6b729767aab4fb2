"""Generator model families, their training objectives, and sampling.

Five families share one GRU encoder-decoder skeleton:
  S2S        encoder + bilinear attention + decoder, paraphrase pairs only
  VAE        encoder -> (mu, logvar) -> z, z concatenated to every decoder step
  CVAE       as VAE plus the target signature one-hot at every decoder step
  VAE_DISC   VAE with a signature code slot, aligned only by a discriminator
             through wake-sleep fine-tuning
  CVAE_DISC  CVAE first, then the same wake-sleep fine-tuning

Training uses teacher forcing with word dropout on decoder inputs, a
linearly annealed KL weight, Adam, and global-norm clipping. Generation is
temperature sampling until EOS or the decode cap; PAD and BOS are masked
out of the sampling distribution. All randomness flows from seeds passed
in explicitly; nothing touches global RNG state.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np

from . import autodiff as ad
from . import layers
from .corpus import (
    BOS_ID,
    CorpusError,
    EOS_ID,
    PAD_ID,
    Signature,
    Split,
    UNK_ID,
    Vocabulary,
    build_vocab,
    paraphrase_pairs,
    reconstruction_pairs,
)


class ModelKind(Enum):
    S2S = "s2s"
    VAE = "vae"
    CVAE = "cvae"
    VAE_DISC = "vae_disc"
    CVAE_DISC = "cvae_disc"


class TrainingObjective(Enum):
    PARAPHRASE = "para"
    RECONSTRUCTION = "recon"


class SamplingStrategy(Enum):
    PRIOR = "prior"
    POSTERIOR = "post"


class TrainingDivergedError(RuntimeError):
    def __init__(self, step):
        super().__init__(f"training loss became non-finite at step {step}")
        self.step = step


_LATENT_KINDS = (ModelKind.VAE, ModelKind.CVAE, ModelKind.VAE_DISC, ModelKind.CVAE_DISC)
_CODE_KINDS = (ModelKind.CVAE, ModelKind.VAE_DISC, ModelKind.CVAE_DISC)


@dataclass
class GeneratorConfig:
    embed_dim: int = 24
    hidden_dim: int = 64
    latent_dim: int = 16
    kl_anneal_steps: int = 500  # 0 disables annealing (weight 1 throughout)
    word_dropout: float = 0.25
    temperature: float = 1.0
    max_decode_len: int = 20
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 30
    seed: int = 0
    init_scale: float = 0.08
    clip_norm: float = 5.0
    bidirectional_encoder: bool = False
    disc_pretrain_epochs: int = 8
    disc_rounds: int = 3
    disc_weight: float = 1.0

    def __post_init__(self):
        positive = (
            "embed_dim", "hidden_dim", "latent_dim", "temperature", "max_decode_len",
            "learning_rate", "batch_size", "epochs", "init_scale", "clip_norm",
        )
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not (0.0 <= self.word_dropout < 1.0):
            raise ValueError("word_dropout must lie in [0, 1)")
        if self.kl_anneal_steps < 0:
            raise ValueError("kl_anneal_steps must be >= 0")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


# ---------------------------------------------------------------------------
# variational pieces


def kl_divergence(mu, logvar):
    """KL(N(mu, sigma^2) || N(0, I)) summed over the last axis.

    For batched inputs the per-row divergences are averaged. Accepts
    tensors (returns a scalar tensor on the tape) or arrays (returns a
    float).
    """
    tensor_in = isinstance(mu, ad.Tensor)
    mu_t = mu if tensor_in else ad.constant(np.asarray(mu, dtype=np.float64))
    lv_t = logvar if isinstance(logvar, ad.Tensor) else ad.constant(np.asarray(logvar, dtype=np.float64))
    if mu_t.shape != lv_t.shape:
        raise ad.ShapeError(f"kl_divergence: {mu_t.shape} vs {lv_t.shape}")
    inner = ad.sub(ad.sub(ad.add(ad.mul(mu_t, mu_t), ad.exp(lv_t)), lv_t), ad.constant(1.0))
    per_row = ad.scale(ad.sum(inner, axis=-1), 0.5)
    out = per_row if per_row.ndim == 0 else ad.mean(per_row)
    if tensor_in or isinstance(logvar, ad.Tensor):
        return out
    return out.item()


def reparameterize(mu, logvar, eps):
    """z = mu + exp(logvar / 2) * eps."""
    tensor_in = isinstance(mu, ad.Tensor)
    mu_t = mu if tensor_in else ad.constant(np.asarray(mu, dtype=np.float64))
    lv_t = logvar if isinstance(logvar, ad.Tensor) else ad.constant(np.asarray(logvar, dtype=np.float64))
    eps_t = eps if isinstance(eps, ad.Tensor) else ad.constant(np.asarray(eps, dtype=np.float64))
    z = ad.add(mu_t, ad.mul(ad.exp(ad.scale(lv_t, 0.5)), eps_t))
    return z if tensor_in else z.data


def kl_anneal_weight(step, anneal_steps):
    """Linear ramp from 0 to 1 over `anneal_steps` optimizer steps."""
    if anneal_steps < 1:
        raise ValueError("anneal_steps must be >= 1")
    return min(1.0, step / anneal_steps)


def word_dropout(token_ids, rate, rng):
    """Replace non-special decoder-input tokens by UNK with prob `rate`."""
    if not (0.0 <= rate < 1.0):
        raise ValueError("word_dropout rate must lie in [0, 1)")
    ids = np.asarray(token_ids, dtype=np.intp)
    if rate == 0.0:
        return ids.copy()
    special = (ids == PAD_ID) | (ids == BOS_ID) | (ids == EOS_ID)
    hit = rng.random(ids.shape) < rate
    out = ids.copy()
    out[hit & ~special] = UNK_ID
    return out


# ---------------------------------------------------------------------------
# network


class _Network:
    """Layer bundle for one generator; owns a ParamSet."""

    def __init__(self, kind, cfg, vocab_size, n_signatures, rng):
        self.kind = kind
        self.cfg = cfg
        self.vocab_size = vocab_size
        self.n_signatures = n_signatures
        self.params = ad.ParamSet()
        p, s = self.params, cfg.init_scale
        H, E, L = cfg.hidden_dim, cfg.embed_dim, cfg.latent_dim
        self.emb = layers.Embedding(p, "emb", vocab_size, E, rng, s)
        if cfg.bidirectional_encoder:
            self.encoder = layers.BiGruEncoder(p, "enc", E, H, rng, s)
            enc_out = 2 * H
        else:
            self.encoder = layers.GruCell(p, "enc", E, H, rng, s)
            enc_out = H
        dec_in = E
        if kind in _LATENT_KINDS:
            self.mu_head = layers.Linear(p, "mu", enc_out, L, rng, s)
            self.logvar_head = layers.Linear(p, "logvar", enc_out, L, rng, s)
            self.z2h = layers.Linear(p, "z2h", L, H, rng, s)
            dec_in += L
        if kind in _CODE_KINDS:
            dec_in += n_signatures
        self.dec = layers.GruCell(p, "dec", dec_in, H, rng, s)
        if kind is ModelKind.S2S:
            if cfg.bidirectional_encoder:
                raise ValueError("S2S uses the encoder state as decoder input; "
                                 "bidirectional encoders are not supported for it")
            self.attn = layers.AttentionHead(p, "attn", H, rng, s)
        self.out = layers.Linear(p, "out", H, vocab_size, rng, s)

    def encode(self, ids, mask):
        """Run the encoder; returns (final_state, step_states or None)."""
        steps = [self.emb(ids[:, t]) for t in range(ids.shape[1])]
        if isinstance(self.encoder, layers.BiGruEncoder):
            return self.encoder.final_state(steps, mask), None
        h = self.encoder.init_state(ids.shape[0])
        states = []
        for t, x in enumerate(steps):
            h = layers._masked_state(self.encoder.step(x, h), h, mask, t)
            states.append(h)
        return h, states

    def latent(self, enc_state):
        return self.mu_head(enc_state), self.logvar_head(enc_state)

    def decoder_init(self, z=None, enc_state=None):
        if self.kind is ModelKind.S2S:
            return enc_state
        return ad.tanh(self.z2h(z))

    def step_input(self, emb_t, z=None, code=None):
        parts = [emb_t]
        if self.kind in _LATENT_KINDS:
            parts.append(z)
        if self.kind in _CODE_KINDS:
            parts.append(code)
        return parts[0] if len(parts) == 1 else ad.concat(parts, axis=1)

    def decode_teacher(self, dec_in_ids, z=None, code=None, h0=None,
                       enc_states=None, enc_mask=None):
        """Teacher-forced decoding; returns per-step logits."""
        h = h0
        logits = []
        for t in range(dec_in_ids.shape[1]):
            x = self.step_input(self.emb(dec_in_ids[:, t]), z, code)
            h = self.dec.step(x, h)
            if self.kind is ModelKind.S2S:
                state, _ = self.attn.attentional(h, enc_states, enc_mask)
            else:
                state = h
            logits.append(self.out(state))
        return logits


# ---------------------------------------------------------------------------
# model container


@dataclass
class GeneratorModel:
    kind: ModelKind
    objective: TrainingObjective
    config: GeneratorConfig
    vocab: Vocabulary
    signatures: tuple
    slot_inventory: frozenset
    net: _Network
    curve: list = field(default_factory=list)
    disc_accuracy: float | None = None

    @property
    def params(self):
        return self.net.params

    def signature_index_map(self):
        if not hasattr(self, "_sig_index"):
            self._sig_index = {s: i for i, s in enumerate(self.signatures)}
        return self._sig_index

    def generate(self, request):
        return generate(self, request)


# ---------------------------------------------------------------------------
# training


def _encode_phrase(vocab, phrase, cache):
    key = phrase.surface()
    ids = cache.get(key)
    if ids is None:
        ids = tuple(vocab.encode(key))
        cache[key] = ids
    return ids


def _make_batch(pairs_ids, indices, vocab_pad, dropout_rate, rng):
    """Pad a batch of (src_ids, tgt_ids) into encoder/decoder arrays."""
    src = [pairs_ids[i][0] for i in indices]
    tgt = [pairs_ids[i][1] for i in indices]
    enc_ids, enc_mask = layers.pad_sequences(src, vocab_pad)
    tgt_out = [list(t) + [EOS_ID] for t in tgt]
    dec_targets, _ = layers.pad_sequences(tgt_out, vocab_pad)
    dec_in = np.concatenate(
        [np.full((len(indices), 1), BOS_ID, dtype=np.intp), dec_targets[:, :-1]], axis=1
    )
    dec_in = word_dropout(dec_in, dropout_rate, rng)
    return enc_ids, enc_mask, dec_targets, dec_in


def train_generator(kind, objective, corpus, cfg=None):
    """Train one generator family on a corpus's train split.

    Returns a GeneratorModel carrying the per-epoch training curve. The
    discriminator variants first train their base VAE/CVAE, then alternate
    discriminator updates on real phrases (sleep) with generator updates
    that add the discriminator loss on softmax-embedded free-run
    generations (wake).
    """
    cfg = cfg or GeneratorConfig()
    if kind is ModelKind.S2S and objective is not TrainingObjective.PARAPHRASE:
        raise ValueError("S2S admits only the paraphrase objective")
    vocab = build_vocab(corpus)
    signatures = tuple(corpus.signatures(Split.TRAIN))
    longest = max(len(p.tokens) for p in corpus.phrases(Split.TRAIN))
    if cfg.max_decode_len < longest:
        raise ValueError(
            f"max_decode_len={cfg.max_decode_len} is shorter than the longest "
            f"train phrase ({longest} tokens)"
        )
    if objective is TrainingObjective.PARAPHRASE:
        pairs = paraphrase_pairs(corpus)
    else:
        pairs = reconstruction_pairs(corpus)
    if not pairs:
        raise CorpusError("no training pairs; corpus train split is too small")
    rng = np.random.default_rng(cfg.seed)
    net = _Network(kind, cfg, len(vocab), len(signatures), rng)
    model = GeneratorModel(
        kind=kind, objective=objective, config=cfg, vocab=vocab,
        signatures=signatures, slot_inventory=corpus.slot_inventory(), net=net,
    )
    cache = {}
    sig_index = {s: i for i, s in enumerate(signatures)}
    pairs_ids = [
        (_encode_phrase(vocab, a, cache), _encode_phrase(vocab, b, cache))
        for a, b in pairs
    ]
    pair_sig = np.array([sig_index[b.signature] for _, b in pairs], dtype=np.intp)

    base_code = None
    if kind in _CODE_KINDS:
        if kind is ModelKind.VAE_DISC:
            # Base phase: code sampled from the empirical signature prior so
            # the decoder starts out without supervised conditioning.
            base_code = rng.integers(0, len(signatures), size=len(pairs))
        else:
            base_code = pair_sig
    step_counter = [0]
    _run_epochs(model, pairs_ids, base_code, cfg.epochs, rng, step_counter)
    if kind in (ModelKind.VAE_DISC, ModelKind.CVAE_DISC):
        _wake_sleep(model, corpus, pairs_ids, pair_sig, rng, step_counter)
    return model


def _run_epochs(model, pairs_ids, base_code, epochs, rng, step_counter):
    cfg, net, kind = model.config, model.net, model.kind
    n = len(pairs_ids)
    n_sig = len(model.signatures)
    for epoch in range(epochs):
        order = rng.permutation(n)
        ce_sum = kl_sum = 0.0
        batches = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            enc_ids, enc_mask, dec_targets, dec_in = _make_batch(
                pairs_ids, idx, PAD_ID, cfg.word_dropout, rng
            )
            code_rows = base_code[idx] if base_code is not None else None
            eps = rng.standard_normal((len(idx), cfg.latent_dim))
            step = step_counter[0]
            if cfg.kl_anneal_steps == 0:
                weight = 1.0
            else:
                weight = kl_anneal_weight(step, cfg.kl_anneal_steps)
            try:
                with ad.Tape() as tape:
                    ce, kl = _pair_loss(net, kind, n_sig, enc_ids, enc_mask,
                                        dec_targets, dec_in, code_rows, eps)
                    loss = ce if kl is None else ad.add(ce, ad.scale(kl, weight))
                    loss_val = loss.item()
                    if not math.isfinite(loss_val):
                        raise TrainingDivergedError(step)
                    ad.backward(tape, loss)
            except ad.NumericsError as err:
                raise TrainingDivergedError(step) from err
            ad.clip_global_norm(net.params, cfg.clip_norm)
            ad.adam_step(net.params, lr=cfg.learning_rate)
            net.params.zero_grad()
            step_counter[0] += 1
            ce_sum += ce.item()
            kl_sum += kl.item() if kl is not None else 0.0
            batches += 1
        model.curve.append(
            dict(epoch=len(model.curve), ce=ce_sum / batches, kl=kl_sum / batches,
                 kl_weight=weight)
        )


def _pair_loss(net, kind, n_sig, enc_ids, enc_mask, dec_targets, dec_in, code_rows, eps):
    enc_state, enc_states = net.encode(enc_ids, enc_mask)
    z = None
    kl = None
    code = None
    if kind in _LATENT_KINDS:
        mu, logvar = net.latent(enc_state)
        z = reparameterize(mu, logvar, ad.constant(eps))
        kl = kl_divergence(mu, logvar)
    if kind in _CODE_KINDS:
        code = ad.constant(layers.one_hot(code_rows, n_sig))
    h0 = net.decoder_init(z=z, enc_state=enc_state)
    logits = net.decode_teacher(
        dec_in, z=z, code=code, h0=h0, enc_states=enc_states, enc_mask=enc_mask
    )
    ce = layers.sequence_cross_entropy(logits, dec_targets, PAD_ID)
    return ce, kl


# ---------------------------------------------------------------------------
# discriminator and wake-sleep


class Discriminator:
    """GRU signature classifier over token embeddings (or soft embeddings)."""

    def __init__(self, vocab_size, n_signatures, embed_dim, hidden_dim, rng, init_scale=0.08):
        self.params = ad.ParamSet()
        self.emb = layers.Embedding(self.params, "emb", vocab_size, embed_dim, rng, init_scale)
        self.cell = layers.GruCell(self.params, "cell", embed_dim, hidden_dim, rng, init_scale)
        self.out = layers.Linear(self.params, "out", hidden_dim, n_signatures, rng, init_scale)

    def logits_from_ids(self, ids, mask):
        h = self.cell.init_state(ids.shape[0])
        for t in range(ids.shape[1]):
            h = layers._masked_state(self.cell.step(self.emb(ids[:, t]), h), h, mask, t)
        return self.out(h)

    def logits_from_soft(self, prob_steps):
        h = self.cell.init_state(prob_steps[0].shape[0])
        for p in prob_steps:
            h = self.cell.step(ad.matmul(p, self.emb.table), h)
        return self.out(h)

    def predict(self, ids, mask):
        return np.argmax(self.logits_from_ids(ids, mask).data, axis=1)


def _class_ce(logits, labels):
    hot = ad.constant(layers.one_hot(labels, logits.shape[1]))
    picked = ad.mul(ad.log(ad.softmax(logits)), hot)
    return ad.scale(ad.sum(picked), -1.0 / len(labels))


def train_discriminator(corpus, embed_dim=24, hidden_dim=64, epochs=30,
                        learning_rate=1e-3, batch_size=32, seed=0, vocab=None,
                        signatures=None):
    """Train a standalone signature classifier on the train split."""
    rng = np.random.default_rng(seed)
    vocab = vocab or build_vocab(corpus)
    signatures = signatures or tuple(corpus.signatures(Split.TRAIN))
    sig_index = {s: i for i, s in enumerate(signatures)}
    phrases = corpus.phrases(Split.TRAIN)
    ids_all = [tuple(vocab.encode(p.surface())) for p in phrases]
    labels = np.array([sig_index[p.signature] for p in phrases], dtype=np.intp)
    disc = Discriminator(len(vocab), len(signatures), embed_dim, hidden_dim, rng)
    n = len(ids_all)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            ids, mask = layers.pad_sequences([ids_all[i] for i in idx], PAD_ID)
            with ad.Tape() as tape:
                loss = _class_ce(disc.logits_from_ids(ids, mask), labels[idx])
                ad.backward(tape, loss)
            ad.clip_global_norm(disc.params, 5.0)
            ad.adam_step(disc.params, lr=learning_rate)
            disc.params.zero_grad()
    disc.vocab = vocab
    disc.signatures = signatures
    return disc


def discriminator_accuracy(disc, corpus, split):
    """Top-1 signature accuracy of a discriminator on one corpus split."""
    sig_index = {s: i for i, s in enumerate(disc.signatures)}
    phrases = [p for p in corpus.phrases(split) if p.signature in sig_index]
    if not phrases:
        raise ValueError(f"no scorable phrases in split {split}")
    ids, mask = layers.pad_sequences(
        [tuple(disc.vocab.encode(p.surface())) for p in phrases], PAD_ID
    )
    preds = disc.predict(ids, mask)
    gold = np.array([sig_index[p.signature] for p in phrases])
    return float(np.mean(preds == gold))


def _wake_sleep(model, corpus, pairs_ids, pair_sig, rng, step_counter):
    """Alternate discriminator training on real phrases with generator
    updates that add the discriminator loss on soft generations."""
    cfg, net = model.config, model.net
    n_sig = len(model.signatures)
    disc = train_discriminator(
        corpus,
        embed_dim=cfg.embed_dim,
        hidden_dim=cfg.hidden_dim,
        epochs=cfg.disc_pretrain_epochs,
        learning_rate=cfg.learning_rate,
        batch_size=cfg.batch_size,
        seed=int(rng.integers(2**31)),
        vocab=model.vocab,
        signatures=model.signatures,
    )
    model.disc_accuracy = discriminator_accuracy(disc, corpus, Split.TRAIN)
    free_len = min(cfg.max_decode_len, max(len(t) for _, t in pairs_ids) + 1)
    n = len(pairs_ids)
    for _ in range(cfg.disc_rounds):
        # sleep: one discriminator epoch on real data
        phrases = corpus.phrases(Split.TRAIN)
        sig_index = {s: i for i, s in enumerate(model.signatures)}
        ids_all = [tuple(model.vocab.encode(p.surface())) for p in phrases]
        labels = np.array([sig_index[p.signature] for p in phrases], dtype=np.intp)
        order = rng.permutation(len(ids_all))
        for start in range(0, len(ids_all), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            ids, mask = layers.pad_sequences([ids_all[i] for i in idx], PAD_ID)
            with ad.Tape() as tape:
                loss = _class_ce(disc.logits_from_ids(ids, mask), labels[idx])
                ad.backward(tape, loss)
            ad.adam_step(disc.params, lr=cfg.learning_rate)
            disc.params.zero_grad()
        # wake: one generator epoch of ELBO + weighted discriminator loss on
        # free-run generations conditioned on the batch's own signatures
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            enc_ids, enc_mask, dec_targets, dec_in = _make_batch(
                pairs_ids, idx, PAD_ID, cfg.word_dropout, rng
            )
            targets = pair_sig[idx]
            eps = rng.standard_normal((len(idx), cfg.latent_dim))
            z_free = rng.standard_normal((len(idx), cfg.latent_dim))
            with ad.Tape() as tape:
                ce, kl = _pair_loss(net, model.kind, n_sig, enc_ids, enc_mask,
                                    dec_targets, dec_in, targets, eps)
                probs = _soft_free_run(net, n_sig, targets, z_free, free_len)
                disc_loss = _class_ce(disc.logits_from_soft(probs), targets)
                loss = ad.add(ad.add(ce, kl), ad.scale(disc_loss, cfg.disc_weight))
                if not math.isfinite(loss.item()):
                    raise TrainingDivergedError(step_counter[0])
                ad.backward(tape, loss)
            ad.clip_global_norm(net.params, cfg.clip_norm)
            ad.adam_step(net.params, lr=cfg.learning_rate)
            net.params.zero_grad()
            disc.params.zero_grad()  # wake phase must not move the critic
            step_counter[0] += 1
    model._discriminator = disc


def _soft_free_run(net, n_sig, target_rows, z_rows, free_len):
    """Differentiable free-run decode: each step feeds the softmax-weighted
    embedding of the previous step's distribution."""
    batch = len(target_rows)
    z = ad.constant(z_rows)
    code = ad.constant(layers.one_hot(target_rows, n_sig))
    h = net.decoder_init(z=z)
    x_emb = net.emb(np.full(batch, BOS_ID, dtype=np.intp))
    probs = []
    for _ in range(free_len):
        x = net.step_input(x_emb, z, code)
        h = net.dec.step(x, h)
        p = ad.softmax(net.out(h))
        probs.append(p)
        x_emb = ad.matmul(p, net.emb.table)
    return probs


# ---------------------------------------------------------------------------
# generation


@dataclass
class GenerationRequest:
    strategy: SamplingStrategy
    count: int
    input_phrase: object = None  # CarrierPhrase
    target: Signature = None
    seed: int = 0
    temperature: float = None  # overrides config when set

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if self.temperature is not None and self.temperature <= 0:
            raise ValueError("temperature must be positive")


def _validate_request(model, request):
    kind = model.kind
    if request.strategy is SamplingStrategy.POSTERIOR or kind is ModelKind.S2S:
        if request.input_phrase is None:
            raise ValueError(f"{kind.value} with {request.strategy.value} sampling requires an input phrase")
    if kind is ModelKind.S2S and request.strategy is SamplingStrategy.PRIOR:
        raise ValueError("S2S has no latent prior; use posterior sampling with an input phrase")
    if request.strategy is SamplingStrategy.PRIOR:
        if model.objective is not TrainingObjective.RECONSTRUCTION:
            raise ValueError("prior sampling requires a reconstruction-trained model")
        if kind in _CODE_KINDS and request.target is None:
            raise ValueError(f"{kind.value} prior sampling requires a target signature")
    if kind is ModelKind.VAE and request.target is not None:
        raise ValueError("a plain VAE cannot condition on a target signature")
    target = request.target
    if target is None and request.input_phrase is not None:
        target = request.input_phrase.signature
    if kind in _CODE_KINDS:
        if target not in model.signature_index_map():
            known = ", ".join(s.to_flag() for s in model.signatures)
            raise ValueError(f"unknown target signature {target.to_flag()}; known: {known}")
    return target


def generate(model, request):
    """Sample `count` token sequences; deterministic per (seed, request).

    Returns a list of surface-token tuples (EOS stripped, possibly empty
    when EOS is sampled immediately).
    """
    target = _validate_request(model, request)
    rng = np.random.default_rng(request.seed)
    cfg, net = model.config, model.net
    count = request.count
    temperature = request.temperature if request.temperature is not None else cfg.temperature

    z_rows = None
    h0_rows = None
    enc_states = None
    enc_mask = None
    if model.kind is ModelKind.S2S:
        ids = np.array([model.vocab.encode(request.input_phrase.surface())], dtype=np.intp)
        mask = np.ones((1, ids.shape[1]))
        enc_state, states = net.encode(ids, mask)
        enc_states = [ad.constant(np.repeat(s.data, count, axis=0)) for s in states]
        enc_mask = np.ones((count, ids.shape[1]))
        h0_rows = np.repeat(enc_state.data, count, axis=0)
    elif request.strategy is SamplingStrategy.PRIOR:
        z_rows = rng.standard_normal((count, cfg.latent_dim))
    else:
        ids = np.array([model.vocab.encode(request.input_phrase.surface())], dtype=np.intp)
        mask = np.ones((1, ids.shape[1]))
        enc_state, _ = net.encode(ids, mask)
        mu, logvar = net.latent(enc_state)
        eps = rng.standard_normal((count, cfg.latent_dim))
        z_rows = reparameterize(
            np.repeat(mu.data, count, axis=0), np.repeat(logvar.data, count, axis=0), eps
        )

    code = None
    if model.kind in _CODE_KINDS:
        sig_row = np.full(count, model.signature_index_map()[target], dtype=np.intp)
        code = ad.constant(layers.one_hot(sig_row, len(model.signatures)))
    z = ad.constant(z_rows) if z_rows is not None else None
    h = net.decoder_init(z=z, enc_state=ad.constant(h0_rows) if h0_rows is not None else None)

    vocab_size = len(model.vocab)
    prev = np.full(count, BOS_ID, dtype=np.intp)
    done = np.zeros(count, dtype=bool)
    outputs = [[] for _ in range(count)]
    for _ in range(cfg.max_decode_len):
        x = net.step_input(net.emb(prev), z, code)
        h = net.dec.step(x, h)
        if model.kind is ModelKind.S2S:
            state, _ = net.attn.attentional(h, enc_states, enc_mask)
        else:
            state = h
        logits = net.out(state).data
        probs = _sampling_probs(logits, temperature)
        nxt = prev.copy()
        for i in range(count):
            if done[i]:
                continue
            nxt[i] = rng.choice(vocab_size, p=probs[i])
            if nxt[i] == EOS_ID:
                done[i] = True
            else:
                outputs[i].append(nxt[i])
        prev = nxt
        if done.all():
            break
    return [tuple(model.vocab.decode(ids)) for ids in outputs]


def _sampling_probs(logits, temperature):
    scaled = logits / temperature
    scaled = scaled - scaled.max(axis=1, keepdims=True)
    p = np.exp(scaled)
    p[:, PAD_ID] = 0.0  # never emit padding or a second BOS
    p[:, BOS_ID] = 0.0
    return p / p.sum(axis=1, keepdims=True)


def generate_for_phrases(model, phrases, strategy, count_per_phrase, seed):
    """Generate `count_per_phrase` outputs per input phrase.

    Returns (hypotheses, inputs) where hypotheses are (tokens, target or
    None) pairs suitable for the intrinsic report. Prior sampling uses each
    phrase's signature as the target (None for the plain VAE); posterior
    sampling feeds the phrase itself.
    """
    hyps = []
    inputs = []
    uncontrolled = strategy is SamplingStrategy.PRIOR and model.kind is ModelKind.VAE
    for i, phrase in enumerate(phrases):
        if strategy is SamplingStrategy.PRIOR:
            request = GenerationRequest(
                strategy=strategy, count=count_per_phrase,
                target=None if uncontrolled else phrase.signature, seed=seed + i,
            )
        else:
            request = GenerationRequest(strategy=strategy, count=count_per_phrase,
                                        input_phrase=phrase, seed=seed + i)
        for tokens in generate(model, request):
            hyps.append((tokens, None if uncontrolled else phrase.signature))
            inputs.append(phrase.surface())
    return hyps, inputs


# ---------------------------------------------------------------------------
# checkpoints

_MANIFEST_NAME = "manifest.json"
_PARAMS_NAME = "params.bin"


def save_model(model, dirpath):
    """Write manifest.json plus the parameter container."""
    os.makedirs(dirpath, exist_ok=True)
    manifest = {
        "format": "phrasegen-model",
        "version": 1,
        "kind": model.kind.value,
        "objective": model.objective.value,
        "config": model.config.to_dict(),
        "vocab_tokens": list(model.vocab.tokens),
        "vocab_sha256": model.vocab.digest(),
        "signatures": [s.to_flag() for s in model.signatures],
        "slot_inventory": sorted(model.slot_inventory),
        "params_sha256": ad.paramset_digest(model.params),
        "curve": model.curve,
        "disc_accuracy": model.disc_accuracy,
    }
    with open(os.path.join(dirpath, _MANIFEST_NAME), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")
    ad.save_paramset(model.params, os.path.join(dirpath, _PARAMS_NAME))


def load_model(dirpath):
    with open(os.path.join(dirpath, _MANIFEST_NAME), "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != "phrasegen-model" or manifest.get("version") != 1:
        raise ValueError(f"{dirpath}: not a phrasegen model checkpoint")
    cfg = GeneratorConfig.from_dict(manifest["config"])
    kind = ModelKind(manifest["kind"])
    vocab = Vocabulary(tuple(manifest["vocab_tokens"]))
    signatures = tuple(Signature.from_flag(s) for s in manifest["signatures"])
    net = _Network(kind, cfg, len(vocab), len(signatures), np.random.default_rng(0))
    ad.load_paramset_into(net.params, os.path.join(dirpath, _PARAMS_NAME))
    if ad.paramset_digest(net.params) != manifest["params_sha256"]:
        raise ValueError(f"{dirpath}: parameter digest mismatch")
    model = GeneratorModel(
        kind=kind,
        objective=TrainingObjective(manifest["objective"]),
        config=cfg,
        vocab=vocab,
        signatures=signatures,
        slot_inventory=frozenset(manifest["slot_inventory"]),
        net=net,
        curve=manifest.get("curve", []),
        disc_accuracy=manifest.get("disc_accuracy"),
    )
    return model


def manifest_digest(dirpath):
    import hashlib

    with open(os.path.join(dirpath, _MANIFEST_NAME), "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()
