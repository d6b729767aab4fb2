"""Neural building blocks on top of the autodiff tape.

Embeddings, linear maps, GRU cells, Luong-style bilinear attention, and a
padded sequence cross-entropy. All layers register their parameters into a
shared ParamSet under a dotted name prefix, initialized uniform in
[-init_scale, init_scale].

Convention pinned here (two exist in the literature):
    h_next = (1 - z) * h_prev + z * h_candidate
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad

DEFAULT_INIT_SCALE = 0.08


def init_param(params, name, shape, rng, scale=DEFAULT_INIT_SCALE):
    return params.add(name, rng.uniform(-scale, scale, size=shape))


class Linear:
    def __init__(self, params, name, in_dim, out_dim, rng, scale=DEFAULT_INIT_SCALE):
        self.w = init_param(params, f"{name}.w", (in_dim, out_dim), rng, scale)
        self.b = params.add(f"{name}.b", np.zeros(out_dim))

    def __call__(self, x):
        return ad.add(ad.matmul(x, self.w), self.b)


class Embedding:
    def __init__(self, params, name, vocab_size, dim, rng, scale=DEFAULT_INIT_SCALE):
        self.table = init_param(params, f"{name}.table", (vocab_size, dim), rng, scale)

    def __call__(self, ids):
        return ad.embed_lookup(self.table, ids)


class GruCell:
    """Gated recurrent unit over batched row vectors.

    Weights are stored input-major, so a step is `x @ w + h @ u + b` for
    each of the update (z), reset (r) and candidate gates.
    """

    def __init__(self, params, name, input_dim, hidden_dim, rng, scale=DEFAULT_INIT_SCALE):
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        p, n = params, name
        self.wz = init_param(p, f"{n}.wz", (input_dim, hidden_dim), rng, scale)
        self.uz = init_param(p, f"{n}.uz", (hidden_dim, hidden_dim), rng, scale)
        self.bz = p.add(f"{n}.bz", np.zeros(hidden_dim))
        self.wr = init_param(p, f"{n}.wr", (input_dim, hidden_dim), rng, scale)
        self.ur = init_param(p, f"{n}.ur", (hidden_dim, hidden_dim), rng, scale)
        self.br = p.add(f"{n}.br", np.zeros(hidden_dim))
        self.wh = init_param(p, f"{n}.wh", (input_dim, hidden_dim), rng, scale)
        self.uh = init_param(p, f"{n}.uh", (hidden_dim, hidden_dim), rng, scale)
        self.bh = p.add(f"{n}.bh", np.zeros(hidden_dim))

    def step(self, x, h_prev):
        if x.shape[-1] != self.input_dim or h_prev.shape[-1] != self.hidden_dim:
            raise ad.ShapeError(
                f"gru_step: x {x.shape} / h {h_prev.shape} do not match "
                f"(input_dim={self.input_dim}, hidden_dim={self.hidden_dim})"
            )
        z = ad.sigmoid(ad.add(ad.add(ad.matmul(x, self.wz), ad.matmul(h_prev, self.uz)), self.bz))
        r = ad.sigmoid(ad.add(ad.add(ad.matmul(x, self.wr), ad.matmul(h_prev, self.ur)), self.br))
        cand = ad.tanh(
            ad.add(ad.add(ad.matmul(x, self.wh), ad.matmul(ad.mul(r, h_prev), self.uh)), self.bh)
        )
        # h' = (1-z)*h + z*cand, written as h + z*(cand - h)
        return ad.add(h_prev, ad.mul(z, ad.sub(cand, h_prev)))

    def init_state(self, batch):
        return ad.constant(np.zeros((batch, self.hidden_dim)))


def gru_step(cell, x, h_prev):
    """Functional form of one GRU update."""
    return cell.step(x, h_prev)


class AttentionHead:
    """Luong "general" attention: score(q, k) = q . (W_a k)."""

    def __init__(self, params, name, hidden_dim, rng, scale=DEFAULT_INIT_SCALE):
        self.hidden_dim = hidden_dim
        self.wa = init_param(params, f"{name}.wa", (hidden_dim, hidden_dim), rng, scale)
        self.proj = Linear(params, f"{name}.proj", 2 * hidden_dim, hidden_dim, rng, scale)

    def context(self, query, keys, mask=None):
        """Weights and context over a list of key tensors (B, H) each.

        `mask`, when given, is a (B, len(keys)) 0/1 array; masked positions
        receive a large negative score before the softmax.
        """
        if not keys:
            raise ad.ShapeError("attention_context: empty key sequence")
        qw = ad.matmul(query, self.wa)  # (B, H)
        cols = [ad.sum(ad.mul(qw, k), axis=1, keepdims=True) for k in keys]
        scores = ad.concat(cols, axis=1)  # (B, T)
        if mask is not None:
            scores = ad.add(scores, ad.constant((1.0 - mask) * -1e9))
        weights = ad.softmax(scores)
        context = None
        for t, k in enumerate(keys):
            w_t = ad.slice_axis(weights, 1, t, t + 1)  # (B, 1)
            term = ad.mul(w_t, k)
            context = term if context is None else ad.add(context, term)
        return context, weights

    def attentional(self, query, keys, mask=None):
        """tanh(W_c [context ; query]), the attentional decoder state."""
        context, weights = self.context(query, keys, mask)
        merged = self.proj(ad.concat([context, query], axis=1))
        return ad.tanh(merged), weights


def attention_context(head, query, keys, mask=None):
    return head.context(query, keys, mask)


def one_hot(ids, depth):
    ids = np.asarray(ids, dtype=np.intp)
    out = np.zeros((ids.shape[0], depth))
    out[np.arange(ids.shape[0]), ids] = 1.0
    return out


def sequence_cross_entropy(step_logits, targets, pad_id):
    """Mean negative log-likelihood over non-pad target positions.

    step_logits: list of (B, V) tensors, one per decoder step.
    targets: (B, T) int array of gold ids aligned with the steps.
    """
    targets = np.asarray(targets, dtype=np.intp)
    if targets.ndim != 2 or targets.shape[1] != len(step_logits):
        raise ad.ShapeError(
            f"sequence_cross_entropy: targets {targets.shape} vs {len(step_logits)} steps"
        )
    n_live = int((targets != pad_id).sum())
    if n_live == 0:
        raise ValueError("sequence_cross_entropy: all target positions are padding")
    vocab = step_logits[0].shape[1]
    total = None
    for t, logits in enumerate(step_logits):
        ids = targets[:, t]
        live = ids != pad_id
        hot = one_hot(np.where(live, ids, 0), vocab) * live[:, None]
        picked = ad.mul(ad.log(ad.softmax(logits)), ad.constant(hot))
        step_sum = ad.sum(picked)
        total = step_sum if total is None else ad.add(total, step_sum)
    return ad.scale(total, -1.0 / n_live)


class BiGruEncoder:
    """Forward and backward GRU passes with final states concatenated."""

    def __init__(self, params, name, input_dim, hidden_dim, rng, scale=DEFAULT_INIT_SCALE):
        self.fwd = GruCell(params, f"{name}.fwd", input_dim, hidden_dim, rng, scale)
        self.bwd = GruCell(params, f"{name}.bwd", input_dim, hidden_dim, rng, scale)

    def final_state(self, steps, mask=None):
        """steps: list of (B, I) tensors; mask: (B, T) 0/1 live positions."""
        batch = steps[0].shape[0]
        hf = self.fwd.init_state(batch)
        for t, x in enumerate(steps):
            nxt = self.fwd.step(x, hf)
            hf = _masked_state(nxt, hf, mask, t)
        hb = self.bwd.init_state(batch)
        for t in range(len(steps) - 1, -1, -1):
            nxt = self.bwd.step(steps[t], hb)
            hb = _masked_state(nxt, hb, mask, t)
        return ad.concat([hf, hb], axis=1)


def pad_sequences(id_seqs, pad_id):
    """Right-pad integer sequences into a (B, T) array plus a 0/1 mask."""
    if not id_seqs:
        raise ValueError("pad_sequences: empty batch")
    width = max(len(s) for s in id_seqs)
    ids = np.full((len(id_seqs), width), pad_id, dtype=np.intp)
    mask = np.zeros((len(id_seqs), width))
    for i, seq in enumerate(id_seqs):
        ids[i, : len(seq)] = seq
        mask[i, : len(seq)] = 1.0
    return ids, mask


def _masked_state(h_new, h_old, mask, t):
    """Keep the previous hidden state at padded positions."""
    if mask is None:
        return h_new
    col = mask[:, t:t + 1]
    if np.all(col == 1.0):
        return h_new
    keep = ad.constant(col)
    return ad.add(ad.mul(keep, h_new), ad.mul(ad.constant(1.0 - col), h_old))
