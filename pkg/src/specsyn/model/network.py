"""Encoder plus detection, generation, and category heads.

The network is a small pre-norm self-attention encoder over tagged text.
The final hidden state at the [CLS] position is pooled through a tanh
projection; the pooled vector feeds a 2-way detection decoder, a 5-way
category decoder, and an LSTM that generates the tagged specification
token sequence.

Every parameter lives in a flat name -> float64 array mapping and every
gradient is derived by hand, so the complete network can be checked
against central finite differences.
"""

import math
from dataclasses import dataclass

import numpy as np

from ..dsl import Category
from .vocab import (
    BOS_ID,
    CLS_ID,
    EOS_ID,
    ModelError,
    PAD_ID,
    TAG_CLASSES,
    TAG_SLOTS,
    UNK_ID,
    Vocab,
)


class SequenceTooLong(ModelError):
    """Input sequence exceeds the positional table."""


class DivergenceError(ModelError):
    """Training loss became NaN."""


_LN_EPS = 1e-5
_LOG_FLOOR = 1e-12
_GELU_C = math.sqrt(2.0 / math.pi)

CATEGORIES = tuple(Category)


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 64
    blocks: int = 2
    heads: int = 4
    max_len: int = 64
    detect_hidden: int = 50
    category_hidden: int = 50
    generator_hidden: int = 20

    def __post_init__(self):
        sizes = (
            self.d_model, self.blocks, self.heads, self.max_len,
            self.detect_hidden, self.category_hidden, self.generator_hidden,
        )
        if any(s < 1 for s in sizes):
            raise ModelError("all model dimensions must be positive")
        if self.d_model % self.heads:
            raise ModelError("d_model must be divisible by heads")


@dataclass(frozen=True)
class LossCoefficients:
    detection: float = 1.0
    generation: float = 1.0
    category: float = 1.0


@dataclass(frozen=True)
class GenerationResult:
    tokens: tuple[str, ...]
    truncated: bool


@dataclass
class Batch:
    """Padded sample batch prepared for a joint forward/backward pass."""

    ids: np.ndarray       # (B, L) token ids, PAD-filled
    mask: np.ndarray      # (B, L) True at real positions
    labels: np.ndarray    # (B,) 0 = no spec, 1 = spec
    cat_ids: np.ndarray   # (B,) category index, -1 where absent
    gen_in: np.ndarray    # (B, T) generator inputs starting at [BOS]
    gen_out: np.ndarray   # (B, T) generator targets ending at [EOS]
    gen_mask: np.ndarray  # (B, T) True at supervised generator steps

    @property
    def size(self) -> int:
        return self.ids.shape[0]


def weighted_ce(pred, label: int, weights) -> float:
    """-w_label * ln(p_label) with the log argument clamped at 1e-12."""
    p = float(np.asarray(pred)[label])
    return -float(np.asarray(weights)[label]) * math.log(max(p, _LOG_FLOOR))


def detection_weights(labels) -> np.ndarray:
    """Inverse-frequency class weights w_c = n_total / (M * n_c)."""
    labels = np.asarray(labels, dtype=np.int64)
    counts = np.bincount(labels, minlength=2)
    if counts.size != 2 or (counts == 0).any():
        raise ModelError("training data must contain both detection classes")
    return labels.size / (2.0 * counts.astype(np.float64))


def _softmax(x):
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _gelu(x):
    x2 = x * x
    t = np.tanh(_GELU_C * (x + 0.044715 * x2 * x))
    return 0.5 * x * (1.0 + t), t


def _gelu_grad(x, t):
    u = 1.0 - t * t
    u *= _GELU_C * (0.5 * x + 0.0670725 * x * x * x)
    u += 0.5 * (1.0 + t)
    return u


def _layer_norm(x, scale, shift):
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = centered * inv
    return xhat * scale + shift, (xhat, inv)


def _layer_norm_grad(dy, cache, scale, grads, prefix):
    xhat, inv = cache
    axes = tuple(range(dy.ndim - 1))
    _acc(grads, prefix + "/scale", (dy * xhat).sum(axis=axes))
    _acc(grads, prefix + "/shift", dy.sum(axis=axes))
    dxhat = dy * scale
    mean1 = dxhat.mean(axis=-1, keepdims=True)
    mean2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    return inv * (dxhat - mean1 - xhat * mean2)


def _acc(grads, name, value):
    if name in grads:
        grads[name] += value
    else:
        grads[name] = value


def _split_heads(x, heads):
    b, length, d = x.shape
    return x.reshape(b, length, heads, d // heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, heads, length, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, length, heads * dh)


def _matgrad(x, dy):
    """Weight gradient for y = x @ w summed over all leading axes."""
    return x.reshape(-1, x.shape[-1]).T @ dy.reshape(-1, dy.shape[-1])


def _init_params(config: ModelConfig, vocab_size: int, rng) -> dict[str, np.ndarray]:
    d = config.d_model
    g = config.generator_hidden

    def normal(fan_in, fan_out):
        # Glorot: keeps forward activations and backward signals at a
        # healthy scale at any width, which also keeps gradients far
        # enough above float noise for finite-difference verification.
        std = math.sqrt(2.0 / (fan_in + fan_out))
        return rng.normal(0.0, std, size=(fan_in, fan_out))

    embed_std = 1.0 / math.sqrt(d)
    p = {
        "embed/tokens": rng.normal(0.0, embed_std, size=(vocab_size, d)),
        "embed/positions": rng.normal(0.0, embed_std, size=(config.max_len, d)),
    }
    for i in range(config.blocks):
        blk = f"block{i}"
        p[f"{blk}/ln1/scale"] = np.ones(d)
        p[f"{blk}/ln1/shift"] = np.zeros(d)
        for name in ("wq", "wk", "wv", "wo"):
            p[f"{blk}/attn/{name}"] = normal(d, d)
        p[f"{blk}/ln2/scale"] = np.ones(d)
        p[f"{blk}/ln2/shift"] = np.zeros(d)
        p[f"{blk}/ffn/w1"] = normal(d, 4 * d)
        p[f"{blk}/ffn/b1"] = np.zeros(4 * d)
        p[f"{blk}/ffn/w2"] = normal(4 * d, d)
        p[f"{blk}/ffn/b2"] = np.zeros(d)
    p["final_ln/scale"] = np.ones(d)
    p["final_ln/shift"] = np.zeros(d)
    p["pool/w1"] = normal(d, d)
    for head, hidden, classes in (
        ("detect", config.detect_hidden, 2),
        ("category", config.category_hidden, len(CATEGORIES)),
    ):
        p[f"{head}/w1"] = normal(d, hidden)
        p[f"{head}/b1"] = np.zeros(hidden)
        p[f"{head}/w2"] = normal(hidden, hidden)
        p[f"{head}/b2"] = np.zeros(hidden)
        p[f"{head}/w3"] = normal(hidden, classes)
        p[f"{head}/b3"] = np.zeros(classes)
    p["generator/h0"] = normal(d, g)
    p["generator/wx"] = normal(d, 4 * g)
    p["generator/wh"] = normal(g, 4 * g)
    bias = np.zeros(4 * g)
    bias[g:2 * g] = 1.0  # forget gate starts open
    p["generator/b"] = bias
    p["generator/out_w"] = normal(g, vocab_size)
    p["generator/out_b"] = np.zeros(vocab_size)
    return p


class Model:
    """Trained or freshly initialized network over a fixed vocabulary."""

    def __init__(self, config: ModelConfig, vocab: Vocab, params: dict[str, np.ndarray]):
        if params["embed/tokens"].shape != (len(vocab), config.d_model):
            raise ModelError("embedding table does not match the vocabulary")
        self.config = config
        self.vocab = vocab
        self.params = params

    @classmethod
    def initialize(cls, config: ModelConfig, vocab: Vocab, rng_seed: int = 0) -> "Model":
        rng = np.random.default_rng(rng_seed)
        return cls(config, vocab, _init_params(config, len(vocab), rng))

    # ------------------------------------------------------------------ encoder

    def _encode_batch(self, ids, mask):
        p, cfg = self.params, self.config
        length = ids.shape[1]
        if length > cfg.max_len:
            raise SequenceTooLong(
                f"sequence length {length} exceeds max_len {cfg.max_len}"
            )
        emb = p["embed/tokens"][ids] + p["embed/positions"][:length]
        key_bias = np.where(mask[:, None, None, :], 0.0, -np.inf)
        scale = 1.0 / math.sqrt(cfg.d_model // cfg.heads)

        h = emb
        blocks = []
        for i in range(cfg.blocks):
            blk = f"block{i}"
            a, ln1 = _layer_norm(h, p[f"{blk}/ln1/scale"], p[f"{blk}/ln1/shift"])
            qh = _split_heads(a @ p[f"{blk}/attn/wq"], cfg.heads)
            kh = _split_heads(a @ p[f"{blk}/attn/wk"], cfg.heads)
            vh = _split_heads(a @ p[f"{blk}/attn/wv"], cfg.heads)
            scores = qh @ kh.transpose(0, 1, 3, 2) * scale + key_bias
            att = _softmax(scores)
            ctx = _merge_heads(att @ vh)
            h1 = h + ctx @ p[f"{blk}/attn/wo"]
            f, ln2 = _layer_norm(h1, p[f"{blk}/ln2/scale"], p[f"{blk}/ln2/shift"])
            u = f @ p[f"{blk}/ffn/w1"] + p[f"{blk}/ffn/b1"]
            r, gelu_t = _gelu(u)
            h = h1 + r @ p[f"{blk}/ffn/w2"] + p[f"{blk}/ffn/b2"]
            blocks.append((a, qh, kh, vh, att, ctx, ln1, f, u, gelu_t, r, ln2))

        normed, final_ln = _layer_norm(h, p["final_ln/scale"], p["final_ln/shift"])
        h_cls = normed[:, 0]
        h_c = np.tanh(h_cls @ p["pool/w1"])
        cache = (ids, length, scale, blocks, final_ln, h_cls, h_c)
        return h_c, cache

    def _encode_backward(self, dh_c, cache, grads):
        p, cfg = self.params, self.config
        ids, length, scale, blocks, final_ln, h_cls, h_c = cache

        dpooled = dh_c * (1.0 - h_c * h_c)
        _acc(grads, "pool/w1", h_cls.T @ dpooled)
        dnormed = np.zeros((ids.shape[0], length, cfg.d_model))
        dnormed[:, 0] = dpooled @ p["pool/w1"].T
        dh = _layer_norm_grad(dnormed, final_ln, p["final_ln/scale"], grads, "final_ln")

        for i in reversed(range(cfg.blocks)):
            blk = f"block{i}"
            a, qh, kh, vh, att, ctx, ln1, f, u, gelu_t, r, ln2 = blocks[i]

            _acc(grads, f"{blk}/ffn/w2", _matgrad(r, dh))
            _acc(grads, f"{blk}/ffn/b2", dh.sum(axis=(0, 1)))
            du = (dh @ p[f"{blk}/ffn/w2"].T) * _gelu_grad(u, gelu_t)
            _acc(grads, f"{blk}/ffn/w1", _matgrad(f, du))
            _acc(grads, f"{blk}/ffn/b1", du.sum(axis=(0, 1)))
            df = du @ p[f"{blk}/ffn/w1"].T
            dh1 = dh + _layer_norm_grad(df, ln2, p[f"{blk}/ln2/scale"], grads, f"{blk}/ln2")

            _acc(grads, f"{blk}/attn/wo", _matgrad(ctx, dh1))
            dctx = _split_heads(dh1 @ p[f"{blk}/attn/wo"].T, cfg.heads)
            datt = dctx @ vh.transpose(0, 1, 3, 2)
            dvh = att.transpose(0, 1, 3, 2) @ dctx
            ds = att * (datt - (datt * att).sum(axis=-1, keepdims=True))
            dqh = ds @ kh * scale
            dkh = ds.transpose(0, 1, 3, 2) @ qh * scale
            dq, dk, dv = _merge_heads(dqh), _merge_heads(dkh), _merge_heads(dvh)
            _acc(grads, f"{blk}/attn/wq", _matgrad(a, dq))
            _acc(grads, f"{blk}/attn/wk", _matgrad(a, dk))
            _acc(grads, f"{blk}/attn/wv", _matgrad(a, dv))
            da = (
                dq @ p[f"{blk}/attn/wq"].T
                + dk @ p[f"{blk}/attn/wk"].T
                + dv @ p[f"{blk}/attn/wv"].T
            )
            dh = dh1 + _layer_norm_grad(da, ln1, p[f"{blk}/ln1/scale"], grads, f"{blk}/ln1")

        _acc(grads, "embed/positions", np.zeros_like(p["embed/positions"]))
        grads["embed/positions"][:length] += dh.sum(axis=0)
        _acc(grads, "embed/tokens", np.zeros_like(p["embed/tokens"]))
        np.add.at(grads["embed/tokens"], ids.reshape(-1), dh.reshape(-1, cfg.d_model))

    # ------------------------------------------------------------------ heads

    def _mlp_forward(self, head, x):
        p = self.params
        u1 = x @ p[f"{head}/w1"] + p[f"{head}/b1"]
        r1, t1 = _gelu(u1)
        u2 = r1 @ p[f"{head}/w2"] + p[f"{head}/b2"]
        r2, t2 = _gelu(u2)
        logits = r2 @ p[f"{head}/w3"] + p[f"{head}/b3"]
        return logits, (x, u1, t1, r1, u2, t2, r2)

    def _mlp_backward(self, head, dlogits, cache, grads):
        p = self.params
        x, u1, t1, r1, u2, t2, r2 = cache
        _acc(grads, f"{head}/w3", r2.T @ dlogits)
        _acc(grads, f"{head}/b3", dlogits.sum(axis=0))
        du2 = (dlogits @ p[f"{head}/w3"].T) * _gelu_grad(u2, t2)
        _acc(grads, f"{head}/w2", r1.T @ du2)
        _acc(grads, f"{head}/b2", du2.sum(axis=0))
        du1 = (du2 @ p[f"{head}/w2"].T) * _gelu_grad(u1, t1)
        _acc(grads, f"{head}/w1", x.T @ du1)
        _acc(grads, f"{head}/b1", du1.sum(axis=0))
        return du1 @ p[f"{head}/w1"].T

    # ------------------------------------------------------------------ generator

    def _lstm_step(self, x, h, c):
        p = self.params
        g = self.config.generator_hidden
        gates = x @ p["generator/wx"] + h @ p["generator/wh"] + p["generator/b"]
        i = _sigmoid(gates[:, :g])
        f = _sigmoid(gates[:, g:2 * g])
        z = np.tanh(gates[:, 2 * g:3 * g])
        o = _sigmoid(gates[:, 3 * g:])
        c_new = f * c + i * z
        tc = np.tanh(c_new)
        h_new = o * tc
        return h_new, c_new, (i, f, z, o, tc)

    def _gen_forward(self, h_c, gen_in, gen_out, gen_mask):
        p = self.params
        n_tok = int(gen_mask.sum())
        h0_pre = h_c @ p["generator/h0"]
        h = np.tanh(h0_pre)
        c = h0_pre  # context also seeds the cell, where the gates preserve it
        steps = []
        loss = 0.0
        for t in range(gen_in.shape[1]):
            x = p["embed/tokens"][gen_in[:, t]]
            h_prev, c_prev = h, c
            h, c, gates = self._lstm_step(x, h_prev, c_prev)
            probs = _softmax(h @ p["generator/out_w"] + p["generator/out_b"])
            target_p = probs[np.arange(probs.shape[0]), gen_out[:, t]]
            live = gen_mask[:, t]
            loss -= np.log(np.maximum(target_p, _LOG_FLOOR))[live].sum()
            steps.append((x, h_prev, c_prev, gates, probs, h))
        loss = loss / n_tok if n_tok else 0.0
        return loss, (h_c, h0_pre, steps, n_tok)

    def _gen_backward(self, cache, gen_in, gen_out, gen_mask, scale, grads):
        p = self.params
        h_c, h0_pre, steps, n_tok = cache
        factor = scale / n_tok if n_tok else 0.0
        rows = np.arange(h_c.shape[0])
        dh_next = np.zeros((h_c.shape[0], self.config.generator_hidden))
        dc_next = np.zeros_like(dh_next)
        d_embed = grads.setdefault("embed/tokens", np.zeros_like(p["embed/tokens"]))
        for t in reversed(range(gen_in.shape[1])):
            x, h_prev, c_prev, (i, f, z, o, tc), probs, h = steps[t]
            dlogits = probs.copy()
            dlogits[rows, gen_out[:, t]] -= 1.0
            clamped = probs[rows, gen_out[:, t]] < _LOG_FLOOR
            dlogits[~gen_mask[:, t] | clamped] = 0.0
            dlogits *= factor
            _acc(grads, "generator/out_w", h.T @ dlogits)
            _acc(grads, "generator/out_b", dlogits.sum(axis=0))
            dh = dh_next + dlogits @ p["generator/out_w"].T
            do = dh * tc
            dc = dc_next + dh * o * (1.0 - tc * tc)
            di, dz, df = dc * z, dc * i, dc * c_prev
            dc_next = dc * f
            dgates = np.concatenate(
                (
                    di * i * (1.0 - i),
                    df * f * (1.0 - f),
                    dz * (1.0 - z * z),
                    do * o * (1.0 - o),
                ),
                axis=1,
            )
            _acc(grads, "generator/wx", x.T @ dgates)
            _acc(grads, "generator/wh", h_prev.T @ dgates)
            _acc(grads, "generator/b", dgates.sum(axis=0))
            np.add.at(d_embed, gen_in[:, t], dgates @ p["generator/wx"].T)
            dh_next = dgates @ p["generator/wh"].T
        h0 = np.tanh(h0_pre)
        dh0 = dh_next * (1.0 - h0 * h0) + dc_next
        _acc(grads, "generator/h0", h_c.T @ dh0)
        return dh0 @ p["generator/h0"].T

    # ------------------------------------------------------------------ losses

    def _run(self, batch: Batch, weights, coeffs: LossCoefficients, want_grads: bool):
        b = batch.size
        weights = np.asarray(weights, dtype=np.float64)
        h_c, enc_cache = self._encode_batch(batch.ids, batch.mask)

        det_logits, det_cache = self._mlp_forward("detect", h_c)
        det_probs = _softmax(det_logits)
        rows = np.arange(b)
        det_p = det_probs[rows, batch.labels]
        det_loss = float(
            -(weights[batch.labels] * np.log(np.maximum(det_p, _LOG_FLOOR))).mean()
        )

        cat_rows = np.flatnonzero(batch.cat_ids >= 0)
        if cat_rows.size:
            cat_logits, cat_cache = self._mlp_forward("category", h_c[cat_rows])
            cat_probs = _softmax(cat_logits)
            cat_p = cat_probs[np.arange(cat_rows.size), batch.cat_ids[cat_rows]]
            cat_loss = float(-np.log(np.maximum(cat_p, _LOG_FLOOR)).mean())
        else:
            cat_loss = 0.0

        gen_rows = np.flatnonzero(batch.gen_mask.any(axis=1))
        if gen_rows.size:
            gen_loss, gen_cache = self._gen_forward(
                h_c[gen_rows],
                batch.gen_in[gen_rows],
                batch.gen_out[gen_rows],
                batch.gen_mask[gen_rows],
            )
            gen_loss = float(gen_loss)
        else:
            gen_loss = 0.0

        losses = {
            "detection": det_loss,
            "generation": gen_loss,
            "category": cat_loss,
            "total": (
                coeffs.detection * det_loss
                + coeffs.generation * gen_loss
                + coeffs.category * cat_loss
            ),
        }
        if not want_grads:
            return losses, None

        grads: dict[str, np.ndarray] = {}
        dh_c = np.zeros_like(h_c)

        dlogits = det_probs.copy()
        dlogits[rows, batch.labels] -= 1.0
        dlogits *= weights[batch.labels, None]
        dlogits[det_p < _LOG_FLOOR] = 0.0
        dlogits *= coeffs.detection / b
        dh_c += self._mlp_backward("detect", dlogits, det_cache, grads)

        if cat_rows.size:
            dlogits = cat_probs.copy()
            dlogits[np.arange(cat_rows.size), batch.cat_ids[cat_rows]] -= 1.0
            dlogits[cat_p < _LOG_FLOOR] = 0.0
            dlogits *= coeffs.category / cat_rows.size
            dh_c[cat_rows] += self._mlp_backward("category", dlogits, cat_cache, grads)

        if gen_rows.size:
            dh_c[gen_rows] += self._gen_backward(
                gen_cache,
                batch.gen_in[gen_rows],
                batch.gen_out[gen_rows],
                batch.gen_mask[gen_rows],
                coeffs.generation,
                grads,
            )

        self._encode_backward(dh_c, enc_cache, grads)
        for name, tensor in self.params.items():
            if name not in grads:
                grads[name] = np.zeros_like(tensor)
        return losses, grads

    def losses(self, batch: Batch, weights, coeffs: LossCoefficients = LossCoefficients()):
        return self._run(batch, weights, coeffs, want_grads=False)[0]

    def loss_and_grads(
        self, batch: Batch, weights, coeffs: LossCoefficients = LossCoefficients()
    ):
        return self._run(batch, weights, coeffs, want_grads=True)

    # ------------------------------------------------------------------ inference

    def encode(self, ids) -> np.ndarray:
        """Pooled representation of one id sequence starting at [CLS]."""
        ids = np.asarray(list(ids), dtype=np.int64)
        if ids.size == 0 or ids[0] != CLS_ID:
            raise ModelError("sequence must start with [CLS]")
        if ids.size > self.config.max_len:
            raise SequenceTooLong(
                f"sequence length {ids.size} exceeds max_len {self.config.max_len}"
            )
        h_c, _ = self._encode_batch(ids[None, :], np.ones((1, ids.size), dtype=bool))
        return h_c[0]

    def encode_text(self, text: str) -> np.ndarray:
        return self.encode([CLS_ID] + self.vocab.encode(text))

    def detect(self, h_c) -> np.ndarray:
        h = np.atleast_2d(np.asarray(h_c))
        probs = _softmax(self._mlp_forward("detect", h)[0])
        return probs[0] if np.ndim(h_c) == 1 else probs

    def classify_category(self, h_c) -> np.ndarray:
        h = np.atleast_2d(np.asarray(h_c))
        probs = _softmax(self._mlp_forward("category", h)[0])
        return probs[0] if np.ndim(h_c) == 1 else probs

    def generate(self, h_c, tags, max_len: int = 24) -> GenerationResult:
        """Greedy decode constrained to tag tokens present in the tag map."""
        if max_len < 1:
            raise ModelError("max_len must be at least 1")
        p = self.params
        allowed = np.ones(len(self.vocab), dtype=bool)
        allowed[[PAD_ID, UNK_ID, CLS_ID, BOS_ID]] = False
        for cls in TAG_CLASSES:
            for i in range(1, TAG_SLOTS + 1):
                if f"{cls}{i}" not in tags:
                    allowed[self.vocab.id_of(f"<{cls}{i}>")] = False

        h0_pre = np.asarray(h_c)[None, :] @ p["generator/h0"]
        h = np.tanh(h0_pre)
        c = h0_pre
        prev = BOS_ID
        tokens: list[str] = []
        truncated = True
        for _ in range(max_len):
            x = p["embed/tokens"][prev][None, :]
            h, c, _ = self._lstm_step(x, h, c)
            logits = (h @ p["generator/out_w"] + p["generator/out_b"])[0]
            logits[~allowed] = -np.inf
            prev = int(np.argmax(logits))
            if prev == EOS_ID:
                truncated = False
                break
            tokens.append(self.vocab.token_of(prev))
        return GenerationResult(tokens=tuple(tokens), truncated=truncated)


def predicted_label(det_probs) -> bool:
    """Argmax with ties resolved toward no-spec."""
    probs = np.asarray(det_probs)
    return bool(probs[1] > probs[0])


def predicted_category(cat_probs) -> Category:
    """Argmax with ties resolved by category declaration order."""
    return CATEGORIES[int(np.argmax(np.asarray(cat_probs)))]
