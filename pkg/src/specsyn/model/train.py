"""Training loop: batching, the optimizer, and per-epoch loss logging."""

import math
from dataclasses import dataclass

import numpy as np

from ..synthdata import LabeledSample
from .network import (
    Batch,
    CATEGORIES,
    DivergenceError,
    LossCoefficients,
    Model,
    ModelConfig,
    ModelError,
    SequenceTooLong,
    detection_weights,
)
from .vocab import BOS_ID, CLS_ID, EOS_ID, PAD_ID, Vocab


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    rng_seed: int = 42
    coefficients: LossCoefficients = LossCoefficients()

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ModelError("epochs must be >= 0 and batch_size >= 1")
        if self.lr < 0:
            raise ModelError("learning rate must be non-negative")


@dataclass(frozen=True)
class EpochLoss:
    total: float
    detection: float
    generation: float
    category: float


@dataclass
class TrainResult:
    model: Model
    loss_log: list[EpochLoss]
    class_weights: np.ndarray


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, grad in grads.items():
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            params[name] -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def build_vocab(samples) -> Vocab:
    return Vocab.build((s.text for s in samples), (s.target for s in samples))


def _encode_sample(sample: LabeledSample, vocab: Vocab, max_len: int):
    ids = [CLS_ID] + vocab.encode(sample.text)
    if len(ids) > max_len:
        raise SequenceTooLong(
            f"training text of {len(ids)} tokens exceeds max_len {max_len}"
        )
    target = [vocab.id_of(tok) for tok in sample.target]
    cat = CATEGORIES.index(sample.category) if sample.category is not None else -1
    return ids, int(sample.label), cat, [BOS_ID] + target, target + [EOS_ID]


def make_batch(rows) -> Batch:
    """Pad encoded rows (ids, label, cat, gen_in, gen_out) into one Batch."""
    n = len(rows)
    length = max(len(r[0]) for r in rows)
    width = max((len(r[4]) for r in rows if r[1]), default=1)
    ids = np.full((n, length), PAD_ID, dtype=np.int64)
    mask = np.zeros((n, length), dtype=bool)
    labels = np.zeros(n, dtype=np.int64)
    cat_ids = np.full(n, -1, dtype=np.int64)
    gen_in = np.full((n, width), PAD_ID, dtype=np.int64)
    gen_out = np.full((n, width), PAD_ID, dtype=np.int64)
    gen_mask = np.zeros((n, width), dtype=bool)
    for row, (seq, label, cat, g_in, g_out) in enumerate(rows):
        ids[row, : len(seq)] = seq
        mask[row, : len(seq)] = True
        labels[row] = label
        cat_ids[row] = cat
        if label:
            gen_in[row, : len(g_in)] = g_in
            gen_out[row, : len(g_out)] = g_out
            gen_mask[row, : len(g_out)] = True
    return Batch(ids, mask, labels, cat_ids, gen_in, gen_out, gen_mask)


def train(
    samples,
    config: TrainConfig = TrainConfig(),
    model_config: ModelConfig = ModelConfig(),
    vocab: Vocab | None = None,
) -> TrainResult:
    """Train on labeled samples; both classes must be present."""
    samples = list(samples)
    if not samples:
        raise ModelError("training data is empty")
    weights = detection_weights([s.label for s in samples])
    if vocab is None:
        vocab = build_vocab(samples)
    rows = [_encode_sample(s, vocab, model_config.max_len) for s in samples]

    model = Model.initialize(
        model_config, vocab, np.random.SeedSequence([config.rng_seed, 0])
    )
    optimizer = Adam(model.params, config.lr, config.beta1, config.beta2, config.eps)
    shuffle = np.random.default_rng(np.random.SeedSequence([config.rng_seed, 1]))

    loss_log: list[EpochLoss] = []
    n = len(rows)
    for _ in range(config.epochs):
        order = shuffle.permutation(n)
        # group near-equal lengths to keep padding small, stable within buckets
        order = sorted(order, key=lambda i: len(rows[i][0]) // 8)
        batches = [
            order[start : start + config.batch_size]
            for start in range(0, n, config.batch_size)
        ]
        sums = {"total": 0.0, "detection": 0.0, "generation": 0.0, "category": 0.0}
        for b in shuffle.permutation(len(batches)):
            chosen = batches[b]
            batch = make_batch([rows[i] for i in chosen])
            losses, grads = model.loss_and_grads(batch, weights, config.coefficients)
            if math.isnan(losses["total"]):
                raise DivergenceError("training loss is NaN")
            optimizer.step(model.params, grads)
            for key in sums:
                sums[key] += losses[key] * len(chosen)
        loss_log.append(EpochLoss(**{k: v / n for k, v in sums.items()}))
    return TrainResult(model=model, loss_log=loss_log, class_weights=weights)
