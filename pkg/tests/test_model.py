import math

import numpy as np
import pytest

from specsyn.corpus import ExtractionType
from specsyn.dsl import Category
from specsyn.model import (
    BOS_ID,
    Batch,
    CATEGORIES,
    CLS_ID,
    EOS_ID,
    LossCoefficients,
    Model,
    ModelConfig,
    ModelError,
    PAD_ID,
    SequenceTooLong,
    TrainConfig,
    UNK_ID,
    Vocab,
    build_vocab,
    detection_weights,
    grad_check,
    load_checkpoint,
    make_batch,
    predicted_category,
    predicted_label,
    reserved_tokens,
    save_checkpoint,
    tokenize,
    train,
    weighted_ce,
)
from specsyn.model.checkpoint import CheckpointError
from specsyn.synthdata import LabeledSample

SMALL = ModelConfig(d_model=16, blocks=1, heads=4, max_len=32)

TEXTS = [
    "set <keyword1> to <num1> <unit1> before restart .",
    "always keep <keyword1> equal to <bool1> and <keyword2> equal to <bool1> .",
    "see page <num1> for details of <keyword1> 5.1.2 .",
    "the manual describes <keyword1> in section <num1> .",
]
TARGETS = [
    ("<keyword1>", ">", "<num1>"),
    ("<keyword1>", "==", "<bool1>", "and", "<keyword2>", "==", "<bool1>"),
]


@pytest.fixture(scope="module")
def vocab():
    return Vocab.build(TEXTS, TARGETS)


def encode_row(vocab, text, label, cat, target):
    ids = [CLS_ID] + vocab.encode(text)
    t = [vocab.id_of(tok) for tok in target]
    return (ids, label, cat, [BOS_ID] + t, t + [EOS_ID])


@pytest.fixture(scope="module")
def batch(vocab):
    rows = [
        encode_row(vocab, TEXTS[0], 1, 0, TARGETS[0]),
        encode_row(vocab, TEXTS[1], 1, 2, TARGETS[1]),
        encode_row(vocab, TEXTS[2], 0, -1, ()),
        encode_row(vocab, TEXTS[3], 0, -1, ()),
    ]
    return make_batch(rows)


@pytest.fixture(scope="module")
def weights():
    return detection_weights([1, 1, 0, 0])


@pytest.fixture(scope="module")
def model(vocab):
    return Model.initialize(SMALL, vocab, rng_seed=0)


class TestVocab:
    def test_reserved_ids(self):
        assert (PAD_ID, UNK_ID, CLS_ID, BOS_ID, EOS_ID) == (0, 1, 2, 3, 4)
        table = reserved_tokens()
        assert len(table) == 45
        assert table[0] == "[PAD]"
        assert table[5] == "<keyword1>"
        assert table[44] == "<format8>"

    def test_build_is_sorted_and_deterministic(self):
        a = Vocab.build(["beta alpha", "gamma alpha"])
        b = Vocab.build(["gamma alpha", "beta alpha"])
        assert a.tokens == b.tokens
        learned = a.tokens[45:]
        assert learned == tuple(sorted(learned))
        assert set(learned) == {"alpha", "beta", "gamma"}

    def test_tokenize_splits_tags_from_punctuation(self):
        assert tokenize("set <keyword1>.") == ["set", "<keyword1>", "."]
        assert tokenize("(<num1>,<num2>)") == ["(", "<num1>", ",", "<num2>", ")"]

    def test_tag_beyond_slot_limit_is_unknown(self):
        v = Vocab.build(["use <num12> here"])
        assert "<num12>" not in v
        assert v.id_of("<num12>") == UNK_ID

    def test_unknown_token_maps_to_unk(self, vocab):
        assert vocab.id_of("zzz-not-seen") == UNK_ID

    def test_id_token_roundtrip(self, vocab):
        for token in vocab.tokens:
            assert vocab.token_of(vocab.id_of(token)) == token

    def test_targets_contribute_tokens(self):
        v = Vocab.build([], [("<keyword1>", ">", "<num1>")])
        assert ">" in v

    def test_constructor_rejects_wrong_reserved_prefix(self):
        with pytest.raises(ModelError):
            Vocab(("[PAD]", "[UNK]", "oops"))

    def test_constructor_rejects_duplicates(self):
        tokens = reserved_tokens() + ("dup", "dup")
        with pytest.raises(ModelError):
            Vocab(tokens)


class TestLosses:
    def test_uniform_binary_ce_is_ln2(self):
        loss = weighted_ce(np.array([0.5, 0.5]), 0, np.array([1.0, 1.0]))
        assert abs(loss - math.log(2)) < 1e-9

    def test_weighted_ce_scales_by_class_weight(self):
        loss = weighted_ce(np.array([0.5, 0.5]), 1, np.array([1.0, 3.0]))
        assert abs(loss - 3 * math.log(2)) < 1e-9

    def test_identity_weights_equal_plain_ce(self):
        rng = np.random.default_rng(7)
        ident = np.ones(2)
        for _ in range(1000):
            p = rng.dirichlet((1.0, 1.0))
            label = int(rng.integers(2))
            assert weighted_ce(p, label, ident) == -math.log(max(p[label], 1e-12))

    def test_zero_probability_is_clamped(self):
        loss = weighted_ce(np.array([0.0, 1.0]), 0, np.ones(2))
        assert math.isfinite(loss)
        assert loss == -math.log(1e-12)

    def test_detection_weights_balanced(self):
        assert detection_weights([0, 1, 0, 1]).tolist() == [1.0, 1.0]

    def test_detection_weights_inverse_frequency(self):
        w = detection_weights([1, 1, 1, 0])
        assert np.allclose(w, [2.0, 2.0 / 3.0])

    def test_detection_weights_need_both_classes(self):
        with pytest.raises(ModelError):
            detection_weights([1, 1, 1])


class TestHeads:
    def test_detect_probabilities_normalize(self, model):
        rng = np.random.default_rng(3)
        h = rng.normal(size=(1000, SMALL.d_model))
        probs = model.detect(h)
        assert probs.shape == (1000, 2)
        assert np.all(probs > 0)
        assert np.max(np.abs(probs.sum(axis=1) - 1.0)) < 1e-12

    def test_category_probabilities_normalize(self, model):
        rng = np.random.default_rng(4)
        probs = model.classify_category(rng.normal(size=(500, SMALL.d_model)))
        assert probs.shape == (500, 5)
        assert np.max(np.abs(probs.sum(axis=1) - 1.0)) < 1e-12

    def test_zeroed_output_layer_gives_uniform(self, vocab):
        m = Model.initialize(SMALL, vocab, rng_seed=1)
        m.params["detect/w3"][:] = 0.0
        m.params["detect/b3"][:] = 0.0
        m.params["category/w3"][:] = 0.0
        m.params["category/b3"][:] = 0.0
        h = np.ones(SMALL.d_model)
        assert m.detect(h).tolist() == [0.5, 0.5]
        assert m.classify_category(h).tolist() == [0.2] * 5

    def test_predicted_label_tie_is_negative(self):
        assert predicted_label(np.array([0.5, 0.5])) is False
        assert predicted_label(np.array([0.4, 0.6])) is True

    def test_predicted_category_argmax(self):
        probs = np.array([0.1, 0.1, 0.6, 0.1, 0.1])
        assert predicted_category(probs) == CATEGORIES[2]


class TestEncoder:
    def test_encode_shape_and_finite(self, model, vocab):
        h = model.encode([CLS_ID] + vocab.encode(TEXTS[0]))
        assert h.shape == (SMALL.d_model,)
        assert np.all(np.isfinite(h))

    def test_encode_requires_cls(self, model, vocab):
        with pytest.raises(ModelError):
            model.encode(vocab.encode(TEXTS[0]))

    def test_encode_rejects_long_sequences(self, model):
        ids = [CLS_ID] + [5] * SMALL.max_len
        with pytest.raises(SequenceTooLong):
            model.encode(ids)

    def test_encode_finite_on_random_sequences(self, model, vocab):
        rng = np.random.default_rng(11)
        for _ in range(300):
            n = int(rng.integers(1, SMALL.max_len))
            ids = [CLS_ID] + rng.integers(0, len(vocab), size=n).tolist()
            h = model.encode(ids)
            assert np.all(np.isfinite(h))

    def test_pad_content_never_changes_outputs(self, model, batch, weights):
        losses, grads = model.loss_and_grads(batch, weights, LossCoefficients())
        alt_ids = batch.ids.copy()
        alt_ids[~batch.mask] = 7  # arbitrary real token in the pad slots
        alt = Batch(
            alt_ids, batch.mask, batch.labels, batch.cat_ids,
            batch.gen_in, batch.gen_out, batch.gen_mask,
        )
        alt_losses, alt_grads = model.loss_and_grads(alt, weights, LossCoefficients())
        assert losses == alt_losses
        for name, g in grads.items():
            assert np.array_equal(g, alt_grads[name])


class TestGenerate:
    def test_greedy_is_deterministic(self, model, vocab):
        h = model.encode([CLS_ID] + vocab.encode(TEXTS[0]))
        tags = {"keyword1": "a", "num1": "1", "unit1": "mb"}
        first = model.generate(h, tags)
        second = model.generate(h, tags)
        assert first.tokens == second.tokens
        assert first.truncated == second.truncated

    def test_absent_tags_are_never_emitted(self, vocab):
        m = Model.initialize(SMALL, vocab, rng_seed=2)
        m.params["generator/out_b"][vocab.id_of("<bool1>")] = 50.0
        h = np.zeros(SMALL.d_model)
        result = m.generate(h, {"keyword1": "a", "num1": "1"}, max_len=8)
        assert "<bool1>" not in result.tokens

    def test_truncation_flag(self, vocab):
        m = Model.initialize(SMALL, vocab, rng_seed=2)
        m.params["generator/out_b"][:] = 0.0
        m.params["generator/out_w"][:] = 0.0
        m.params["generator/out_b"][vocab.id_of("and")] = 50.0
        h = np.zeros(SMALL.d_model)
        result = m.generate(h, {"keyword1": "a"}, max_len=4)
        assert result.truncated
        assert list(result.tokens) == ["and"] * 4

    def test_immediate_eos_is_not_truncated(self, vocab):
        m = Model.initialize(SMALL, vocab, rng_seed=2)
        m.params["generator/out_b"][:] = 0.0
        m.params["generator/out_w"][:] = 0.0
        m.params["generator/out_b"][EOS_ID] = 50.0
        result = m.generate(np.zeros(SMALL.d_model), {"keyword1": "a"})
        assert list(result.tokens) == []
        assert not result.truncated

    def test_control_tokens_never_appear(self, model, vocab):
        h = model.encode([CLS_ID] + vocab.encode(TEXTS[1]))
        result = model.generate(h, {"keyword1": "a", "keyword2": "b", "bool1": "on"})
        banned = {"[PAD]", "[UNK]", "[CLS]", "[BOS]", "[EOS]"}
        assert banned.isdisjoint(result.tokens)


class TestBatching:
    def test_make_batch_padding(self, vocab):
        rows = [
            encode_row(vocab, TEXTS[0], 1, 0, TARGETS[0]),
            encode_row(vocab, TEXTS[2], 0, -1, ()),
        ]
        b = make_batch(rows)
        assert b.size == 2
        assert b.ids.shape == b.mask.shape
        assert b.mask[0].sum() == len(rows[0][0])
        assert np.all(b.ids[~b.mask] == PAD_ID)
        assert b.labels.tolist() == [1, 0]
        assert b.cat_ids.tolist() == [0, -1]
        # generator width covers the positive row's target plus EOS
        assert b.gen_out.shape[1] == len(TARGETS[0]) + 1
        assert not b.gen_mask[1].any()

    def test_make_batch_without_positives(self, vocab):
        rows = [encode_row(vocab, TEXTS[2], 0, -1, ())]
        b = make_batch(rows)
        assert b.gen_in.shape == (1, 1)
        assert not b.gen_mask.any()

    def test_config_validation(self):
        with pytest.raises(ModelError):
            ModelConfig(d_model=15, heads=4)
        with pytest.raises(ModelError):
            ModelConfig(d_model=0)
        with pytest.raises(ModelError):
            TrainConfig(batch_size=0)


def toy_samples():
    """Tiny linearly separable detection corpus with per-type targets."""
    samples = []
    for i in range(8):
        kw = "<keyword1>"
        samples.append(LabeledSample(
            text=f"set {kw} to more than <num1> units .",
            tags={kw: f"opt{i}", "<num1>": str(100 + i)},
            label=True,
            target=(kw, ">=", "<num1>"),
            category=Category.QUANTITATIVE,
            type=ExtractionType.SIMPLE,
        ))
    for i in range(8):
        samples.append(LabeledSample(
            text="see page <num1> for details of <keyword1> .",
            tags={"keyword1": f"opt{i}", "num1": str(i)},
            label=False,
            target=(),
            category=None,
            type=ExtractionType.SIMPLE,
        ))
    return samples


class TestTraining:
    def test_zero_learning_rate_leaves_params_unchanged(self, vocab):
        samples = toy_samples()
        result = train(
            samples,
            TrainConfig(epochs=3, lr=0.0, rng_seed=5),
            SMALL,
        )
        fresh = Model.initialize(
            SMALL, build_vocab(samples), np.random.SeedSequence([5, 0])
        )
        for name, tensor in fresh.params.items():
            assert np.array_equal(result.model.params[name], tensor)

    def test_toy_corpus_reaches_full_training_accuracy(self):
        samples = toy_samples()
        result = train(samples, TrainConfig(epochs=60, rng_seed=1), SMALL)
        m = result.model
        hits = 0
        for s in samples:
            h = m.encode_text(s.text)
            hits += predicted_label(m.detect(h)) == s.label
        assert hits == len(samples)
        assert result.loss_log[-1].total < result.loss_log[0].total

    def test_loss_log_has_one_entry_per_epoch(self):
        result = train(toy_samples(), TrainConfig(epochs=4, rng_seed=2), SMALL)
        assert len(result.loss_log) == 4
        for entry in result.loss_log:
            assert math.isfinite(entry.total)

    def test_training_is_deterministic(self, tmp_path):
        paths = []
        for run in ("a", "b"):
            result = train(toy_samples(), TrainConfig(epochs=3, rng_seed=9), SMALL)
            out = tmp_path / f"{run}.spsy"
            save_checkpoint(result.model, out)
            paths.append(out)
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_nan_loss_raises_divergence(self, monkeypatch):
        from specsyn.model import DivergenceError

        def poisoned(self, batch, weights, coeffs=LossCoefficients()):
            losses = {
                "total": float("nan"), "detection": 0.0,
                "generation": 0.0, "category": 0.0,
            }
            return losses, {k: np.zeros_like(v) for k, v in self.params.items()}

        monkeypatch.setattr(Model, "loss_and_grads", poisoned)
        with pytest.raises(DivergenceError):
            train(toy_samples(), TrainConfig(epochs=1), SMALL)

    def test_empty_dataset_rejected(self):
        with pytest.raises(ModelError):
            train([], TrainConfig(epochs=1), SMALL)


class TestCheckpoint:
    def test_roundtrip_bit_identical(self, model, vocab, tmp_path):
        path = tmp_path / "m.spsy"
        save_checkpoint(model, path)
        loaded = load_checkpoint(path)
        assert loaded.config == model.config
        assert loaded.vocab.tokens == vocab.tokens
        for name, tensor in model.params.items():
            assert np.array_equal(loaded.params[name], tensor)
        text = TEXTS[1]
        assert np.array_equal(loaded.encode_text(text), model.encode_text(text))

    def test_save_is_byte_stable(self, model, tmp_path):
        a, b = tmp_path / "a.spsy", tmp_path / "b.spsy"
        save_checkpoint(model, a)
        save_checkpoint(model, b)
        assert a.read_bytes() == b.read_bytes()

    def test_bad_magic_rejected(self, model, tmp_path):
        path = tmp_path / "m.spsy"
        save_checkpoint(model, path)
        blob = bytearray(path.read_bytes())
        blob[0] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_unknown_version_rejected(self, model, tmp_path):
        path = tmp_path / "m.spsy"
        save_checkpoint(model, path)
        blob = bytearray(path.read_bytes())
        blob[4:8] = (99).to_bytes(4, "little")
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_truncated_file_rejected(self, model, tmp_path):
        path = tmp_path / "m.spsy"
        save_checkpoint(model, path)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) - 16])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)


class TestGradients:
    def test_output_layer_matches_finite_differences(self, model, batch, weights):
        err = grad_check(model, batch, weights, names=["detect/w3", "detect/b3"])
        assert err < 1e-7

    def test_zero_coefficients_zero_gradients(self, model, batch, weights):
        coeffs = LossCoefficients(detection=0.0, generation=0.0, category=0.0)
        losses, grads = model.loss_and_grads(batch, weights, coeffs)
        assert losses["total"] == 0.0
        for g in grads.values():
            assert np.all(g == 0.0)

    def test_single_coefficient_isolates_head(self, model, batch, weights):
        only_det = LossCoefficients(detection=1.0, generation=0.0, category=0.0)
        _, grads = model.loss_and_grads(batch, weights, only_det)
        assert np.all(grads["generator/wh"] == 0.0)
        assert np.all(grads["category/w1"] == 0.0)
        assert np.any(grads["detect/w1"] != 0.0)
