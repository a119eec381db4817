import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from decay_rnn import cells, corpus, training as T
from decay_rnn import numerics as nx
from decay_rnn.gradcheck import relative_error


def tiny_model(task, head_W, head_b, vocab=("a", "b")):
    """Hidden 1, embedding 1, tanh SRN: h' = tanh(0.5 h + e(x))."""
    cfg = T.ModelConfig(cell="srn", task=task, embedding_dim=1, hidden_dim=1, activation="tanh")
    layer = cells.CellParameters("srn", np.array([[0.5]]), np.array([[1.0]]), np.zeros(1))
    emb = np.array([[1.0], [-1.0]])[:len(vocab)]
    return T.Model(cfg, T.Vocabulary(vocab), emb, [layer], np.array(head_W, float), np.array(head_b, float))


def zero_head(model):
    return T.Model(model.config, model.vocab, model.embedding, model.layers,
                   np.zeros_like(model.head_W), np.zeros_like(model.head_b))


@pytest.fixture(scope="module")
def lex():
    return corpus.load_lexicon()


@pytest.fixture(scope="module")
def simple(lex):
    t = [x for x in corpus.load_shipped_templates("targeted", lex) if x.name == "simple_agreement"]
    return corpus.generate(t, lex, seed=0, count=10, grammatical_ratio=1.0)


# --------------------------------------------------------------------------
# vocabulary and configs


def test_vocabulary_build_and_encode():
    v = T.Vocabulary.build([("b", "a"), ("c", "a")])
    assert v.tokens == ["<unk>", "a", "b", "c"]
    np.testing.assert_array_equal(v.encode(["c", "zzz"]), [3, 0])
    strict = T.Vocabulary.build([("a",)], unk=False)
    with pytest.raises(T.VocabularyError):
        strict.encode(["b"])
    with pytest.raises(ValueError):
        T.Vocabulary(["a", "a"])


def test_presets():
    c = T.ModelConfig.classifier("drnn")
    assert (c.num_layers, c.activation, c.embedding_dim, c.hidden_dim, c.dropout_rate) == (1, "relu", 50, 50, 0.0)
    lm = T.ModelConfig.language_model("lstm")
    assert (lm.num_layers, lm.activation, lm.embedding_dim, lm.hidden_dim, lm.dropout_rate) == \
        (2, "tanh", 200, 650, 0.2)
    tc, tl = T.TrainConfig(), T.TrainConfig.language_model()
    assert (tc.learning_rate, tc.batch_size, tc.epochs, tc.gradient_clip_norm) == (1e-3, 1, 10, 5.0)
    assert (tl.batch_size, tl.epochs) == (128, 20)


@pytest.mark.parametrize("kwargs", [dict(learning_rate=0.0), dict(batch_size=0), dict(epochs=-1)])
def test_train_config_invariants(kwargs):
    with pytest.raises(ValueError):
        T.TrainConfig(**kwargs)


def test_model_config_invariants():
    with pytest.raises(ValueError):
        T.ModelConfig(task="translation")
    with pytest.raises(ValueError):
        T.ModelConfig(cell="transformer")


# --------------------------------------------------------------------------
# Adam and clipping


def test_adam_zero_gradient_leaves_parameters():
    p = {"w": np.array([1.0, -2.0])}
    new, _ = T.adam_step(p, {"w": np.zeros(2)}, T.adam_init(p), 1, 1e-3)
    np.testing.assert_array_equal(new["w"], p["w"])


def test_adam_first_step_closed_form():
    # m_hat = g and v_hat = g^2 at t=1, so the step is lr * g / (|g| + eps)
    lr, eps = 1e-3, 1e-8
    p = {"theta": np.array(0.7)}
    new, moments = T.adam_step(p, {"theta": np.array(1.0)}, T.adam_init(p), 1, lr)
    assert moments["theta"] == (pytest.approx(0.1), pytest.approx(0.001))
    assert float(new["theta"]) == pytest.approx(0.7 - lr * 1.0 / (1.0 + eps), abs=1e-16)


def test_adam_is_deterministic_and_checks_inputs():
    p = {"w": np.array([0.3, 0.1])}
    g = {"w": np.array([0.5, -1.5])}
    a = T.adam_step(p, g, T.adam_init(p), 3, 1e-2)
    b = T.adam_step(p, g, T.adam_init(p), 3, 1e-2)
    np.testing.assert_array_equal(a[0]["w"], b[0]["w"])
    with pytest.raises(ValueError):
        T.adam_step(p, g, T.adam_init(p), 0, 1e-2)
    with pytest.raises(nx.NonFiniteError):
        T.adam_step(p, {"w": np.array([np.nan, 0.0])}, T.adam_init(p), 1, 1e-2)
    with pytest.raises(ValueError):
        T.adam_step(p, {"w": np.zeros(3)}, T.adam_init(p), 1, 1e-2)


def test_adam_second_step_by_hand():
    lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
    p = {"x": np.array(1.0)}
    p1, mom = T.adam_step(p, {"x": np.array(2.0)}, T.adam_init(p), 1, lr)
    p2, _ = T.adam_step(p1, {"x": np.array(-1.0)}, mom, 2, lr)
    m = b1 * (1 - b1) * 2.0 + (1 - b1) * -1.0
    v = b2 * (1 - b2) * 4.0 + (1 - b2) * 1.0
    mh, vh = m / (1 - b1 ** 2), v / (1 - b2 ** 2)
    assert float(p2["x"]) == pytest.approx(float(p1["x"]) - lr * mh / (math.sqrt(vh) + eps), abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.1, 10.0))
def test_clipping_bounds_norm_and_keeps_direction(seed, max_norm):
    r = np.random.default_rng(seed)
    grads = {"a": r.normal(size=(3, 2)) * 5, "b": r.normal(size=4)}
    clipped, norm = T.clip_gradients(grads, max_norm)
    assert T.global_norm(clipped) <= max_norm * (1 + 1e-12)
    scale = min(1.0, max_norm / norm)
    for k in grads:
        np.testing.assert_allclose(clipped[k], grads[k] * scale, rtol=1e-12, atol=0)


# --------------------------------------------------------------------------
# inference oracles


def test_zero_head_gives_even_odds():
    m = zero_head(tiny_model("number_prediction", [[1.0], [-1.0]], [0, 0]))
    assert m.classify_number(["a", "b"]) == (0.5, 0.5)
    g = zero_head(tiny_model("grammaticality", [[1.0], [-1.0]], [0, 0]))
    assert g.judge_grammaticality(["a"]) == 0.5


def test_classify_number_scalar_oracle():
    m = tiny_model("number_prediction", [[1.0], [-1.0]], [0.0, 0.0])
    h1 = math.tanh(1.0)
    h2 = math.tanh(0.5 * h1 - 1.0)
    p_sg = 1.0 / (1.0 + math.exp(-2 * h2))
    got = T.classify_number(m, ["a", "b"])
    assert got[0] == pytest.approx(p_sg, abs=1e-15)
    assert sum(got) == pytest.approx(1.0, abs=1e-15)
    curve = m.prefix_number_probs(["a", "b"])
    assert curve[0, 0] == pytest.approx(1.0 / (1.0 + math.exp(-2 * h1)), abs=1e-15)


def test_judge_grammaticality_scalar_oracle():
    m = tiny_model("grammaticality", [[0.0], [3.0]], [0.2, 0.0])
    h1 = math.tanh(-1.0)
    p = 1.0 / (1.0 + math.exp(-(3.0 * h1 - 0.2)))
    assert T.judge_grammaticality(m, ["b"]) == pytest.approx(p, abs=1e-15)


def test_lm_logprob_scalar_oracle():
    m = tiny_model("language_model", [[2.0], [0.0]], [0.0, 0.5])

    def logp(h, tok):
        z = [2.0 * h, 0.5]
        return z[tok] - math.log(math.exp(z[0]) + math.exp(z[1]))

    h1 = math.tanh(1.0)
    h2 = math.tanh(0.5 * h1 - 1.0)
    want = logp(0.0, 0) + logp(h1, 1) + logp(h2, 0)
    assert T.lm_logprob(m, ["a", "b", "a"]) == pytest.approx(want, abs=1e-14)
    np.testing.assert_allclose(m.token_logprobs(["a", "b", "a"]).sum(), want, atol=1e-14)


def test_lm_logprob_uniform_and_forced():
    m = zero_head(tiny_model("language_model", [[2.0], [0.0]], [0.0, 0.5]))
    assert m.lm_logprob(["a", "b", "b", "a"]) == pytest.approx(-4 * math.log(2), abs=1e-14)
    one = tiny_model("language_model", [[1.0]], [0.0], vocab=("a",))
    assert one.lm_logprob(["a", "a", "a"]) == 0.0


def test_task_mismatch_is_an_error():
    m = tiny_model("language_model", [[2.0], [0.0]], [0.0, 0.5])
    with pytest.raises(ValueError):
        m.classify_number(["a"])
    with pytest.raises(ValueError):
        tiny_model("number_prediction", [[1.0], [-1.0]], [0, 0]).lm_logprob(["a"])


# --------------------------------------------------------------------------
# model gradients (whole pipeline against finite differences)


@pytest.mark.parametrize("cell", ["drnn", "lstm"])
def test_lm_loss_gradients_match_finite_differences(cell):
    vocab = T.Vocabulary(["a", "b", "c"])
    cfg = T.ModelConfig(cell=cell, task="language_model", num_layers=2, embedding_dim=3, hidden_dim=4,
                        activation="tanh")
    model = T.init_model(cfg, vocab, seed=1)
    ids = np.array([[0, 2, 1, 1], [2, 2, 0, 1]])
    tape = nx.Tape()
    analytic = nx.backward(tape, T.lm_loss(model.bind(tape), ids))
    arrays = model.named_arrays()
    for name in ("embedding", "layer0.U", "layer1.W", "head.W", "head.b"):
        def f(v, name=name):
            return float(T.lm_loss(model.with_arrays({**arrays, name: v}), ids))
        numeric = nx.finite_difference_gradient(f, arrays[name])
        assert relative_error(analytic[name], numeric) < 1e-6, name


def test_lm_batch_loss_is_token_mean():
    vocab = T.Vocabulary(["a", "b", "c"])
    cfg = T.ModelConfig(cell="gru", task="language_model", embedding_dim=3, hidden_dim=4)
    model = T.init_model(cfg, vocab, seed=2)
    ids = np.array([[0, 2, 1], [2, 2, 0]])
    want = -(model.lm_logprob(["a", "c", "b"]) + model.lm_logprob(["c", "c", "a"])) / 6
    assert float(T.lm_loss(model, ids)) == pytest.approx(want, abs=1e-13)


# --------------------------------------------------------------------------
# training


def test_zero_epochs_returns_initialization(simple):
    cfg = T.ModelConfig.classifier("drnn", hidden_dim=6, embedding_dim=4)
    model, history = T.train_classifier(cfg, T.TrainConfig(epochs=0, seed=3), simple)
    init = T.init_model(cfg, model.vocab, seed=3)
    for name, value in init.named_arrays().items():
        np.testing.assert_array_equal(model.named_arrays()[name], value)
    assert history.epoch_loss == [] and history.step_alpha == []


def test_empty_corpus_rejected():
    with pytest.raises(ValueError):
        T.train_classifier(T.ModelConfig.classifier("srn"), T.TrainConfig(), [])
    with pytest.raises(ValueError):
        T.train_lm(T.ModelConfig.language_model("srn"), T.TrainConfig(), [])


def test_number_input_is_truncated_before_the_verb(simple):
    vocab = T.Vocabulary.build([s.tokens for s in simple])
    s = simple[0]
    ids, label = T.classifier_example(s, "number_prediction", vocab)
    assert len(ids) == s.verb_index
    assert label == T.NUMBER_CLASSES.index(s.subject_number)


@pytest.mark.parametrize("cell", ["drnn", "srn"])
def test_memorization(simple, cell):
    cfg = T.ModelConfig.classifier(cell, hidden_dim=16, embedding_dim=8)
    model, history = T.train_classifier(cfg, T.TrainConfig(epochs=200, seed=0), simple[:10])
    from decay_rnn.evaluation import accuracy
    assert accuracy(model, "number_prediction", simple[:10])[0] == 1.0
    assert len(history.step_alpha) == 200 * 10


def test_loss_strictly_decreases_first_five_steps(simple):
    cfg = T.ModelConfig.classifier("drnn", hidden_dim=16, embedding_dim=8)
    vocab = T.Vocabulary.build([s.tokens for s in simple])
    batch = [T.classifier_example(s, "number_prediction", vocab) for s in simple[:10]]
    trainer = T._Trainer(T.init_model(cfg, vocab, seed=0), T.TrainConfig(batch_size=10))

    def loss_fn(bound, item):
        return T.classifier_loss(bound, *item)

    losses = [trainer.step(loss_fn, batch) for _ in range(6)]
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_dale_and_alpha_hold_through_training(simple):
    cfg = T.ModelConfig.classifier("drnn", hidden_dim=10, embedding_dim=6)
    model, history = T.train_classifier(cfg, T.TrainConfig(epochs=5, seed=1, learning_rate=1e-2), simple)
    layer = model.layers[0]
    eff = cells.effective_recurrent_matrix(layer)
    for j, sign in enumerate(layer.dale_signs):
        assert np.all(eff[:, j] * sign >= 0)
    assert all(0 < a < 1 for step in history.step_alpha for a in step)


def test_linear_alpha_stays_clamped(simple):
    cfg = T.ModelConfig.classifier("sdrnn", hidden_dim=6, embedding_dim=4, alpha_mode="linear")
    _, history = T.train_classifier(cfg, T.TrainConfig(epochs=3, learning_rate=0.5, alpha_init=0.99), simple)
    assert all(0 < a < 1 for step in history.step_alpha for a in step)


def test_divergence_reports_the_step(simple):
    cfg = T.ModelConfig.classifier("srn", hidden_dim=6, embedding_dim=4)
    with pytest.raises(T.TrainingDiverged) as info:
        T.train_classifier(cfg, T.TrainConfig(epochs=3, learning_rate=1e300, gradient_clip_norm=None), simple)
    assert info.value.step >= 1
    assert f"step {info.value.step}" in str(info.value)


def test_same_seed_same_checkpoint_bytes(simple, tmp_path):
    cfg = T.ModelConfig.classifier("drnn", hidden_dim=6, embedding_dim=4)
    blobs = []
    for _ in range(2):
        model, _ = T.train_classifier(cfg, T.TrainConfig(epochs=2, seed=7), simple)
        blobs.append(T.model_bytes(model, seed=7))
    assert blobs[0] == blobs[1]


def test_history_csv(simple, tmp_path):
    cfg = T.ModelConfig.classifier("drnn", hidden_dim=6, embedding_dim=4)
    _, history = T.train_classifier(cfg, T.TrainConfig(epochs=2), simple, valid=simple)
    history.to_csv(tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "epoch,loss,accuracy,alpha_layer_0"
    assert len(lines) == 3
    assert history.best_epoch in (1, 2) and history.best_model is not None


def test_lm_repeated_sentence_perplexity_approaches_one():
    sentence = ("the", "author", "laughs", "loudly")
    cfg = T.ModelConfig.language_model("drnn", embedding_dim=8, hidden_dim=16, dropout_rate=0.0)
    model, history = T.train_lm(cfg, T.TrainConfig.language_model(epochs=400, learning_rate=1e-2, batch_size=4),
                                [sentence] * 4, valid=[sentence])
    assert history.epoch_metric[-1] < 1.05
    assert history.epoch_metric[-1] < history.epoch_metric[0]


def test_lm_training_deterministic_without_dropout():
    sents = [("a", "b", "c"), ("b", "c"), ("c", "a", "a"), ("a", "b")]
    cfg = T.ModelConfig.language_model("sdrnn", embedding_dim=4, hidden_dim=5, dropout_rate=0.0)
    runs = [T.train_lm(cfg, T.TrainConfig.language_model(epochs=3, batch_size=2), sents)[1].epoch_loss
            for _ in range(2)]
    assert runs[0] == runs[1]


def test_lm_dropout_is_seeded():
    sents = [("a", "b", "c"), ("b", "c", "a")]
    cfg = T.ModelConfig.language_model("drnn", embedding_dim=4, hidden_dim=5)
    a = T.train_lm(cfg, T.TrainConfig.language_model(epochs=2, seed=1), sents)[0]
    b = T.train_lm(cfg, T.TrainConfig.language_model(epochs=2, seed=1), sents)[0]
    assert T.model_bytes(a) == T.model_bytes(b)


def test_length_buckets_cover_everything_once():
    enc = [np.arange(n) for n in (3, 2, 3, 5, 2, 3)]
    batches = T.length_buckets(enc, 2, np.random.default_rng(0))
    assert sum(len(b) for b in batches) == 6
    assert all(b.ndim == 2 for b in batches)
    assert sorted(b.shape[1] for b in batches) == [2, 3, 3, 5]


@pytest.mark.parametrize("cell", cells.KINDS)
def test_model_checkpoint_round_trip_is_bit_exact(tmp_path, cell):
    vocab = T.Vocabulary(["<unk>", "a", "b"])
    cfg = T.ModelConfig(cell=cell, task="language_model", num_layers=2, embedding_dim=3, hidden_dim=4)
    model = T.init_model(cfg, vocab, seed=4)
    T.save_model(tmp_path / "m.ckpt", model, seed=4)
    back = T.load_model(tmp_path / "m.ckpt")
    assert back.config == model.config and back.vocab == model.vocab
    assert back.lm_logprob(["a", "b", "zzz"]) == model.lm_logprob(["a", "b", "zzz"])
    assert T.model_bytes(back, seed=4) == (tmp_path / "m.ckpt").read_bytes()


def test_cell_checkpoint_is_not_a_model(tmp_path):
    cells.save_cell(tmp_path / "c.ckpt", cells.init_parameters("srn", 2, 2, seed=0))
    with pytest.raises(Exception):
        T.load_model(tmp_path / "c.ckpt")
