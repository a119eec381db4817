"""Embedding -> recurrent layers -> softmax head, trained by BPTT with Adam.

Three heads share one body: a 2-way number classifier (singular/plural verb
from the prefix before the verb), a 2-way grammaticality classifier (whole
sentence) and a word-level language model.
"""
from __future__ import annotations

import csv
import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np

from . import cells, checkpoint
from . import numerics as nx

log = logging.getLogger(__name__)

TASKS = ("number_prediction", "grammaticality", "language_model")
NUMBER_CLASSES = ("sg", "pl")

# random stream tags (see corpus.STREAM_GENERATE)
STREAM_INIT, STREAM_LAYER, STREAM_SHUFFLE, STREAM_BUCKETS, STREAM_DROPOUT = 21, 22, 23, 24, 25


class TrainingDiverged(FloatingPointError):
    def __init__(self, step, cause=None):
        super().__init__(f"training diverged at step {step}: {cause}")
        self.step = step


class VocabularyError(KeyError):
    pass


class Vocabulary:
    UNK = "<unk>"

    def __init__(self, tokens):
        self.tokens = list(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("duplicate vocabulary entries")

    @classmethod
    def build(cls, sentences, unk=True):
        """Sorted word types of ``sentences`` (token sequences), ``<unk>`` first."""
        types = sorted({tok for s in sentences for tok in s})
        return cls(([cls.UNK] if unk else []) + [t for t in types if t != cls.UNK])

    def encode(self, tokens):
        unk = self.index.get(self.UNK)
        ids = []
        for tok in tokens:
            i = self.index.get(tok, unk)
            if i is None:
                raise VocabularyError(f"token {tok!r} not in vocabulary")
            ids.append(i)
        return np.array(ids, dtype=np.intp)

    def covers(self, tokens):
        return self.UNK in self.index or all(t in self.index for t in tokens)

    def __len__(self):
        return len(self.tokens)

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.tokens == other.tokens


@dataclass
class ModelConfig:
    cell: str = "drnn"
    task: str = "number_prediction"
    num_layers: int = 1
    embedding_dim: int = 50
    hidden_dim: int = 50
    activation: str = "relu"
    dropout_rate: float = 0.0
    vocabulary: list | None = None
    alpha_mode: str = "sigmoid"
    inhibitory_seed: int | None = None

    @classmethod
    def classifier(cls, cell, task="number_prediction", **kw):
        """Single relu layer, embedding and hidden size 50."""
        return cls(cell=cell, task=task, **kw)

    @classmethod
    def language_model(cls, cell, **kw):
        """Two tanh layers, dropout 0.2, embedding 200, hidden 650."""
        opts = dict(num_layers=2, embedding_dim=200, hidden_dim=650, activation="tanh", dropout_rate=0.2)
        opts.update(kw)
        return cls(cell=cell, task="language_model", **opts)

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.cell not in cells.KINDS:
            raise ValueError(f"unknown cell {self.cell!r}")
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 1
    epochs: int = 10
    seed: int = 0
    gradient_clip_norm: float | None = 5.0
    alpha_init: float = cells.DEFAULT_ALPHA

    @classmethod
    def language_model(cls, **kw):
        opts = dict(batch_size=128, epochs=20)
        opts.update(kw)
        return cls(**opts)

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass
class TrainingHistory:
    metric_name: str
    epoch_loss: list = field(default_factory=list)
    epoch_metric: list = field(default_factory=list)
    epoch_alpha: list = field(default_factory=list)  # per epoch: alpha per decay layer
    step_alpha: list = field(default_factory=list)  # per optimizer step: alpha per decay layer
    best_epoch: int | None = None
    best_model: object = None

    def _better(self, metric, best):
        return metric > best if self.metric_name == "accuracy" else metric < best

    def record_epoch(self, loss, metric, alphas, model):
        self.epoch_loss.append(loss)
        self.epoch_metric.append(metric)
        self.epoch_alpha.append(list(alphas))
        if metric is not None and (self.best_epoch is None
                                   or self._better(metric, self.epoch_metric[self.best_epoch - 1])):
            self.best_epoch = len(self.epoch_loss)
            self.best_model = model

    def to_csv(self, path):
        n_alpha = len(self.epoch_alpha[0]) if self.epoch_alpha else 0
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "loss", self.metric_name] + [f"alpha_layer_{i}" for i in range(n_alpha)])
            for i, (loss, metric, alphas) in enumerate(zip(self.epoch_loss, self.epoch_metric, self.epoch_alpha)):
                w.writerow([i + 1, repr(float(loss)), "" if metric is None else repr(float(metric))]
                           + [repr(float(a)) for a in alphas])


# --------------------------------------------------------------------------
# model


@dataclass
class Model:
    config: ModelConfig
    vocab: Vocabulary
    embedding: object
    layers: list
    head_W: object
    head_b: object

    def named_arrays(self):
        """Learnable arrays in checkpoint order."""
        out = {"embedding": self.embedding}
        for i, layer in enumerate(self.layers):
            for name, value in layer.arrays().items():
                out[f"layer{i}.{name}"] = value
        out["head.W"] = self.head_W
        out["head.b"] = self.head_b
        return out

    def with_arrays(self, arrays):
        layers = []
        for i, layer in enumerate(self.layers):
            changes = {name: arrays[f"layer{i}.{name}"] for name in layer.arrays()}
            layers.append(layer.replace(**changes))
        return dataclasses.replace(self, embedding=arrays["embedding"], layers=layers,
                                   head_W=arrays["head.W"], head_b=arrays["head.b"])

    def bind(self, tape):
        return self.with_arrays({name: tape.leaf(v, name) for name, v in self.named_arrays().items()})

    def alphas(self):
        return [float(nx._val(cells.decay_value(p))) for p in self.layers if p.kind in cells.DECAY_KINDS]

    # inference helpers; evaluation code only relies on these methods

    def _require(self, *tasks):
        if self.config.task not in tasks:
            raise ValueError(f"a {self.config.task} model cannot do this; needs {' or '.join(tasks)}")

    def prefix_number_probs(self, tokens):
        """(T, 2) number probabilities after reading each prefix of ``tokens``."""
        self._require("number_prediction")
        tops = _top_states(self, self.vocab.encode(tokens))
        return np.stack([nx.softmax(_head(self, h)) for h in tops])

    def classify_number(self, prefix):
        self._require("number_prediction")
        p = nx.softmax(_head(self, _top_states(self, self.vocab.encode(prefix))[-1]))
        return float(p[0]), float(p[1])

    def judge_grammaticality(self, tokens):
        self._require("grammaticality")
        p = nx.softmax(_head(self, _top_states(self, self.vocab.encode(tokens))[-1]))
        return float(p[1])

    def token_logprobs(self, tokens):
        self._require("language_model")
        ids = self.vocab.encode(tokens)
        contexts = _lm_contexts(self, ids)
        return np.array([nx.log_softmax(_head(self, h))[i] for h, i in zip(contexts, ids)])

    def lm_logprob(self, tokens):
        return float(self.token_logprobs(tokens).sum())


def _head(model, h):
    return h @ nx.transpose(model.head_W) + model.head_b


def _run_layers(model, ids, dropout=None):
    """Top-layer hidden states after each input position.

    ``ids`` is (T,) or (B, T).  ``dropout(x)`` is applied to every layer input
    and to the top output when given.
    """
    ids = np.asarray(ids)
    batched = ids.ndim == 2
    T = ids.shape[-1]
    seq = [nx.take_rows(model.embedding, ids[:, t] if batched else ids[t]) for t in range(T)]
    for layer in model.layers:
        if dropout is not None:
            seq = [dropout(x) for x in seq]
        seq = [st.h for st in cells.run(layer, seq)] if seq else []
    if dropout is not None:
        seq = [dropout(x) for x in seq]
    return seq


def _top_states(model, ids, dropout=None):
    if len(ids) == 0:
        raise ValueError("empty input sequence")
    return _run_layers(model, ids, dropout)


def _lm_contexts(model, ids, dropout=None):
    """Top state used to predict each position: zeros first, then states after tokens[:t]."""
    ids = np.asarray(ids)
    batch = ids.shape[0] if ids.ndim == 2 else None
    h0 = np.zeros((model.config.hidden_dim,) if batch is None else (batch, model.config.hidden_dim))
    feed = ids[..., :-1]
    rest = _run_layers(model, feed, dropout) if feed.shape[-1] > 0 else []
    return [dropout(h0) if dropout is not None else h0] + rest


def init_model(model_config, vocab, seed, alpha_init=cells.DEFAULT_ALPHA):
    rng = np.random.default_rng([STREAM_INIT, seed])
    V, E, H = len(vocab), model_config.embedding_dim, model_config.hidden_dim
    embedding = rng.uniform(-0.1, 0.1, (V, E))
    layers = []
    for i in range(model_config.num_layers):
        layers.append(cells.init_parameters(
            model_config.cell, H, E if i == 0 else H, seed=[STREAM_LAYER, seed, i],
            activation=model_config.activation, alpha_init=alpha_init,
            alpha_mode=model_config.alpha_mode, inhibitory_seed=model_config.inhibitory_seed))
    n_out = V if model_config.task == "language_model" else 2
    bound = 1.0 / np.sqrt(H)
    head_W = rng.uniform(-bound, bound, (n_out, H))
    return Model(model_config, vocab, embedding, layers, head_W, np.zeros(n_out))


# --------------------------------------------------------------------------
# optimisation


def adam_init(params):
    return {name: (np.zeros_like(np.asarray(v)), np.zeros_like(np.asarray(v))) for name, v in params.items()}


def adam_step(params, grads, moments, t, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update.  Pure: returns (new_params, new_moments)."""
    if t < 1:
        raise ValueError("Adam step count starts at 1")
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    new_params, new_moments = {}, {}
    for name, p in params.items():
        g = np.asarray(grads[name])
        if not np.all(np.isfinite(g)):
            raise nx.NonFiniteError(f"non-finite gradient for {name}")
        m, v = moments[name]
        if g.shape != np.shape(p):
            raise ValueError(f"gradient shape {g.shape} != parameter shape {np.shape(p)} for {name}")
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        new_params[name] = p - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        new_moments[name] = (m, v)
    return new_params, new_moments


def global_norm(grads):
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_gradients(grads, max_norm):
    """Rescale so the global L2 norm is at most ``max_norm``; returns (grads, original norm)."""
    norm = global_norm(grads)
    if not np.isfinite(norm):
        raise nx.NonFiniteError("gradient norm is not finite")
    if max_norm is None or norm <= max_norm:
        return grads, norm
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}, norm


def _clamp_linear_alpha(model, arrays):
    for i, layer in enumerate(model.layers):
        if layer.kind in cells.DECAY_KINDS and layer.alpha_mode == "linear":
            key = f"layer{i}.alpha_logit"
            arrays[key] = np.clip(arrays[key], 1e-6, 1.0 - 1e-6)
    return arrays


class _Trainer:
    def __init__(self, model, train_config):
        self.model = model
        self.cfg = train_config
        self.moments = adam_init(model.named_arrays())
        self.t = 0

    def _gradients(self, loss_fn, batch):
        total = None
        loss_sum = 0.0
        for item in batch:
            tape = nx.Tape()
            loss = loss_fn(self.model.bind(tape), item)
            grads = nx.backward(tape, loss)
            loss_sum += float(loss.value)
            total = grads if total is None else {k: total[k] + grads[k] for k in total}
        return total, loss_sum

    def step(self, loss_fn, batch):
        """Average gradients of ``loss_fn(bound_model, item)`` over ``batch``; one Adam update."""
        self.t += 1
        try:
            with np.errstate(over="ignore", invalid="ignore"):  # the finite checks raise instead
                total, loss_sum = self._gradients(loss_fn, batch)
            if len(batch) > 1:
                total = {k: g / len(batch) for k, g in total.items()}
            total, _ = clip_gradients(total, self.cfg.gradient_clip_norm)
            arrays, self.moments = adam_step(self.model.named_arrays(), total, self.moments, self.t,
                                             self.cfg.learning_rate)
        except nx.NonFiniteError as exc:
            raise TrainingDiverged(self.t, exc) from exc
        self.model = self.model.with_arrays(_clamp_linear_alpha(self.model, arrays))
        return loss_sum / len(batch)


def classifier_loss(model, ids, label):
    h = _top_states(model, ids)[-1]
    return nx.softmax_cross_entropy(_head(model, h), label)


def classifier_example(sentence, task, vocab):
    if task == "number_prediction":
        return vocab.encode(sentence.prefix), NUMBER_CLASSES.index(sentence.subject_number)
    if task == "grammaticality":
        return vocab.encode(sentence.tokens), int(sentence.grammatical)
    raise ValueError(f"{task!r} is not a classification task")


def _classifier_accuracy(model, examples):
    correct = 0
    for ids, label in examples:
        p = nx.softmax(_head(model, _top_states(model, ids)[-1]))
        correct += int(p[label] > 0.5)
    return correct / len(examples)


def train_classifier(model_config, train_config, corpus, valid=None, vocab=None):
    """Train a number-prediction or grammaticality classifier on annotated sentences.

    Returns ``(model, history)``; ``history.best_model`` is the epoch with the
    best validation accuracy when ``valid`` is given.
    """
    if not corpus:
        raise ValueError("empty training corpus")
    task = model_config.task
    if vocab is None:
        vocab = Vocabulary(model_config.vocabulary) if model_config.vocabulary else \
            Vocabulary.build(s.tokens for s in corpus)
    examples = [classifier_example(s, task, vocab) for s in corpus]
    valid_examples = [classifier_example(s, task, vocab) for s in valid] if valid else None
    model = init_model(model_config, vocab, train_config.seed, train_config.alpha_init)
    trainer = _Trainer(model, train_config)
    history = TrainingHistory("accuracy")
    rng = np.random.default_rng([STREAM_SHUFFLE, train_config.seed])
    bs = train_config.batch_size

    def loss_fn(bound, item):
        return classifier_loss(bound, *item)

    for epoch in range(train_config.epochs):
        order = rng.permutation(len(examples))
        losses = []
        for start in range(0, len(order), bs):
            batch = [examples[i] for i in order[start:start + bs]]
            losses.append(trainer.step(loss_fn, batch))
            history.step_alpha.append(trainer.model.alphas())
        metric = _classifier_accuracy(trainer.model, valid_examples) if valid_examples else None
        history.record_epoch(float(np.mean(losses)), metric, trainer.model.alphas(), trainer.model)
        log.info("epoch %d loss %.4f valid acc %s", epoch + 1, history.epoch_loss[-1], metric)
    return trainer.model, history


# --------------------------------------------------------------------------
# language model


def _dropout_fn(rate, rng):
    if rate <= 0.0:
        return None
    keep = 1.0 - rate

    def apply(x):
        mask = (rng.random(np.shape(nx._val(x))) < keep) / keep
        return nx.mul(x, mask)

    return apply


def lm_loss(model, ids, dropout=None):
    """Mean next-token cross-entropy over a (B, T) batch of equal-length sentences."""
    ids = np.asarray(ids)
    contexts = _lm_contexts(model, ids, dropout)
    loss = None
    for t, h in enumerate(contexts):
        term = nx.softmax_cross_entropy(_head(model, h), ids[:, t], reduction="sum")
        loss = term if loss is None else loss + term
    return loss * (1.0 / ids.size)


def length_buckets(encoded, batch_size, rng):
    """Batches of equal-length sentences; order shuffled by ``rng``."""
    by_len = {}
    for i, ids in enumerate(encoded):
        by_len.setdefault(len(ids), []).append(i)
    batches = []
    for length in sorted(by_len):
        idx = by_len[length]
        idx = [idx[j] for j in rng.permutation(len(idx))]
        for start in range(0, len(idx), batch_size):
            batches.append(np.stack([encoded[j] for j in idx[start:start + batch_size]]))
    return [batches[j] for j in rng.permutation(len(batches))]


def corpus_perplexity(model, sentences):
    total, count = 0.0, 0
    for s in sentences:
        total += model.lm_logprob(s)
        count += len(s)
    return float(np.exp(-total / count))


def train_lm(model_config, train_config, corpus, valid=None, vocab=None):
    """Train a word-level language model on token sequences (or annotated sentences)."""
    sentences = [tuple(getattr(s, "tokens", s)) for s in corpus]
    sentences = [s for s in sentences if s]
    if not sentences:
        raise ValueError("empty training corpus")
    valid_sents = [tuple(getattr(s, "tokens", s)) for s in valid] if valid else None
    if vocab is None:
        vocab = Vocabulary(model_config.vocabulary) if model_config.vocabulary else Vocabulary.build(sentences)
    encoded = [vocab.encode(s) for s in sentences]
    model = init_model(model_config, vocab, train_config.seed, train_config.alpha_init)
    trainer = _Trainer(model, train_config)
    history = TrainingHistory("perplexity")
    rng = np.random.default_rng([STREAM_BUCKETS, train_config.seed])
    drop_rng = np.random.default_rng([STREAM_DROPOUT, train_config.seed])
    dropout = _dropout_fn(model_config.dropout_rate, drop_rng)

    def loss_fn(bound, batch_ids):
        return lm_loss(bound, batch_ids, dropout)

    for epoch in range(train_config.epochs):
        losses = []
        for batch in length_buckets(encoded, train_config.batch_size, rng):
            losses.append(trainer.step(loss_fn, [batch]))
            history.step_alpha.append(trainer.model.alphas())
        metric = corpus_perplexity(trainer.model, valid_sents) if valid_sents else None
        history.record_epoch(float(np.mean(losses)), metric, trainer.model.alphas(), trainer.model)
        log.info("epoch %d loss %.4f valid ppl %s", epoch + 1, history.epoch_loss[-1], metric)
    return trainer.model, history


# --------------------------------------------------------------------------
# module-level inference API


def classify_number(model, prefix_tokens):
    """(p_singular, p_plural) for the verb following ``prefix_tokens``."""
    return model.classify_number(prefix_tokens)


def judge_grammaticality(model, tokens):
    return model.judge_grammaticality(tokens)


def lm_logprob(model, tokens):
    """Sum over positions of log p(token_t | tokens before t), dropout off."""
    return model.lm_logprob(tokens)


# --------------------------------------------------------------------------
# checkpoints


def model_bytes(model, seed=None):
    cfg = dataclasses.asdict(model.config)
    header = {
        "format": "model",
        "config": cfg,
        "vocabulary": model.vocab.tokens,
        "layers": [cells.cell_header(p) for p in model.layers],
        "seed": seed,
    }
    arrays = [("embedding", np.asarray(model.embedding))]
    for i, layer in enumerate(model.layers):
        arrays.extend(cells.cell_arrays(layer, prefix=f"layer{i}."))
    arrays += [("head.W", np.asarray(model.head_W)), ("head.b", np.asarray(model.head_b))]
    return checkpoint.encode(header, arrays)


def save_model(path, model, seed=None):
    with open(path, "wb") as fh:
        fh.write(model_bytes(model, seed))


def load_model(path):
    header, arrays = checkpoint.read(path)
    if header.get("format") != "model":
        raise checkpoint.CheckpointError("not a model checkpoint")
    config = ModelConfig(**header["config"])
    layers = [cells.cell_from_arrays(h, arrays, prefix=f"layer{i}.") for i, h in enumerate(header["layers"])]
    return Model(config, Vocabulary(header["vocabulary"]), arrays["embedding"], layers,
                 arrays["head.W"], arrays["head.b"])
