"""Measurement protocols over frozen models.

Every function takes a model object and only calls its inference methods
(``classify_number``, ``prefix_number_probs``, ``judge_grammaticality``,
``lm_logprob``), so hand-built stand-ins work as fixtures.  Ties always count
as incorrect: a probability of exactly 0.5, or equal pair log-probabilities.
"""
from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

NUMBER_INDEX = {"sg": 0, "pl": 1}


def thread_count():
    """Worker threads for sharded evaluation, capped by DRNN_THREADS (default 1)."""
    try:
        return max(1, int(os.environ.get("DRNN_THREADS", "1")))
    except ValueError:
        return 1


def _map(fn, items):
    """Ordered map, optionally across threads; output order never depends on scheduling."""
    items = list(items)
    n = thread_count()
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


@dataclass
class ReportRow:
    label: str
    phenomenon: str
    range_tag: str
    accuracy: float
    n_items: int
    correct: int
    contrast: str = ""


def _row(label, phenomenon, range_tag, outcomes, contrast=""):
    if not outcomes:
        raise ValueError(f"no items for row {label!r}")
    correct = int(sum(outcomes))
    return ReportRow(label, phenomenon, range_tag, correct / len(outcomes), len(outcomes), correct, contrast)


# --------------------------------------------------------------------------
# classifier accuracy


def number_correct(model, sentence):
    p = model.classify_number(sentence.prefix)
    return p[NUMBER_INDEX[sentence.subject_number]] > 0.5


def grammaticality_correct(model, sentence):
    p = model.judge_grammaticality(sentence.tokens)
    return p > 0.5 if sentence.grammatical else p < 0.5


_DECIDERS = {"number_prediction": number_correct, "grammaticality": grammaticality_correct}


def _decider(task):
    try:
        return _DECIDERS[task]
    except KeyError:
        raise ValueError(f"accuracy is defined for {tuple(_DECIDERS)}, not {task!r}") from None


def accuracy(model, task, corpus, label="all"):
    """Fraction of correct decisions; returns ``(accuracy, ReportRow)``."""
    corpus = list(corpus)
    decide = _decider(task)
    outcomes = _map(lambda s: decide(model, s), corpus)
    phen = corpus[0].phenomenon if corpus else ""
    row = _row(label, phen, "", outcomes)
    return row.accuracy, row


@dataclass
class StratifiedTable:
    fixed: dict
    vary: str
    counts: dict  # every stratum seen: value -> n
    cells: dict  # reported strata only: value -> (accuracy, n)
    min_items: int

    def columns(self):
        return sorted(self.cells)


def stratified_accuracy(model, corpus, fixed, vary, min_items=50, task="number_prediction"):
    """Accuracy per value of ``vary`` among items matching every ``fixed`` key.

    Keys are sentence attributes: distance, attractor_count,
    non_attractor_count.  Strata with fewer than ``min_items`` items are
    counted but absent from ``cells``.
    """
    decide = _decider(task)
    matching = [s for s in corpus if all(getattr(s, k) == v for k, v in fixed.items())]
    outcomes = _map(lambda s: decide(model, s), matching)
    groups = {}
    for s, ok in zip(matching, outcomes):
        groups.setdefault(getattr(s, vary), []).append(ok)
    counts = {k: len(v) for k, v in sorted(groups.items())}
    cells = {k: (sum(v) / len(v), len(v)) for k, v in sorted(groups.items()) if len(v) >= min_items}
    return StratifiedTable(dict(fixed), vary, counts, cells, min_items)


def format_stratified(table):
    fixed = ", ".join(f"{k}={v}" for k, v in table.fixed.items())
    head = f"{table.vary:<22}" + "".join(f"{'n=' + str(c):>10}" for c in table.columns())
    acc = f"{'accuracy':<22}" + "".join(f"{table.cells[c][0]:>10.4f}" for c in table.columns())
    cnt = f"{'items':<22}" + "".join(f"{table.cells[c][1]:>10d}" for c in table.columns())
    return f"# {fixed}\n{head}\n{acc}\n{cnt}\n"


# --------------------------------------------------------------------------
# confidence profiles


@dataclass
class ProfilePoint:
    position: int
    label: str
    example: str
    mean: float
    n: int


@dataclass
class ConfidenceProfile:
    template: str
    points: list = field(default_factory=list)

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["position", "label", "example", "mean", "n"])
            for p in self.points:
                w.writerow([p.position, p.label, p.example, repr(float(p.mean)), p.n])


def confidence_profile(model, corpus):
    """Mean p(correct verb number) after each prefix position, aligned by template slot.

    All sentences must come from one template realisation shape: the same
    length, the same category per slot and the same verb position.
    """
    corpus = list(corpus)
    if not corpus:
        raise ValueError("empty corpus")
    first = corpus[0]
    for s in corpus:
        if (s.template, len(s.tokens), s.verb_index) != (first.template, len(first.tokens), first.verb_index) \
                or (s.categories and first.categories and s.categories != first.categories):
            raise ValueError("sentences do not share one slot layout; split the corpus by derivation first")

    def curve(s):
        probs = model.prefix_number_probs(s.prefix)
        return np.asarray(probs)[:, NUMBER_INDEX[s.subject_number]]

    curves = np.stack(_map(curve, corpus))
    means = curves.mean(axis=0)
    labels = first.categories or ("",) * len(first.tokens)
    points = [ProfilePoint(i, labels[i], first.tokens[i], float(means[i]), len(corpus))
              for i in range(first.verb_index)]
    return ConfidenceProfile(first.template, points)


# --------------------------------------------------------------------------
# language-model measures


def perplexity(model, corpus):
    """exp of the token-weighted mean negative log-likelihood."""
    sentences = [tuple(getattr(s, "tokens", s)) for s in corpus]
    count = sum(len(s) for s in sentences)
    if count == 0:
        raise ValueError("corpus has no tokens")
    total = sum(_map(model.lm_logprob, sentences))
    return float(np.exp(-total / count))


def unigram_perplexity(train, corpus, smoothing=0.0):
    """Perplexity of the count-based unigram model of ``train`` on ``corpus``."""
    counts = {}
    for s in train:
        for tok in getattr(s, "tokens", s):
            counts[tok] = counts.get(tok, 0) + 1
    total = sum(counts.values())
    tokens = [t for s in corpus for t in getattr(s, "tokens", s)]
    vocab = len(set(counts) | set(tokens))
    nll = 0.0
    for tok in tokens:
        p = (counts.get(tok, 0) + smoothing) / (total + smoothing * vocab)
        if p == 0.0:
            return float("inf")
        nll -= np.log(p)
    return float(np.exp(nll / len(tokens)))


def targeted_eval(model, pairs, rows=None):
    """Pair accuracy per row: correct iff the preferred member has strictly higher log-probability.

    Rows are keyed by (phenomenon, range tag, row label) in first-seen order.  ``rows``
    optionally names the row labels that must be present.
    """
    pairs = list(pairs)
    scores = _map(lambda p: (model.lm_logprob(p.grammatical), model.lm_logprob(p.contrast)), pairs)
    groups = {}
    for pair, (good, other) in zip(pairs, scores):
        key = (pair.phenomenon, pair.range_tag, pair.row_label)
        groups.setdefault(key, (pair, []))[1].append(good > other)
    if rows is not None:
        present = {label for _, _, label in groups}
        for label in rows:
            if label not in present:
                raise ValueError(f"no pairs for requested row {label!r}")
    return [_row(label, phenomenon, range_tag, outcomes, f"{pair.preferred_kind} vs. {pair.contrast_kind}")
            for (phenomenon, range_tag, label), (pair, outcomes) in groups.items()]


def grammaticality_generalization(model, pairs):
    """Classifier accuracy on both members of each pair, grouped by template."""
    pairs = list(pairs)

    def score(p):
        return (model.judge_grammaticality(p.grammatical) > 0.5,
                model.judge_grammaticality(p.contrast) < 0.5)

    results = _map(score, pairs)
    groups = {}
    for pair, (a, b) in zip(pairs, results):
        groups.setdefault(pair.template, (pair, []))[1].extend([a, b])
    return [_row(pair.label or name, pair.phenomenon, pair.range_tag, outcomes)
            for name, (pair, outcomes) in groups.items()]


def mean_arithmetic_rank(accuracy_matrix, tie="average"):
    """Per-model mean rank across rows; rank 1 is the highest accuracy.

    ``accuracy_matrix`` is (models, rows).  ``tie`` is "average" (tied models
    share the mean of their ranks) or "min" (they all take the best rank).
    """
    if tie not in ("average", "min"):
        raise ValueError("tie must be 'average' or 'min'")
    m = np.asarray(accuracy_matrix, dtype=float)
    if m.ndim != 2 or m.size == 0:
        raise ValueError("need a non-empty (models, rows) matrix")
    ranks = np.stack([rankdata(-m[:, j], method=tie) for j in range(m.shape[1])], axis=1)
    return ranks.mean(axis=1)


# --------------------------------------------------------------------------
# reports


RANGE_HEADINGS = {"short": "Short-range", "long": "Long-range"}
PHENOMENON_HEADINGS = {"sv_agreement": "SV agreement", "reflexive": "Reflexive anaphora",
                       "npi": "Negative polarity items"}


@dataclass
class EvaluationReport:
    """Rows per model plus optional perplexities and stratified tables."""

    models: list
    rows: dict  # model name -> list[ReportRow], aligned across models
    perplexity: dict = field(default_factory=dict)
    stratified: list = field(default_factory=list)

    def accuracy_matrix(self):
        return np.array([[r.accuracy for r in self.rows[m]] for m in self.models])

    def ranks(self, tie="average"):
        return mean_arithmetic_rank(self.accuracy_matrix(), tie)

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["model", "row", "phenomenon", "range", "contrast", "accuracy", "n_items"])
            for m in self.models:
                for r in self.rows[m]:
                    w.writerow([m, r.label, r.phenomenon, r.range_tag, r.contrast, repr(float(r.accuracy)),
                                r.n_items])

    def to_text(self):
        """Fixed-width table: one line per row label, one column per model, grouped by range and phenomenon."""
        width = max([24] + [len(r.label) + 4 for m in self.models for r in self.rows[m]])
        col = max([10] + [len(m) + 2 for m in self.models])
        lines = [f"{'':<{width}}" + "".join(f"{m:>{col}}" for m in self.models)]
        rule = "-" * len(lines[0])
        if self.perplexity:
            lines.append(f"{'Validation Perplexity':<{width}}"
                         + "".join(f"{self.perplexity.get(m, float('nan')):>{col}.2f}" for m in self.models))
        lines.append(rule)
        first = self.rows[self.models[0]]
        ranges, phenomena = list(RANGE_HEADINGS), list(PHENOMENON_HEADINGS)

        def order(i):
            r = first[i]
            return (ranges.index(r.range_tag) if r.range_tag in ranges else len(ranges),
                    phenomena.index(r.phenomenon) if r.phenomenon in phenomena else len(phenomena))

        section = None
        for i in sorted(range(len(first)), key=order):
            r = first[i]
            key = (r.range_tag, r.phenomenon)
            if key != section and any(key):
                section = key
                lines.append(f"{RANGE_HEADINGS.get(r.range_tag, r.range_tag)}: "
                             f"{PHENOMENON_HEADINGS.get(r.phenomenon, r.phenomenon)}")
            lines.append(f"  {r.label:<{width - 2}}"
                         + "".join(f"{self.rows[m][i].accuracy:>{col}.2f}" for m in self.models))
        lines.append(rule)
        if len(self.models) > 1 and self.rows[self.models[0]]:
            lines.append(f"{'Mean Arithmetic Rank':<{width}}"
                         + "".join(f"{v:>{col}.2f}" for v in self.ranks("average")))
            lines.append(f"{'Mean Rank (min ties)':<{width}}"
                         + "".join(f"{v:>{col}.2f}" for v in self.ranks("min")))
        text = "\n".join(lines) + "\n"
        for table in self.stratified:
            text += "\n" + format_stratified(table)
        return text

    def write(self, directory, stem="report"):
        self.to_csv(os.path.join(directory, f"{stem}.csv"))
        with open(os.path.join(directory, f"{stem}.txt"), "w", encoding="utf-8") as fh:
            fh.write(self.to_text())
