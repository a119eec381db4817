"""Template-grammar corpora with grammatical-number annotation.

Grammar files are plain text, one rule per line::

    # comment
    template across_pp phenomenon=sv_agreement range=long label="Across a PP"
    S -> @det subj:@noun[num=$s] @prep @det @noun verb:@verb_intr
    S -> @det subj:@noun[num=$s] @prep @det @noun verb:@aux[lemma=be] @adj
    link subj verb

Right-hand sides mix nonterminals (``NP``), quoted literal words (``'that'``)
and lexical terminals ``label:@category[feature=value,...]``.  Features are
``num`` (``sg``, ``pl``, ``$var`` or ``!$var`` for the opposite of a
variable), ``anim`` (``yes``/``no``) and ``lemma``.  ``link A B`` makes slot
B agree in number with slot A; ``npi LIC INTR licensor=LEMMA`` names the two
determiner slots that can host a negative-polarity licensor.  Rules with the
same left-hand side are alternatives, as are ``|``-separated right-hand sides.
The grammar must be non-recursive.
"""
from __future__ import annotations

import csv
import re
import shlex
from dataclasses import dataclass, field
from importlib import resources
from itertools import product
from pathlib import Path

import numpy as np

NUMBERS = ("sg", "pl")
PHENOMENA = ("sv_agreement", "reflexive", "npi")
RANGES = ("short", "long")
NOUN_POS = ("noun", "pronoun")

# Leading tags keep the random streams of different steps apart: numpy
# zero-pads seed entropy, so default_rng(s) and default_rng([s, 0]) coincide.
STREAM_GENERATE, STREAM_PAIRS, STREAM_SPLIT = 11, 12, 13

TSV_COLUMNS = ("tokens", "subject_index", "verb_index", "subject_number", "verb_number",
               "attractors", "non_attractors", "distance", "grammatical", "template", "phenomenon")
PAIR_COLUMNS = ("grammatical", "contrast", "preferred_kind", "contrast_kind", "phenomenon",
                "range", "template", "label")


class GrammarError(ValueError):
    def __init__(self, message, lineno=None, path=None):
        where = ""
        if path is not None:
            where = f"{path}:"
        if lineno is not None:
            where += f"{lineno}:"
        super().__init__(f"{where} {message}".strip())
        self.lineno = lineno


class LexiconError(ValueError):
    pass


def flip(number):
    return "pl" if number == "sg" else "sg"


# --------------------------------------------------------------------------
# lexicon


@dataclass(frozen=True)
class LexEntry:
    pos: str
    lemma: str
    singular: str
    plural: str
    animate: bool | None = None

    def form(self, number):
        return self.singular if number == "sg" else self.plural

    @property
    def has_number(self):
        return self.singular != self.plural


class Lexicon:
    """Lemma -> (part of speech, singular form, plural form, animacy)."""

    def __init__(self, entries):
        self.entries = {}
        for e in entries:
            if e.lemma in self.entries:
                raise LexiconError(f"duplicate lemma {e.lemma!r}")
            if (e.pos in NOUN_POS or e.pos.startswith("verb")) and not e.has_number:
                raise LexiconError(f"{e.pos} {e.lemma!r} needs distinct singular and plural forms")
            self.entries[e.lemma] = e
        self._nouns = {}
        self._agreeing = {}
        for e in self.entries.values():
            if not e.has_number:
                continue
            table = self._nouns if e.pos in NOUN_POS else self._agreeing
            for number in NUMBERS:
                form = e.form(number)
                previous = table.get(form)
                if previous is not None and previous[1] != number:
                    raise LexiconError(f"form {form!r} is both singular and plural")
                # shared forms (plural "themselves") flip back to the first lexeme listed
                table.setdefault(form, (e, number))

    @property
    def categories(self):
        return {e.pos for e in self.entries.values()}

    def select(self, category, animate=None, lemma=None):
        out = [e for e in self.entries.values() if e.pos == category]
        if animate is not None:
            out = [e for e in out if e.animate is animate]
        if lemma is not None:
            out = [e for e in out if e.lemma == lemma]
        return out

    def noun_number(self, token):
        hit = self._nouns.get(token.lower())
        return None if hit is None else hit[1]

    def agreement_number(self, token):
        """Number of a verb, auxiliary or reflexive form (None if not number-marked)."""
        hit = self._agreeing.get(token.lower()) or self._nouns.get(token.lower())
        return None if hit is None else hit[1]

    def flip_form(self, token):
        """The same lexeme in the opposite number."""
        hit = self._agreeing.get(token.lower()) or self._nouns.get(token.lower())
        if hit is None:
            raise LexiconError(f"{token!r} has no number-marked counterpart")
        entry, number = hit
        return entry.form(flip(number))

    def __len__(self):
        return len(self.entries)


def load_lexicon(path=None):
    """Read a TSV lexicon (pos, lemma, singular, plural, animate); default is the shipped one."""
    if path is None:
        text = resources.files("decay_rnn").joinpath("data").joinpath("lexicon.tsv").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    rows = csv.DictReader(text.splitlines(), delimiter="\t")
    anim = {"yes": True, "no": False, "-": None, "": None}
    return Lexicon(LexEntry(r["pos"], r["lemma"], r["singular"], r["plural"], anim[r["animate"]]) for r in rows)


# --------------------------------------------------------------------------
# grammar templates


@dataclass(frozen=True)
class Terminal:
    category: str | None = None
    label: str | None = None
    num: str | None = None
    animate: bool | None = None
    lemma: str | None = None
    literal: str | None = None

    def __str__(self):
        if self.literal is not None:
            return repr(self.literal)
        feats = []
        if self.num:
            feats.append(f"num={self.num}")
        if self.animate is not None:
            feats.append(f"anim={'yes' if self.animate else 'no'}")
        if self.lemma:
            feats.append(f"lemma={self.lemma}")
        s = f"@{self.category}" + (f"[{','.join(feats)}]" if feats else "")
        return f"{self.label}:{s}" if self.label else s


@dataclass
class GrammarTemplate:
    name: str
    phenomenon: str
    range_tag: str
    label: str = ""
    rules: dict = field(default_factory=dict)
    start: str | None = None
    link: tuple | None = None
    npi: tuple | None = None  # (licensor slot, intruder slot, licensor lemma)

    def terminals(self):
        for alts in self.rules.values():
            for rhs in alts:
                for sym in rhs:
                    if isinstance(sym, Terminal):
                        yield sym

    def derivations(self):
        """All terminal sequences (finite because the grammar is non-recursive)."""
        def expand(symbol):
            if isinstance(symbol, Terminal):
                return [(symbol,)]
            out = []
            for rhs in self.rules[symbol]:
                for parts in product(*(expand(s) for s in rhs)):
                    out.append(tuple(t for part in parts for t in part))
            return out

        return expand(self.start)


_NONTERMINAL = re.compile(r"^[A-Z][A-Za-z0-9_]*$")
_TERMINAL = re.compile(r"^(?:(?P<label>[a-z][a-z0-9_]*):)?@(?P<cat>[a-z][a-z0-9_]*)(?:\[(?P<feats>[^\]]*)\])?$")
_NUM_VALUE = re.compile(r"^(sg|pl|!?\$[a-z][a-z0-9_]*)$")


def _parse_terminal(tok, lineno, path):
    m = _TERMINAL.match(tok)
    if not m:
        raise GrammarError(f"cannot parse symbol {tok!r}", lineno, path)
    kw = {"category": m["cat"], "label": m["label"]}
    for feat in filter(None, (m["feats"] or "").split(",")):
        key, _, value = feat.partition("=")
        key, value = key.strip(), value.strip()
        if key == "num":
            if not _NUM_VALUE.match(value):
                raise GrammarError(f"bad number feature {value!r}", lineno, path)
            kw["num"] = value
        elif key == "anim":
            if value not in ("yes", "no"):
                raise GrammarError(f"bad animacy feature {value!r}", lineno, path)
            kw["animate"] = value == "yes"
        elif key == "lemma":
            kw["lemma"] = value
        else:
            raise GrammarError(f"unknown feature {key!r}", lineno, path)
    return Terminal(**kw)


def _parse_rhs(text, lineno, path):
    alternatives = [[]]
    for tok in shlex.split(text, posix=False):
        if tok == "|":
            alternatives.append([])
        elif _NONTERMINAL.match(tok):
            alternatives[-1].append(tok)
        elif len(tok) >= 2 and tok[0] == tok[-1] and tok[0] in "'\"":
            alternatives[-1].append(Terminal(literal=tok[1:-1]))
        else:
            alternatives[-1].append(_parse_terminal(tok, lineno, path))
    if any(not alt for alt in alternatives):
        raise GrammarError("empty alternative", lineno, path)
    return [tuple(alt) for alt in alternatives]


def _check_template(t, lineno, path, categories):
    if not t.rules:
        raise GrammarError(f"template {t.name!r} has no rules", lineno, path)
    for lhs, alts in t.rules.items():
        for rhs in alts:
            for sym in rhs:
                if isinstance(sym, str) and sym not in t.rules:
                    raise GrammarError(f"undefined nonterminal {sym!r} in template {t.name!r}", lineno, path)
    # cycle detection over the nonterminal graph
    state = {}

    def visit(node, trail):
        state[node] = "open"
        for rhs in t.rules[node]:
            for sym in rhs:
                if not isinstance(sym, str):
                    continue
                if state.get(sym) == "open":
                    cycle = " -> ".join(trail + [node, sym])
                    raise GrammarError(f"recursive rule in template {t.name!r}: {cycle}", lineno, path)
                if sym not in state:
                    visit(sym, trail + [node])
        state[node] = "done"

    for nt in t.rules:
        if nt not in state:
            visit(nt, [])
    labels = [sym.label for sym in t.terminals() if sym.label]
    if categories is not None:
        for sym in t.terminals():
            if sym.literal is None and sym.category not in categories:
                raise GrammarError(f"unknown terminal category {sym.category!r} in template {t.name!r}",
                                   lineno, path)
    if t.phenomenon in ("sv_agreement", "reflexive") and t.link is None:
        raise GrammarError(f"agreement template {t.name!r} needs a link declaration", lineno, path)
    if t.phenomenon == "npi" and t.npi is None:
        raise GrammarError(f"npi template {t.name!r} needs an npi declaration", lineno, path)
    for slot in (t.link or ()) + (t.npi[:2] if t.npi else ()):
        if slot not in labels:
            raise GrammarError(f"slot {slot!r} is not labelled in template {t.name!r}", lineno, path)


def parse_grammar(text, path=None, categories=None):
    templates = []
    current = None
    start_line = None

    def finish(lineno):
        if current is not None:
            _check_template(current, start_line, path, categories)
            templates.append(current)

    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head = line.split(None, 1)[0]
        if head == "template":
            finish(lineno)
            try:
                words = shlex.split(line)
            except ValueError as exc:
                raise GrammarError(str(exc), lineno, path) from None
            if len(words) < 2:
                raise GrammarError("template needs a name", lineno, path)
            opts = dict(w.split("=", 1) for w in words[2:] if "=" in w)
            phenomenon = opts.get("phenomenon", "sv_agreement")
            range_tag = opts.get("range", "short")
            if phenomenon not in PHENOMENA:
                raise GrammarError(f"unknown phenomenon {phenomenon!r}", lineno, path)
            if range_tag not in RANGES:
                raise GrammarError(f"unknown range {range_tag!r}", lineno, path)
            current = GrammarTemplate(words[1], phenomenon, range_tag, opts.get("label", words[1]))
            start_line = lineno
        elif current is None:
            raise GrammarError("rule outside a template block", lineno, path)
        elif head == "link":
            parts = line.split()
            if len(parts) != 3:
                raise GrammarError("link takes two slot labels", lineno, path)
            if current.link is not None:
                raise GrammarError("only one link per template", lineno, path)
            current.link = (parts[1], parts[2])
        elif head == "npi":
            parts = line.split()
            opts = dict(p.split("=", 1) for p in parts[3:] if "=" in p)
            if len(parts) < 3 or "licensor" not in opts:
                raise GrammarError("npi takes two slot labels and licensor=LEMMA", lineno, path)
            current.npi = (parts[1], parts[2], opts["licensor"])
        elif "->" in line:
            lhs, rhs = (s.strip() for s in line.split("->", 1))
            if not _NONTERMINAL.match(lhs):
                raise GrammarError(f"bad left-hand side {lhs!r}", lineno, path)
            alternatives = _parse_rhs(rhs, lineno, path)
            for sym in (s for alt in alternatives for s in alt):
                if isinstance(sym, Terminal) and sym.literal is None and categories is not None \
                        and sym.category not in categories:
                    raise GrammarError(f"unknown terminal category {sym.category!r} in template {current.name!r}",
                                       lineno, path)
            current.rules.setdefault(lhs, []).extend(alternatives)
            if current.start is None:
                current.start = lhs
        else:
            raise GrammarError(f"cannot parse line: {line!r}", lineno, path)
    finish(None)
    return templates


def load_grammar(path, lexicon=None):
    """Parse a grammar file, or every ``*.grammar`` file in a directory (sorted by name).

    Terminal categories are validated against ``lexicon`` (default: shipped lexicon).
    """
    lexicon = lexicon if lexicon is not None else load_lexicon()
    path = Path(path)
    files = sorted(path.glob("*.grammar")) if path.is_dir() else [path]
    templates = []
    for f in files:
        templates.extend(parse_grammar(f.read_text("utf-8"), f, lexicon.categories))
    return templates


def shipped_templates_dir(group="targeted"):
    """Directory of the shipped templates: ``targeted`` or ``analysis``."""
    return Path(str(resources.files("decay_rnn").joinpath("data").joinpath("templates").joinpath(group)))


def load_shipped_templates(group="targeted", lexicon=None):
    return load_grammar(shipped_templates_dir(group), lexicon)


# --------------------------------------------------------------------------
# annotated sentences and minimal pairs


@dataclass(frozen=True)
class AnnotatedSentence:
    tokens: tuple
    subject_index: int
    verb_index: int
    subject_number: str
    verb_number: str
    intervening_nouns: tuple
    attractor_count: int
    non_attractor_count: int
    distance: int
    grammatical: bool
    template: str = ""
    phenomenon: str = ""
    categories: tuple = ()

    @property
    def text(self):
        return " ".join(self.tokens)

    @property
    def prefix(self):
        """Tokens strictly before the verb (number-prediction input)."""
        return self.tokens[:self.verb_index]


@dataclass(frozen=True)
class MinimalPair:
    grammatical: tuple  # preferred member
    contrast: tuple
    contrast_kind: str  # "ungrammatical" | "intrusive"
    phenomenon: str
    template: str
    range_tag: str = "short"
    preferred_kind: str = "grammatical"  # "intrusive" for NPI intrusive-vs-ungrammatical
    label: str = ""

    @property
    def differing_positions(self):
        if len(self.grammatical) != len(self.contrast):
            raise ValueError("pair members differ in length")
        return [i for i, (a, b) in enumerate(zip(self.grammatical, self.contrast)) if a != b]

    @property
    def row_label(self):
        if self.phenomenon == "npi":
            return f"{self.label} ({self.preferred_kind} vs. {self.contrast_kind})"
        return self.label


def annotate(tokens, subject_index, verb_index, lexicon, template="", phenomenon="", categories=()):
    """Number annotation of one sentence from its subject and verb positions."""
    tokens = tuple(tokens)
    if not 0 <= subject_index < verb_index < len(tokens):
        raise ValueError(f"need 0 <= subject_index < verb_index < {len(tokens)}, "
                         f"got {subject_index}, {verb_index}")
    subject_number = lexicon.noun_number(tokens[subject_index])
    if subject_number is None:
        raise ValueError(f"subject {tokens[subject_index]!r} is not a known noun")
    verb_number = lexicon.agreement_number(tokens[verb_index])
    if verb_number is None:
        raise ValueError(f"verb {tokens[verb_index]!r} is not number-marked in the lexicon")
    interveners = []
    for i in range(subject_index + 1, verb_index):
        n = lexicon.noun_number(tokens[i])
        if n is not None:
            interveners.append((i, n))
    attractors = sum(1 for _, n in interveners if n != subject_number)
    return AnnotatedSentence(
        tokens=tokens,
        subject_index=subject_index,
        verb_index=verb_index,
        subject_number=subject_number,
        verb_number=verb_number,
        intervening_nouns=tuple(interveners),
        attractor_count=attractors,
        non_attractor_count=len(interveners) - attractors,
        distance=verb_index - subject_index,
        grammatical=verb_number == subject_number,
        template=template,
        phenomenon=phenomenon,
        categories=tuple(categories),
    )


def make_agreement_pair(tokens, verb_index, lexicon, phenomenon="sv_agreement", template="",
                        range_tag="short", label=""):
    """Pair a grammatical sentence with its verb-number flip."""
    tokens = tuple(tokens)
    bad = list(tokens)
    bad[verb_index] = lexicon.flip_form(tokens[verb_index])
    return MinimalPair(tokens, tuple(bad), "ungrammatical", phenomenon, template, range_tag, label=label)


# --------------------------------------------------------------------------
# generation


@dataclass
class _Realized:
    tokens: list
    categories: list
    subject_index: int
    verb_index: int
    slots: dict  # label -> index


def _slot_index(slots, label, template):
    idx = [i for i, t in enumerate(slots) if t.label == label]
    if len(idx) != 1:
        raise GrammarError(f"template {template.name!r}: slot {label!r} occurs {len(idx)} times in a derivation")
    return idx[0]


def _candidates(term, lexicon):
    entries = lexicon.select(term.category, term.animate, term.lemma)
    if not entries:
        raise LexiconError(f"lexicon has no entries for @{term.category}"
                           f"{'' if term.animate is None else ' anim=' + str(term.animate)}"
                           f"{'' if term.lemma is None else ' lemma=' + term.lemma}")
    return entries


def _resolve_number(term, variables, rng):
    if term.num is None:
        return None
    if term.num in NUMBERS:
        return term.num
    negate = term.num.startswith("!")
    var = term.num.lstrip("!")
    if var not in variables:
        variables[var] = NUMBERS[int(rng.integers(2))]
    return flip(variables[var]) if negate else variables[var]


def _realize(template, slots, lexicon, rng, grammatical=True, choices=None):
    """Fill a terminal sequence with words.

    ``choices``, when given, fixes (entry index, number) per slot for exhaustive
    enumeration; otherwise draws come from ``rng`` in slot order.
    """
    variables = {}
    subj = verb = None
    if template.link:
        subj = _slot_index(slots, template.link[0], template)
        verb = _slot_index(slots, template.link[1], template)
    numbers = [None] * len(slots)
    for i, term in enumerate(slots):
        if term.literal is not None or i == verb:
            continue
        if choices is not None:
            numbers[i] = choices[i][1]
        else:
            numbers[i] = _resolve_number(term, variables, rng)
            if numbers[i] is None:
                numbers[i] = NUMBERS[int(rng.integers(2))]
    if verb is not None:
        numbers[verb] = numbers[subj] if grammatical else flip(numbers[subj])
    tokens, categories = [], []
    for i, term in enumerate(slots):
        if term.literal is not None:
            tokens.append(term.literal)
            categories.append(term.literal)
            continue
        entries = _candidates(term, lexicon)
        pick = choices[i][0] if choices is not None else int(rng.integers(len(entries)))
        tokens.append(entries[pick].form(numbers[i]))
        categories.append(term.label or term.category)
    labels = {t.label: i for i, t in enumerate(slots) if t.label}
    return _Realized(tokens, categories, subj, verb, labels)


def _to_sentence(r, template, lexicon):
    if r.subject_index is None:
        raise GrammarError(f"template {template.name!r} has no subject/verb link")
    return annotate(r.tokens, r.subject_index, r.verb_index, lexicon, template.name, template.phenomenon,
                    r.categories)


def _per_template_counts(count, n):
    base, extra = divmod(count, n)
    return [base + (1 if i < extra else 0) for i in range(n)]


def _check_lexicon(templates, lexicon):
    for t in templates:
        for term in t.terminals():
            if term.literal is None:
                _candidates(term, lexicon)


def _enumerate(template, lexicon):
    out = []
    for slots in template.derivations():
        verb = _slot_index(slots, template.link[1], template) if template.link else None
        axes = []
        for i, term in enumerate(slots):
            if term.literal is not None or i == verb:
                axes.append([(0, None)])
                continue
            entries = _candidates(term, lexicon)
            nums = [term.num] if term.num in NUMBERS else list(NUMBERS)
            axes.append([(k, n) for k in range(len(entries)) for n in nums])
        for combo in product(*axes):
            # variables: all slots sharing $v must agree (and !$v must disagree)
            seen, ok = {}, True
            for term, (_, n) in zip(slots, combo):
                if term.num and term.num.lstrip("!").startswith("$") and n is not None:
                    var = term.num.lstrip("!")
                    val = flip(n) if term.num.startswith("!") else n
                    if seen.setdefault(var, val) != val:
                        ok = False
                        break
            if ok:
                out.append(_to_sentence(_realize(template, slots, lexicon, None, True, list(combo)),
                                        template, lexicon))
    return out


def generate(templates, lexicon, seed, count, grammatical_ratio=0.5, exhaustive=False):
    """Annotated sentences from ``templates``.

    ``count`` is split evenly across templates (earlier templates take the
    remainder); output is concatenated in template order.  Within a template,
    ``round(n * grammatical_ratio)`` items are grammatical and the rest have
    the linked verb's number flipped.  ``exhaustive=True`` ignores count and
    ratio and enumerates every distinct grammatical sentence.
    """
    if count < 0:
        raise ValueError("count must be >= 0")
    if not 0.0 <= grammatical_ratio <= 1.0:
        raise ValueError("grammatical_ratio must be in [0, 1]")
    templates = list(templates)
    _check_lexicon(templates, lexicon)
    if exhaustive:
        out, seen = [], set()
        for t in templates:
            for s in _enumerate(t, lexicon):
                if s.tokens not in seen:
                    seen.add(s.tokens)
                    out.append(s)
        return out
    if count == 0 or not templates:
        return []
    out = []
    for ti, (t, n) in enumerate(zip(templates, _per_template_counts(count, len(templates)))):
        rng = np.random.default_rng([STREAM_GENERATE, seed, ti])
        derivations = t.derivations()
        n_good = int(round(n * grammatical_ratio))
        flags = np.zeros(n, dtype=bool)
        flags[rng.permutation(n)[:n_good]] = True
        for good in flags:
            slots = derivations[int(rng.integers(len(derivations)))]
            out.append(_to_sentence(_realize(t, slots, lexicon, rng, bool(good)), t, lexicon))
    return out


def generate_minimal_pairs(templates, lexicon, seed, count):
    """Minimal pairs, ``count`` items split across templates.

    Agreement and reflexive items give one grammatical/ungrammatical pair;
    NPI items give the three contrasts grammatical-vs-intrusive,
    intrusive-vs-ungrammatical and grammatical-vs-ungrammatical.
    """
    if count < 0:
        raise ValueError("count must be >= 0")
    templates = list(templates)
    _check_lexicon(templates, lexicon)
    if count == 0 or not templates:
        return []
    pairs = []
    for ti, (t, n) in enumerate(zip(templates, _per_template_counts(count, len(templates)))):
        rng = np.random.default_rng([STREAM_PAIRS, seed, ti])
        derivations = t.derivations()
        meta = dict(phenomenon=t.phenomenon, template=t.name, range_tag=t.range_tag, label=t.label)
        for _ in range(n):
            slots = derivations[int(rng.integers(len(derivations)))]
            r = _realize(t, slots, lexicon, rng, True)
            if t.phenomenon == "npi":
                lic, intr, lemma = t.npi
                licensor = lexicon.select(lexicon.entries[lemma].pos, lemma=lemma)[0]
                li, ii = r.slots[lic], r.slots[intr]
                good = list(r.tokens)
                good[li] = licensor.form(lexicon.noun_number(r.tokens[li + 1]) or "sg")
                intrusive = list(r.tokens)
                intrusive[ii] = licensor.form(lexicon.noun_number(r.tokens[ii + 1]) or "sg")
                bad = list(r.tokens)
                pairs.append(MinimalPair(tuple(good), tuple(intrusive), "intrusive", **meta))
                pairs.append(MinimalPair(tuple(intrusive), tuple(bad), "ungrammatical",
                                         preferred_kind="intrusive", **meta))
                pairs.append(MinimalPair(tuple(good), tuple(bad), "ungrammatical", **meta))
            else:
                pairs.append(make_agreement_pair(r.tokens, r.verb_index, lexicon, **meta))
    return pairs


def split(corpus, train_fraction, valid_fraction, seed):
    """Shuffle and cut into (train, valid, test); sizes are round(fraction * n)."""
    if not (0.0 <= train_fraction <= 1.0 and 0.0 <= valid_fraction <= 1.0
            and train_fraction + valid_fraction <= 1.0 + 1e-12):
        raise ValueError("fractions must be in [0, 1] and sum to at most 1")
    corpus = list(corpus)
    n = len(corpus)
    n_train = int(round(train_fraction * n))
    n_valid = min(int(round(valid_fraction * n)), n - n_train)
    order = np.random.default_rng([STREAM_SPLIT, seed]).permutation(n)
    pick = [corpus[i] for i in order]
    return pick[:n_train], pick[n_train:n_train + n_valid], pick[n_train + n_valid:]


# --------------------------------------------------------------------------
# TSV serialization


def write_corpus(path, sentences):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(TSV_COLUMNS)
        for s in sentences:
            w.writerow([s.text, s.subject_index, s.verb_index, s.subject_number, s.verb_number,
                        s.attractor_count, s.non_attractor_count, s.distance, int(s.grammatical),
                        s.template, s.phenomenon])


def read_corpus(path, lexicon=None):
    """Read a corpus TSV, re-annotating against ``lexicon`` and checking the stored counts."""
    lexicon = lexicon if lexicon is not None else load_lexicon()
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        missing = set(TSV_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for lineno, row in enumerate(reader, 2):
            s = annotate(row["tokens"].split(" "), int(row["subject_index"]), int(row["verb_index"]), lexicon,
                         row["template"], row["phenomenon"])
            stored = (row["subject_number"], row["verb_number"], int(row["attractors"]),
                      int(row["non_attractors"]), int(row["distance"]), bool(int(row["grammatical"])))
            derived = (s.subject_number, s.verb_number, s.attractor_count, s.non_attractor_count,
                       s.distance, s.grammatical)
            if stored != derived:
                raise ValueError(f"{path}:{lineno}: stored annotation {stored} disagrees with lexicon {derived}")
            out.append(s)
    return out


def write_pairs(path, pairs):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(PAIR_COLUMNS)
        for p in pairs:
            w.writerow([" ".join(p.grammatical), " ".join(p.contrast), p.preferred_kind, p.contrast_kind,
                        p.phenomenon, p.range_tag, p.template, p.label])


def read_pairs(path):
    with open(path, encoding="utf-8", newline="") as fh:
        return [MinimalPair(tuple(r["grammatical"].split(" ")), tuple(r["contrast"].split(" ")),
                            r["contrast_kind"], r["phenomenon"], r["template"], r["range"],
                            r["preferred_kind"], r["label"])
                for r in csv.DictReader(fh, delimiter="\t")]
