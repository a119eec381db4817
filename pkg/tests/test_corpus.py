import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from decay_rnn import corpus as C


@pytest.fixture(scope="module")
def lex():
    return C.load_lexicon()


@pytest.fixture(scope="module")
def targeted(lex):
    return C.load_shipped_templates("targeted", lex)


# --------------------------------------------------------------------------
# lexicon


def test_lexicon_size_and_forms(lex):
    assert 150 <= len(lex.entries) <= 260
    for e in lex.entries.values():
        if e.pos in ("noun", "verb_intr", "verb_tr", "verb_comp", "aux"):
            assert e.singular != e.plural


def test_lexicon_number_lookup(lex):
    assert lex.noun_number("trips") == "pl"
    assert lex.noun_number("expressway") == "sg"
    assert lex.agreement_number("requires") == "sg"
    assert lex.agreement_number("require") == "pl"
    assert lex.flip_form("is") == "are"
    assert lex.flip_form("themselves") == "himself"


def test_duplicate_lemma_rejected():
    entries = [C.LexEntry("noun", "cat", "cat", "cats", True), C.LexEntry("noun", "cat", "cat", "cats", True)]
    with pytest.raises(C.LexiconError):
        C.Lexicon(entries)


def test_identical_number_forms_rejected():
    with pytest.raises(C.LexiconError):
        C.Lexicon([C.LexEntry("noun", "sheep", "sheep", "sheep", True)])


# --------------------------------------------------------------------------
# grammar loading


def test_empty_grammar_is_empty(tmp_path, lex):
    f = tmp_path / "empty.grammar"
    f.write_text("")
    assert C.load_grammar(f, lex) == []


def test_recursive_rule_rejected(lex):
    text = """template loop phenomenon=sv_agreement range=short label="Loop"
S -> subj:@noun NP verb:@verb_intr
NP -> @prep @det NP
link subj verb
"""
    with pytest.raises(C.GrammarError, match="recurs"):
        C.parse_grammar(text, categories=lex.categories)


def test_unknown_category_reports_line(lex):
    text = """template bad phenomenon=sv_agreement range=short label="Bad"
S -> subj:@noun verb:@verbz
link subj verb
"""
    with pytest.raises(C.GrammarError) as info:
        C.parse_grammar(text, categories=lex.categories)
    assert info.value.lineno == 2


def test_undefined_nonterminal_rejected(lex):
    text = """template bad phenomenon=sv_agreement range=short label="Bad"
S -> subj:@noun MISSING verb:@verb_intr
link subj verb
"""
    with pytest.raises(C.GrammarError):
        C.parse_grammar(text, categories=lex.categories)


def test_missing_link_rejected(lex):
    text = """template bad phenomenon=sv_agreement range=short label="Bad"
S -> subj:@noun verb:@verb_intr
"""
    with pytest.raises(C.GrammarError):
        C.parse_grammar(text, categories=lex.categories)


def test_shipped_simple_agreement_golden(lex):
    path = C.shipped_templates_dir("targeted") / "simple_agreement.grammar"
    templates = C.load_grammar(path, lex)
    assert len(templates) == 1
    t = templates[0]
    assert (t.name, t.phenomenon, t.range_tag) == ("simple_agreement", "sv_agreement", "short")


def test_shipped_templates_cover_every_row(targeted):
    labels = {(t.phenomenon, t.range_tag, t.label) for t in targeted}
    assert len(targeted) == 15
    assert ("sv_agreement", "short", "Simple") in labels
    assert ("sv_agreement", "long", "Across an object RC (no that)") in labels
    assert ("reflexive", "long", "Across a RC") in labels
    assert ("npi", "long", "Across a RC") in labels
    assert sum(t.phenomenon == "npi" for t in targeted) == 2


# --------------------------------------------------------------------------
# annotation examples


def test_trips_on_the_expressway(lex):
    s = C.annotate("all trips on the expressway requires a toll".split(), 1, 5, lex)
    assert s.subject_number == "pl"
    assert s.intervening_nouns == ((4, "sg"),)
    assert (s.attractor_count, s.non_attractor_count, s.grammatical) == (1, 0, False)
    assert s.distance == 4


def test_chair_created_by_a_hobbyist(lex):
    s = C.annotate("a chair created by a hobbyist as a gift to someone is new".split(), 1, 11, lex)
    assert s.subject_number == "sg"
    assert [n for _, n in s.intervening_nouns] == ["sg", "sg", "sg"]
    assert (s.attractor_count, s.non_attractor_count) == (0, 3)
    assert s.grammatical


def test_adjacent_subject_and_verb(lex):
    s = C.annotate("the author laughs".split(), 1, 2, lex)
    assert (s.attractor_count, s.non_attractor_count, s.distance) == (0, 0, 1)


def test_path_to_success_is_singular(lex):
    s = C.annotate("the path to success is not straight".split(), 1, 4, lex)
    assert s.subject_number == "sg" and s.prefix == ("the", "path", "to", "success")


def test_roses_in_the_vase_is_ungrammatical(lex):
    s = C.annotate("the roses in the vase by the door is red".split(), 1, 8, lex)
    assert not s.grammatical
    assert s.attractor_count == 2


@pytest.mark.parametrize("subj,verb", [(3, 2), (-1, 2), (1, 9), (2, 2)])
def test_bad_indices_rejected(lex, subj, verb):
    with pytest.raises(ValueError):
        C.annotate("the author laughs".split(), subj, verb, lex)


def test_expressway_pair_differs_in_one_token(lex):
    pair = C.make_agreement_pair("all trips on the expressway require a toll".split(), 5, lex)
    assert pair.contrast[5] == "requires"
    assert pair.differing_positions == [5]


# --------------------------------------------------------------------------
# generation


def test_count_zero(targeted, lex):
    assert C.generate(targeted, lex, seed=0, count=0) == []
    assert C.generate_minimal_pairs(targeted, lex, seed=0, count=0) == []


def test_generation_is_deterministic(targeted, lex):
    a = C.generate(targeted, lex, seed=4, count=60)
    b = C.generate(targeted, lex, seed=4, count=60)
    assert a == b
    assert a != C.generate(targeted, lex, seed=5, count=60)


def test_exhaustive_toy_grammar_has_four_sentences(lex):
    text = """template toy phenomenon=sv_agreement range=short label="Toy"
S -> @det subj:@noun[lemma=author] verb:@verb_intr[lemma=laugh]
S -> @det subj:@noun[lemma=author] verb:@verb_intr[lemma=smile]
link subj verb
"""
    lex_toy = C.Lexicon([C.LexEntry("det", "the", "the", "the", None),
                         C.LexEntry("noun", "author", "author", "authors", True),
                         C.LexEntry("verb_intr", "laugh", "laughs", "laugh", None),
                         C.LexEntry("verb_intr", "smile", "smiles", "smile", None)])
    templates = C.parse_grammar(text, categories=lex_toy.categories)
    out = C.generate(templates, lex_toy, seed=0, count=0, exhaustive=True)
    assert sorted(s.text for s in out) == ["the author laughs", "the author smiles",
                                            "the authors laugh", "the authors smile"]
    assert all(s.grammatical for s in out)


def test_missing_category_rejected(targeted):
    small = C.Lexicon([C.LexEntry("noun", "author", "author", "authors", True)])
    with pytest.raises(C.LexiconError):
        C.generate(targeted, small, seed=0, count=10)


def test_grammatical_ratio_bounds(targeted, lex):
    with pytest.raises(ValueError):
        C.generate(targeted, lex, seed=0, count=10, grammatical_ratio=1.5)
    with pytest.raises(ValueError):
        C.generate(targeted, lex, seed=0, count=-1)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([0.0, 0.3, 0.5, 1.0]))
def test_generated_annotation_is_self_consistent(seed, ratio):
    lex = C.load_lexicon()
    templates = [t for t in C.load_shipped_templates("targeted", lex) if t.phenomenon == "sv_agreement"]
    for s in C.generate(templates, lex, seed=seed, count=40, grammatical_ratio=ratio):
        again = C.annotate(s.tokens, s.subject_index, s.verb_index, lex)
        assert (again.attractor_count, again.non_attractor_count, again.distance, again.grammatical) == \
            (s.attractor_count, s.non_attractor_count, s.distance, s.grammatical)
        assert s.attractor_count + s.non_attractor_count == len(s.intervening_nouns)
        assert s.grammatical == (s.verb_number == s.subject_number)


def test_ungrammatical_flips_only_the_verb(targeted, lex):
    for s in C.generate(targeted[:3], lex, seed=1, count=30, grammatical_ratio=0.0):
        assert not s.grammatical
        fixed = list(s.tokens)
        fixed[s.verb_index] = lex.flip_form(s.tokens[s.verb_index])
        assert C.annotate(fixed, s.subject_index, s.verb_index, lex).grammatical


def test_ratio_is_exact_per_template(targeted, lex):
    sents = C.generate(targeted[:2], lex, seed=3, count=20, grammatical_ratio=0.3)
    for name in {t.name for t in targeted[:2]}:
        group = [s for s in sents if s.template == name]
        assert sum(s.grammatical for s in group) == round(len(group) * 0.3)


def test_minimal_pairs(targeted, lex):
    pairs = C.generate_minimal_pairs(targeted, lex, seed=2, count=45)
    for p in pairs:
        assert len(p.grammatical) == len(p.contrast)
        if p.phenomenon == "npi" and p.contrast_kind == "intrusive":
            # the licensor moves, so both the host and the landing site change
            assert len(p.differing_positions) == 2
        else:
            assert len(p.differing_positions) == 1


def test_npi_items_give_three_contrasts(targeted, lex):
    npi = [t for t in targeted if t.name == "npi_simple"]
    pairs = C.generate_minimal_pairs(npi, lex, seed=0, count=4)
    assert len(pairs) == 12
    kinds = [(p.preferred_kind, p.contrast_kind) for p in pairs[:3]]
    assert kinds == [("grammatical", "intrusive"), ("intrusive", "ungrammatical"),
                     ("grammatical", "ungrammatical")]
    assert pairs[0].row_label == "Simple (grammatical vs. intrusive)"
    assert pairs[0].grammatical[0] == "no"


# --------------------------------------------------------------------------
# splitting and serialization


def test_split_sizes():
    train, valid, test = C.split(list(range(1000)), 0.1, 0.004, seed=0)
    assert (len(train), len(valid), len(test)) == (100, 4, 896)
    assert sorted(train + valid + test) == list(range(1000))


def test_split_everything_in_train():
    train, valid, test = C.split(list(range(10)), 1.0, 0.0, seed=0)
    assert sorted(train) == list(range(10)) and valid == [] and test == []


def test_split_is_deterministic_and_independent_of_generation(targeted, lex):
    assert C.split(list(range(50)), 0.5, 0.1, seed=3) == C.split(list(range(50)), 0.5, 0.1, seed=3)
    sents = C.generate(targeted[:1], lex, seed=0, count=400)
    train, _, test = C.split(sents, 0.8, 0.0, seed=0)
    share = np.mean([s.grammatical for s in test])
    assert 0.35 < share < 0.65


def test_corpus_tsv_round_trip(tmp_path, targeted, lex):
    sents = C.generate(targeted, lex, seed=0, count=45)
    path = tmp_path / "c.tsv"
    C.write_corpus(path, sents)
    header = path.read_text().splitlines()[0].split("\t")
    assert header == list(C.TSV_COLUMNS)
    back = C.read_corpus(path, lex)
    assert [s.tokens for s in back] == [s.tokens for s in sents]
    assert [s.attractor_count for s in back] == [s.attractor_count for s in sents]


def test_corpus_tsv_with_wrong_annotation_rejected(tmp_path, lex):
    path = tmp_path / "c.tsv"
    C.write_corpus(path, [C.annotate("the authors laugh".split(), 1, 2, lex)])
    text = path.read_text().replace("\t1\t\t", "\t0\t\t")
    path.write_text(text)
    with pytest.raises(ValueError):
        C.read_corpus(path, lex)


def test_pairs_tsv_round_trip(tmp_path, targeted, lex):
    pairs = C.generate_minimal_pairs(targeted, lex, seed=0, count=30)
    path = tmp_path / "p.tsv"
    C.write_pairs(path, pairs)
    assert C.read_pairs(path) == pairs
