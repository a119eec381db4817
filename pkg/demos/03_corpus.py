#!/usr/bin/env python3
# Template grammars generate annotated agreement sentences and minimal pairs.

# %%
from decay_rnn import corpus as C

lex = C.load_lexicon()
print(len(lex.entries), "lexicon entries")

# %% [markdown]
# Annotation counts the nouns between subject and verb, split by whether
# their number matches the subject (attractors do not).

# %%
s = C.annotate("the roses in the vase by the door is red".split(), 1, 8, lex)
print(s.subject_number, s.verb_number, "attractors", s.attractor_count, "grammatical", s.grammatical)

# %%
templates = C.load_shipped_templates("targeted", lex)
for sent in C.generate(templates[:3], lex, seed=0, count=6):
    print(int(sent.grammatical), sent.text)

# %% [markdown]
# Minimal pairs, including the three NPI contrasts per item.

# %%
npi = [t for t in templates if t.phenomenon == "npi"][:1]
for pair in C.generate_minimal_pairs(npi, lex, seed=0, count=1):
    print(f"{pair.preferred_kind:>12s}: {' '.join(pair.grammatical)}")
    print(f"{pair.contrast_kind:>12s}: {' '.join(pair.contrast)}")

# %%
train, valid, test = C.split(C.generate(templates, lex, seed=0, count=300), 0.8, 0.1, seed=0)
print(len(train), len(valid), len(test))
