#!/usr/bin/env python3
# Evaluation tools: stratified accuracy, confidence profiles, rank summaries.

# %%
import numpy as np

from decay_rnn import corpus as C
from decay_rnn import evaluation as E
from decay_rnn import training as T

lex = C.load_lexicon()
analysis = C.load_shipped_templates("analysis", lex)
joint = [t for t in analysis if t.name.startswith("joint")]
data = C.generate(joint + [t for t in analysis if t.name == "attractor_pp"], lex, seed=0, count=800,
                  grammatical_ratio=1.0)
vocab = T.Vocabulary.build([s.tokens for s in data])
config = T.ModelConfig.classifier("drnn", "number_prediction", hidden_dim=20, embedding_dim=20)
model, _ = T.train_classifier(config, T.TrainConfig(epochs=2, seed=0), data, vocab=vocab)

# %% [markdown]
# Accuracy at distance 7 with one attractor, split by non-attractor count.

# %%
table = E.stratified_accuracy(model, data, {"distance": 7, "attractor_count": 1}, "non_attractor_count",
                              min_items=10)
print(E.format_stratified(table))

# %% [markdown]
# Mean confidence in the subject's number at each prefix position.

# %%
pp = [s for s in data if s.template == "attractor_pp"]
first = pp[0]
aligned = [s for s in pp if len(s.tokens) == len(first.tokens) and s.verb_index == first.verb_index]
profile = E.confidence_profile(model, aligned)
for point in profile.points:
    print(point.position, f"{point.example:10s} {point.mean:.3f}")

# %% [markdown]
# Mean arithmetic rank over a model-by-row accuracy matrix.

# %%
matrix = np.array([[0.9, 0.8, 0.7], [0.9, 0.6, 0.75], [0.5, 0.5, 0.5]])
print("average ties", E.mean_arithmetic_rank(matrix))
print("min ties    ", E.mean_arithmetic_rank(matrix, tie="min"))
