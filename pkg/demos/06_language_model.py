#!/usr/bin/env python3
# A tiny word-level language model, perplexity against a unigram baseline,
# and targeted evaluation on minimal pairs.

# %%
from decay_rnn import corpus as C
from decay_rnn import evaluation as E
from decay_rnn import training as T

lex = C.load_lexicon()
templates = C.load_shipped_templates("targeted", lex)
data = C.generate(templates, lex, seed=0, count=900, grammatical_ratio=1.0)
train, valid, _ = C.split(data, 0.8, 0.2, seed=0)
pairs = C.generate_minimal_pairs(templates, lex, seed=1, count=150)
vocab = T.Vocabulary.build([s.tokens for s in data] + [p.contrast for p in pairs])

# %%
config = T.ModelConfig.language_model("drnn", hidden_dim=48, embedding_dim=32)
model, history = T.train_lm(config, T.TrainConfig(learning_rate=5e-3, batch_size=16, epochs=10, seed=0), train, valid, vocab)
print("validation perplexity", E.perplexity(model, valid))
# add-one smoothing keeps words unseen in training from sending the baseline to infinity
print("unigram perplexity   ", E.unigram_perplexity(train, valid, smoothing=1.0))

# %%
rows = E.targeted_eval(model, pairs)
report = E.EvaluationReport(["drnn"], {"drnn": rows}, {"drnn": E.perplexity(model, valid)})
print(report.to_text())
