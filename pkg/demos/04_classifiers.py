#!/usr/bin/env python3
# Train small number-prediction classifiers and watch the decay parameter.

# %%
from decay_rnn import corpus as C
from decay_rnn import evaluation as E
from decay_rnn import training as T

lex = C.load_lexicon()
simple = [t for t in C.load_shipped_templates("targeted", lex) if t.name == "simple_agreement"]
data = C.generate(simple, lex, seed=0, count=600)
train, _, test = C.split(data, 0.8, 0.0, seed=0)
vocab = T.Vocabulary.build([s.tokens for s in data])

# %%
for cell in ("drnn", "srn", "lstm"):
    config = T.ModelConfig.classifier(cell, "number_prediction", hidden_dim=20, embedding_dim=20)
    model, history = T.train_classifier(config, T.TrainConfig(epochs=3, seed=0), train, vocab=vocab)
    acc, _ = E.accuracy(model, "number_prediction", test)
    print(f"{cell:5s} loss {history.epoch_loss[-1]:.3f} held-out accuracy {acc:.3f} alpha {model.alphas()}")

# %% [markdown]
# Checkpoints are self-describing and reload to the same predictions.

# %%
T.save_model("/tmp/demo_drnn.ckpt", model, seed=0)
again = T.load_model("/tmp/demo_drnn.ckpt")
print(again.classify_number(test[0].prefix) == model.classify_number(test[0].prefix))
