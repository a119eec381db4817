#!/usr/bin/env python3
# A small reverse-mode tape: record a forward pass, then walk it backwards.
# We check the result against central finite differences.

# %%
import numpy as np

from decay_rnn import numerics as nx

rng = np.random.default_rng(0)
x0 = rng.normal(size=(3,))
W0 = rng.normal(size=(2, 3))

# %% [markdown]
# Every op accepts plain arrays or tape tensors.  With arrays it just computes;
# with tensors it also records itself on the tape.


# %%
def loss(W, x):
    h = nx.tanh(nx.matmul(W, x))
    return nx.total(nx.mul(h, h))


tape = nx.Tape()
W = tape.leaf(W0, "W")
x = tape.leaf(x0, "x")
value = loss(W, x)
grads = nx.backward(tape, value)
print("loss", float(value.value), "ops recorded", len(tape))

# %%
numeric = nx.finite_difference_gradient(lambda w: loss(w, x0), W0)
print("analytic dW\n", grads["W"])
print("max |analytic - numeric|", np.abs(grads["W"] - numeric).max())

# %% [markdown]
# Overflow is caught at the op that produced it, not several steps later.

# %%
try:
    bad = nx.Tape()
    with np.errstate(over="ignore"):
        nx.mul(bad.leaf([1e200]), bad.leaf([1e200]))
except nx.NonFiniteError as exc:
    print("caught:", exc)
