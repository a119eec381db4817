#!/usr/bin/env python3
# The recurrent cells side by side, and the properties that tie the decay
# family together: Dale-signed recurrence, the moving-average law, reductions.

# %%
import numpy as np

from decay_rnn import cells

xs = np.random.default_rng(1).normal(size=(6, 4))
for kind in cells.KINDS:
    p = cells.init_parameters(kind, hidden=5, input_size=4, seed=0)
    h = cells.run(p, xs)[-1].h
    print(f"{kind:7s} final state {np.round(h, 3)}")

# %% [markdown]
# Dale's principle: every column of the effective recurrent matrix has one sign.

# %%
p = cells.init_parameters("drnn", hidden=6, input_size=4, seed=0)
W_eff = cells.effective_recurrent_matrix(p)
print("dale signs ", p.dale_signs)
print("every entry carries its column's sign:", bool(np.all(W_eff * p.dale_signs >= 0)))

# %% [markdown]
# With an identity activation and a constant drive c, the decay update is a
# moving average: the distance to c shrinks by a factor alpha each step.

# %%
p = cells.init_parameters("abdrnn", hidden=3, input_size=1, seed=0, activation="identity", alpha_init=0.7)
p = p.replace(U=np.zeros((3, 1)), b=np.array([1.0, -2.0, 0.5]))
state = cells.CellState(np.array([5.0, 5.0, 5.0]))
for t in range(1, 6):
    state = cells.step(p, state, np.zeros(1))
    print(t, np.abs(state.h - p.b), 0.7 ** t * np.abs(5.0 - p.b))

# %% [markdown]
# Pushing alpha to zero turns SDRNN into the plain SRN.

# %%
s = cells.init_parameters("sdrnn", hidden=5, input_size=4, seed=2).replace(alpha_logit=np.array(-40.0))
r = cells.init_parameters("srn", hidden=5, input_size=4, seed=2)
diff = cells.run(s, xs)[-1].h - cells.run(r, xs)[-1].h
print("SDRNN(alpha ~ 0) vs SRN:", np.abs(diff).max())
