"""Recurrent cells: Decay RNN family plus SRN, LSTM and GRU baselines.

All cells share one step signature ``step(params, state, x) -> state`` and are
built from :mod:`decay_rnn.numerics` ops, so the same code runs on plain
arrays or on tape tensors.  Hidden states are row vectors: ``h`` is (H,) for a
single sequence or (B, H) for a batch, and matrices act as ``h @ W.T``.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import checkpoint
from . import numerics as nx

KINDS = ("srn", "drnn", "sdrnn", "abdrnn", "lstm", "gru")
DECAY_KINDS = ("drnn", "sdrnn", "abdrnn")
_GATES = {"lstm": 4, "gru": 3}

DEFAULT_ALPHA = 0.8


@dataclass
class CellParameters:
    """Learnable arrays of one recurrent layer.

    ``W`` is None for Ab-DRNN, ``alpha_logit`` is None outside the decay
    family and ``dale_signs`` is set only for DRNN.  Gated cells stack their
    gate blocks along the first axis (LSTM: i, f, g, o; GRU: z, r, n).
    Array fields may hold :class:`~decay_rnn.numerics.Tensor` leaves while a
    forward pass is being recorded.
    """

    kind: str
    W: object
    U: object
    b: object
    alpha_logit: object = None
    dale_signs: np.ndarray | None = None
    activation: str = "tanh"
    alpha_mode: str = "sigmoid"

    @property
    def hidden_size(self):
        return nx._val(self.b).shape[0] // _GATES.get(self.kind, 1)

    @property
    def input_size(self):
        return nx._val(self.U).shape[1]

    def arrays(self):
        """Learnable arrays in declared (checkpoint) order."""
        out = {}
        for name in ("W", "U", "b", "alpha_logit"):
            value = getattr(self, name)
            if value is not None:
                out[name] = value
        return out

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def bind(self, tape, prefix=""):
        """Copy whose learnable arrays are trainable leaves on ``tape``."""
        leaves = {name: tape.leaf(value, prefix + name) for name, value in self.arrays().items()}
        return self.replace(**leaves)


@dataclass
class CellState:
    h: object
    c: object = None  # LSTM memory cell


def inhibitory_count(hidden):
    return max(1, int(round(0.2 * hidden)))


def make_dale_signs(hidden, permutation_seed=None):
    """+1 for excitatory units, -1 for the inhibitory block at the end.

    With ``permutation_seed`` the inhibitory positions are shuffled instead.
    """
    signs = np.ones(hidden)
    signs[hidden - inhibitory_count(hidden):] = -1.0
    if permutation_seed is not None:
        signs = np.random.default_rng([41, permutation_seed]).permutation(signs)
    return signs


def decay_value(p):
    """The decay factor alpha of a decay-family cell."""
    if p.alpha_mode == "sigmoid":
        return nx.sigmoid(p.alpha_logit)
    if p.alpha_mode == "linear":
        return p.alpha_logit
    raise ValueError(f"unknown alpha_mode {p.alpha_mode!r}")


def effective_recurrent_matrix(p):
    """ReLU(W) with column j scaled by dale_signs[j]."""
    if p.dale_signs is None:
        raise ValueError("cell has no dale_signs")
    return nx.mul(nx.relu(p.W), p.dale_signs[None, :])


def prepare(p, kind=None):
    """Quantities that are constant over a sequence: recurrent matrix and alpha.

    ``kind`` selects the update rule (defaults to ``p.kind``); it decides
    whether the recurrent matrix goes through the Dale constraint.
    """
    kind = kind or p.kind
    prep = {}
    if kind == "drnn":
        prep["W_rec"] = nx.transpose(effective_recurrent_matrix(p))
    elif kind != "abdrnn":
        prep["W_rec"] = nx.transpose(p.W)
    prep["U_t"] = nx.transpose(p.U)
    if kind in DECAY_KINDS:
        alpha = decay_value(p)
        prep["alpha"] = alpha
        prep["one_minus_alpha"] = 1.0 - alpha
    return prep


def _check_dims(p, state, x):
    h = nx._val(state.h)
    xv = nx._val(x)
    if h.shape[-1] != p.hidden_size:
        raise ValueError(f"hidden state has size {h.shape[-1]}, cell expects {p.hidden_size}")
    if xv.shape[-1] != p.input_size:
        raise ValueError(f"input has size {xv.shape[-1]}, cell expects {p.input_size}")


def _decay_update(p, prep, h, drive):
    f = nx.activation(p.activation)
    return CellState(f(prep["alpha"] * h + prep["one_minus_alpha"] * drive))


def drnn_step(p, state, x, prep=None):
    prep = prep or prepare(p, "drnn")
    _check_dims(p, state, x)
    drive = state.h @ prep["W_rec"] + x @ prep["U_t"] + p.b
    return _decay_update(p, prep, state.h, drive)


def sdrnn_step(p, state, x, prep=None):
    prep = prep or prepare(p, "sdrnn")
    _check_dims(p, state, x)
    drive = state.h @ prep["W_rec"] + x @ prep["U_t"] + p.b
    return _decay_update(p, prep, state.h, drive)


def abdrnn_step(p, state, x, prep=None):
    prep = prep or prepare(p, "abdrnn")
    _check_dims(p, state, x)
    drive = x @ prep["U_t"] + p.b
    return _decay_update(p, prep, state.h, drive)


def srn_step(p, state, x, prep=None):
    prep = prep or prepare(p, "srn")
    _check_dims(p, state, x)
    f = nx.activation(p.activation)
    return CellState(f(state.h @ prep["W_rec"] + x @ prep["U_t"] + p.b))


def lstm_step(p, state, x, prep=None):
    prep = prep or prepare(p, "lstm")
    _check_dims(p, state, x)
    H = p.hidden_size
    z = state.h @ prep["W_rec"] + x @ prep["U_t"] + p.b
    i = nx.sigmoid(nx.slice_last(z, 0, H))
    f = nx.sigmoid(nx.slice_last(z, H, 2 * H))
    g = nx.tanh(nx.slice_last(z, 2 * H, 3 * H))
    o = nx.sigmoid(nx.slice_last(z, 3 * H, 4 * H))
    c = f * state.c + i * g
    return CellState(o * nx.tanh(c), c)


def gru_step(p, state, x, prep=None):
    prep = prep or prepare(p, "gru")
    _check_dims(p, state, x)
    H = p.hidden_size
    hw = state.h @ prep["W_rec"]
    xu = x @ prep["U_t"] + p.b
    z = nx.sigmoid(nx.slice_last(hw, 0, H) + nx.slice_last(xu, 0, H))
    r = nx.sigmoid(nx.slice_last(hw, H, 2 * H) + nx.slice_last(xu, H, 2 * H))
    n = nx.tanh(nx.slice_last(xu, 2 * H, 3 * H) + r * nx.slice_last(hw, 2 * H, 3 * H))
    return CellState((1.0 - z) * n + z * state.h)


STEPS = {
    "srn": srn_step,
    "drnn": drnn_step,
    "sdrnn": sdrnn_step,
    "abdrnn": abdrnn_step,
    "lstm": lstm_step,
    "gru": gru_step,
}


def step(p, state, x, prep=None):
    return STEPS[p.kind](p, state, x, prep)


def initial_state(p, batch=None):
    shape = (p.hidden_size,) if batch is None else (batch, p.hidden_size)
    return CellState(np.zeros(shape), np.zeros(shape) if p.kind == "lstm" else None)


def run(p, inputs, state=None):
    """Step through ``inputs`` (iterable of x vectors); returns the list of states."""
    prep = prepare(p)
    fn = STEPS[p.kind]
    states = []
    for x in inputs:
        if state is None:
            batch = None if np.ndim(nx._val(x)) == 1 else nx._val(x).shape[0]
            state = initial_state(p, batch)
        state = fn(p, state, x, prep)
        states.append(state)
    return states


def init_parameters(kind, hidden, input_size, seed, activation="tanh", alpha_init=DEFAULT_ALPHA,
                    alpha_mode="sigmoid", inhibitory_seed=None):
    """Fresh parameters: W, U ~ U(-1/sqrt(hidden), 1/sqrt(hidden)), b = 0."""
    if kind not in KINDS:
        raise ValueError(f"unknown cell kind {kind!r}; expected one of {KINDS}")
    rng = np.random.default_rng(seed)
    rows = _GATES.get(kind, 1) * hidden
    bound = 1.0 / np.sqrt(hidden)
    W = rng.uniform(-bound, bound, (rows, hidden))
    U = rng.uniform(-bound, bound, (rows, input_size))
    params = CellParameters(kind=kind, W=W, U=U, b=np.zeros(rows), activation=activation,
                            alpha_mode=alpha_mode)
    if kind == "abdrnn":
        params.W = None
    if kind in DECAY_KINDS:
        init = nx.logit(alpha_init) if alpha_mode == "sigmoid" else float(alpha_init)
        params.alpha_logit = np.array(init)
    if kind == "drnn":
        params.dale_signs = make_dale_signs(hidden, inhibitory_seed)
    return params


# --------------------------------------------------------------------------
# checkpoint I/O


def cell_header(p):
    return {
        "kind": p.kind,
        "hidden_size": p.hidden_size,
        "input_size": p.input_size,
        "activation": p.activation,
        "alpha_mode": p.alpha_mode,
    }


def cell_arrays(p, prefix=""):
    named = [(prefix + name, np.asarray(value)) for name, value in p.arrays().items()]
    if p.dale_signs is not None:
        named.append((prefix + "dale_signs", p.dale_signs))
    return named


def cell_from_arrays(header, arrays, prefix=""):
    def get(name):
        return arrays.get(prefix + name)

    return CellParameters(
        kind=header["kind"],
        W=get("W"),
        U=get("U"),
        b=get("b"),
        alpha_logit=get("alpha_logit"),
        dale_signs=get("dale_signs"),
        activation=header["activation"],
        alpha_mode=header.get("alpha_mode", "sigmoid"),
    )


def save_cell(path, p, seed=None):
    header = {"format": "cell", "cell": cell_header(p), "seed": seed}
    checkpoint.write(path, header, cell_arrays(p))


def load_cell(path):
    header, arrays = checkpoint.read(path)
    if header.get("format") != "cell":
        raise checkpoint.CheckpointError("not a single-cell checkpoint")
    return cell_from_arrays(header["cell"], arrays)
