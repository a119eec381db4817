"""Tape gradients versus central finite differences for every cell kind."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import cells
from . import numerics as nx

KINK_MARGIN = 1e-4


@dataclass
class GradcheckResult:
    kind: str
    n_configs: int
    tolerance: float
    max_rel_error: dict = field(default_factory=dict)
    excluded: int = 0

    @property
    def passed(self):
        return all(err <= self.tolerance for err in self.max_rel_error.values())


def relative_error(analytic, numeric):
    """Norm-wise relative error ||a - n|| / (||a|| + ||n||), 0 when both vanish."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    denom = np.linalg.norm(a) + np.linalg.norm(n)
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - n) / denom)


def random_config(kind, rng):
    hidden = int(rng.integers(2, 9))
    input_size = int(rng.integers(1, 5))
    length = int(rng.integers(1, 7))
    act = "tanh" if kind in ("lstm", "gru") else str(rng.choice(["tanh", "relu"]))
    p = cells.init_parameters(kind, hidden, input_size, seed=int(rng.integers(2**31)), activation=act)
    # move away from the init so biases and alpha are exercised
    p.b = rng.normal(0.0, 0.5, p.b.shape)
    if p.W is not None:
        p.W = rng.normal(0.0, 0.6, p.W.shape)
    p.U = rng.normal(0.0, 0.8, p.U.shape)
    if p.alpha_logit is not None:
        p.alpha_logit = np.array(rng.normal(0.0, 1.5))
    xs = rng.normal(0.0, 1.0, (length, input_size))
    readout = rng.normal(0.0, 1.0, (length, hidden))
    return p, xs, readout


def sequence_loss(p, xs, readout):
    """sum_t readout_t . h_t, on arrays or tensors."""
    states = cells.run(p, list(xs))
    loss = None
    for st, r in zip(states, readout):
        term = nx.total(nx.mul(st.h, r))
        loss = term if loss is None else loss + term
    return loss


def _relu_inputs(tape):
    return [(inputs[0], ctx) for name, inputs, out, ctx in tape.ops if name == "relu"]


def check_config(p, xs, readout, step=1e-5):
    """Return ({param: rel_error}, n_excluded) or None when a relu input sits on its kink."""
    tape = nx.Tape()
    bound = p.bind(tape)
    loss = sequence_loss(bound, xs, readout)
    analytic = nx.backward(tape, loss)

    exclude = {}
    for x, _ in _relu_inputs(tape):
        near = np.abs(nx._val(x)) < KINK_MARGIN
        if not near.any():
            continue
        if isinstance(x, nx.Tensor) and x.name == "W":
            # DRNN relu(W): drop those coordinates of W
            exclude["W"] = near
        else:
            return None

    errors = {}
    n_excluded = 0
    for name, value in p.arrays().items():
        def f(v, name=name):
            return float(sequence_loss(p.replace(**{name: v}), xs, readout))

        numeric = nx.finite_difference_gradient(f, np.asarray(value), step)
        keep = ~exclude.get(name, np.zeros(np.shape(value), dtype=bool))
        n_excluded += int((~keep).sum())
        errors[name] = relative_error(analytic[name][keep], numeric[keep])
    return errors, n_excluded


def gradient_check(kind, n_configs=20, seed=0, tolerance=1e-5, step=1e-5):
    rng = np.random.default_rng([31, seed, cells.KINDS.index(kind)])
    result = GradcheckResult(kind, 0, tolerance)
    attempts = 0
    while result.n_configs < n_configs:
        attempts += 1
        if attempts > 20 * n_configs:
            raise RuntimeError(f"could not draw kink-free configurations for {kind}")
        p, xs, readout = random_config(kind, rng)
        checked = check_config(p, xs, readout, step)
        if checked is None:
            continue
        errors, n_excluded = checked
        result.n_configs += 1
        result.excluded += n_excluded
        for name, err in errors.items():
            result.max_rel_error[name] = max(result.max_rel_error.get(name, 0.0), err)
    return result


def format_report(results):
    lines = [f"{'cell':<8} {'param':<12} {'max_rel_error':>14}  status"]
    for res in results:
        for name, err in res.max_rel_error.items():
            status = "ok" if err <= res.tolerance else "FAIL"
            lines.append(f"{res.kind:<8} {name:<12} {err:>14.3e}  {status}")
        lines.append(f"{res.kind:<8} {'(overall)':<12} {'':>14}  {'PASS' if res.passed else 'FAIL'}"
                     f"  configs={res.n_configs} excluded_coords={res.excluded}")
    return "\n".join(lines) + "\n"
