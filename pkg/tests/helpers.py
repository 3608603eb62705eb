"""Shared test oracles, independent of the autodiff tape."""

import numpy as np

from repgen.diffmath import Tape, Var


def finite_difference(build_loss, leaves, step=1e-5):
    """Central finite differences of a scalar loss wrt each leaf array.

    ``build_loss`` maps a list of plain ndarrays to a float; ``leaves``
    is the list of base points. Returns one gradient array per leaf.
    Forward evaluation only: no tape involved.
    """
    grads = []
    for k, base in enumerate(leaves):
        base = np.asarray(base, dtype=np.float64)
        g = np.zeros_like(base)
        flat = g.reshape(-1)
        for i in range(base.size):
            bumped = [np.array(leaf, dtype=np.float64, copy=True) for leaf in leaves]
            bumped[k].reshape(-1)[i] += step
            hi = build_loss(bumped)
            bumped[k].reshape(-1)[i] -= 2 * step
            lo = build_loss(bumped)
            flat[i] = (hi - lo) / (2 * step)
        grads.append(g)
    return grads


def tape_gradients(build_loss_vars, leaves):
    """Reverse-mode gradients of a scalar loss wrt each leaf array."""
    with Tape() as tape:
        vars_ = [Var(np.asarray(leaf, dtype=np.float64)) for leaf in leaves]
        loss = build_loss_vars(vars_)
        tape.backward(loss)
    return [np.zeros_like(v.value) if v.grad is None else v.grad for v in vars_]


def max_rel_error(got, want, floor=1e-8):
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    denom = np.maximum(np.abs(want), floor)
    return float(np.max(np.abs(got - want) / denom)) if got.size else 0.0
