"""Independent reference implementations shared by the unit and acceptance tests."""
import math
from fractions import Fraction

import numpy as np

from pgsr.library import Library
from pgsr.policy import PolicyParams, compute_gradients, sample_batch, surrogate_objective
from pgsr.priors import LengthBounds, PriorConfig, Priors


def random_expression(lib, rng, max_length=30):
    """Random complete prefix expression, built without the package's tree code."""
    arity = [t.arity for t in lib.tokens]
    by_arity = {a: [i for i, x in enumerate(arity) if x == a] for a in (0, 1, 2)}
    target = int(rng.integers(1, max_length + 1))
    out, open_slots = [], 1
    while open_slots:
        room = target - len(out) - open_slots
        choices = [a for a in (0, 1, 2) if by_arity[a] and a <= room + 1 and (a < 2 or room >= 1)]
        if room <= 0:
            choices = [0]
        a = int(rng.choice(choices))
        out.append(int(rng.choice(by_arity[a])))
        open_slots += a - 1
    return out


def reference_eval(expr, lib, row):
    """Recursive-descent evaluator on one input row.

    Returns (value, finite). Uses numpy scalar ufuncs so that finite values
    are comparable bit-for-bit with the vectorized evaluator.
    """
    pos = 0
    finite = True

    def node():
        nonlocal pos, finite
        tok = lib.tokens[expr[pos]]
        pos += 1
        if tok.arity == 0:
            return np.float64(row[tok.var_index])
        args = [node() for _ in range(tok.arity)]
        fn = {"add": np.add, "sub": np.subtract, "mul": np.multiply, "div": np.divide,
              "sin": np.sin, "cos": np.cos, "exp": np.exp, "log": np.log, "sqrt": np.sqrt}[tok.kind]
        with np.errstate(all="ignore"):
            v = fn(*args)
        if not math.isfinite(v):
            finite = False
        return v

    v = node()
    assert pos == len(expr)
    return v, finite


def oracle_baseline(rewards, eps):
    """Exact-arithmetic reference: sort descending, keep the first ceil(eps*M)."""
    M = len(rewards)
    k = max(1, math.ceil(Fraction(eps).limit_denominator(10 ** 6) * M))
    order = sorted(range(M), key=lambda j: (-rewards[j], j))
    return rewards[order[k - 1]], sorted(order[:k])


def toy_setup(seed=0, M=8):
    """Hidden 4, five tokens, eight frozen sequences with distinct rewards."""
    lib = Library.from_names(("add", "mul", "sin"), 2)
    rng = np.random.default_rng(seed)
    params = PolicyParams.initialize(len(lib), 4, rng=rng, init_scale=0.5)
    params.W_out[:] = rng.normal(0, 0.5, params.W_out.shape)
    params.b_out[:] = rng.normal(0, 0.5, params.b_out.shape)
    priors = Priors(lib, PriorConfig(bounds=LengthBounds(2, 9)))
    batch = sample_batch(params, priors, M, rng)
    batch.rewards = rng.uniform(0, 1, M)
    return lib, params, priors, batch


def numeric_gradient(fn, theta, h=1e-5):
    g = np.zeros_like(theta)
    for k in range(theta.size):
        e = np.zeros_like(theta)
        e[k] = h
        g[k] = (fn(theta + e) - fn(theta - e)) / (2 * h)
    return g


def max_rel_error(a, n, floor=1e-7):
    big = np.maximum(np.abs(a), np.abs(n)) > floor
    assert np.all(np.abs(a - n)[~big] < 1e-9)
    return float(np.max(np.abs(a - n)[big] / np.maximum(np.abs(a), np.abs(n))[big]))


def check_gradient(mode, eta, decay=0.85, seed=0):
    lib, params, priors, batch = toy_setup(seed)
    b = float(np.median(batch.rewards))
    L, H = len(lib), params.hidden_size

    def J(theta):
        return surrogate_objective(PolicyParams.from_flat(theta, L, H), priors, batch, b,
                                   eta, decay, mode)

    analytic = compute_gradients(params, priors, batch, b, eta, decay, mode)
    numeric = numeric_gradient(J, params.flat())
    return max_rel_error(analytic, numeric)
