"""Prefix-notation expressions: completeness, evaluation, reward and recovery."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .library import Library


class IncompleteExpression(ValueError):
    pass


class DegenerateTarget(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64).ravel()
        if X.ndim == 1:
            X = X[:, None]
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
        if X.shape[0] == 0:
            raise ValueError("empty dataset")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("dataset contains non-finite values")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "y_std", float(np.std(y)))


def required_count(partial: Sequence[int], lib: Library) -> int:
    """Number of subtrees still missing: ``1 + sum(arity - 1)``.

    0 means the sequence is a complete expression.
    """
    if len(partial) == 0:
        return 1
    return 1 + int(np.sum(lib.arities[np.asarray(partial, dtype=np.int64)] - 1))


def is_complete(expr: Sequence[int], lib: Library) -> bool:
    """True iff the counter hits 0 at the last token and never before."""
    count = 1
    for k, t in enumerate(expr):
        count += int(lib.arities[t]) - 1
        if count == 0:
            return k == len(expr) - 1
    return False


def _check_complete(expr: Sequence[int], lib: Library) -> None:
    if not is_complete(expr, lib):
        raise IncompleteExpression(f"not a complete expression: {lib.decode(expr)}")


def _run(expr: Sequence[int], lib: Library, X: np.ndarray) -> np.ndarray:
    ops = lib._ops
    stack = []
    push, pop = stack.append, stack.pop
    for t in reversed(expr):
        arity, fn = ops[t]
        if arity == 0:
            push(X[:, fn])
        elif arity == 1:
            push(fn(pop()))
        else:
            left = pop()
            push(fn(left, pop()))
    return stack[0]


def _run_tracked(expr: Sequence[int], lib: Library, X: np.ndarray):
    ops = lib._ops
    stack = []
    bad = np.zeros(X.shape[0], dtype=bool)
    for t in reversed(expr):
        arity, fn = ops[t]
        if arity == 0:
            stack.append(X[:, fn])
            continue
        if arity == 1:
            out = fn(stack.pop())
        else:
            left = stack.pop()
            out = fn(left, stack.pop())
        bad |= ~np.isfinite(out)
        stack.append(out)
    return stack[0], ~bad


def evaluate(expr: Sequence[int], X: np.ndarray, lib: Library):
    """Evaluate a complete prefix expression row-wise.

    Returns ``(y_hat, finite)`` where ``finite[k]`` is False if row ``k`` hit
    an overflow, a domain error or any non-finite intermediate value.
    Operators are unprotected.
    """
    _check_complete(expr, lib)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    # Fast path: with finite inputs, a non-finite intermediate can only come
    # from an operation that raises a floating point error.
    try:
        with np.errstate(divide="raise", over="raise", invalid="raise", under="ignore"):
            out = _run(expr, lib, X)
        out = np.broadcast_to(out, (X.shape[0],)).astype(np.float64, copy=True)
        if np.all(np.isfinite(X)):
            return out, np.ones(X.shape[0], dtype=bool)
    except FloatingPointError:
        pass
    with np.errstate(all="ignore"):
        out, finite = _run_tracked(expr, lib, X)
    finite = finite & np.all(np.isfinite(X), axis=1)
    return np.asarray(out, dtype=np.float64).copy(), finite


def reward(expr: Sequence[int], data: Dataset, lib: Library) -> float:
    """``1 / (1 + NRMSE)``, or 0 when any prediction is non-finite."""
    _check_complete(expr, lib)
    return fast_reward(expr, data, lib)


def fast_reward(expr: Sequence[int], data: Dataset, lib: Library) -> float:
    """:func:`reward` without the completeness check, for sampled sequences."""
    if data.y_std == 0.0:
        raise DegenerateTarget("target has zero standard deviation")
    # Every divide/overflow/invalid error leaves a non-finite value in some
    # row, which zeroes the reward anyway.
    try:
        with np.errstate(divide="raise", over="raise", invalid="raise", under="ignore"):
            y_hat = _run(expr, lib, data.X)
            err = np.sqrt(np.mean((data.y - y_hat) ** 2)) / data.y_std
    except FloatingPointError:
        return 0.0
    return 1.0 / (1.0 + float(err))


def recovery_check(
    expr: Sequence[int],
    truth: Sequence[int],
    lib: Library,
    grid: np.ndarray,
    tol: float = 1e-10,
) -> bool:
    """Numeric equivalence of two complete expressions on a dense grid.

    ``grid`` should be fresh points from the benchmark's training domain,
    independent of the training data (see ``bench.Benchmark.recovery_grid``).
    """
    if list(expr) == list(truth):
        a, fa = evaluate(expr, grid, lib)
        return bool(fa.all())
    a, fa = evaluate(expr, grid, lib)
    if not fa.all():
        return False
    b, fb = evaluate(truth, grid, lib)
    if not fb.all():
        return False
    return bool(np.max(np.abs(a - b)) <= tol)


def to_infix(expr: Sequence[int], lib: Library) -> str:
    """Fully parenthesized infix string, e.g. ``sin((x1 * x1))``."""
    _check_complete(expr, lib)
    stack = []
    for t in reversed(expr):
        tok = lib.tokens[t]
        if tok.arity == 0:
            stack.append(tok.name)
        elif tok.arity == 1:
            stack.append(f"{tok.name}({stack.pop()})")
        else:
            left = stack.pop()
            stack.append(f"({left} {lib.symbol(t)} {stack.pop()})")
    return stack[0]
