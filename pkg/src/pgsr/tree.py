"""Vectorized bookkeeping for a batch of partially built prefix expressions.

Each row keeps a stack of operator nodes that still have unassigned child
slots. Appending a token assigns it to the top node's next slot, pops that
node once all its slots are assigned, then pushes the token if it is an
operator. The top of the stack is therefore always the parent of the next
token, and its first child (if already placed) is the next token's sibling.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .library import TRIG_KINDS, Library


class TreeState:
    def __init__(self, lib: Library, batch_size: int, capacity: int = 64):
        self.lib = lib
        self.empty = len(lib)  # "no parent / no sibling" category
        self._arity = lib.arities
        self._is_trig = lib.kind_mask(TRIG_KINDS)
        n = batch_size
        self.length = np.zeros(n, dtype=np.int64)
        self.required = np.ones(n, dtype=np.int64)
        self.done = np.zeros(n, dtype=bool)
        self._ptr = np.zeros(n, dtype=np.int64)
        self._tok = np.zeros((n, capacity), dtype=np.int64)
        self._started = np.zeros((n, capacity), dtype=np.int64)
        self._first = np.zeros((n, capacity), dtype=np.int64)
        self._trig = np.zeros((n, capacity), dtype=bool)
        self._rows = np.arange(n)

    @classmethod
    def from_prefix(cls, partial: Sequence[int], lib: Library) -> "TreeState":
        state = cls(lib, 1, capacity=max(len(partial), 1) + 1)
        for t in partial:
            state.append(np.array([t]))
        return state

    def _top(self):
        return np.maximum(self._ptr - 1, 0)

    @property
    def parent(self) -> np.ndarray:
        top = self._tok[self._rows, self._top()]
        return np.where(self._ptr > 0, top, self.empty)

    @property
    def sibling(self) -> np.ndarray:
        top = self._top()
        has = (self._ptr > 0) & (self._started[self._rows, top] == 1)
        return np.where(has, self._first[self._rows, top], self.empty)

    @property
    def under_trig(self) -> np.ndarray:
        """Whether the next token would have a trigonometric ancestor."""
        return (self._ptr > 0) & self._trig[self._rows, self._top()]

    def append(self, tokens: np.ndarray) -> None:
        """Append one token per row; rows already complete are left untouched."""
        tokens = np.asarray(tokens, dtype=np.int64)
        live = ~self.done
        rows = self._rows[live]
        t = tokens[live]
        ptr = self._ptr[live]
        ctx_trig = self.under_trig[live]

        has = ptr > 0
        r, top = rows[has], ptr[has] - 1
        self._started[r, top] += 1
        first = self._started[r, top] == 1
        self._first[r[first], top[first]] = t[has][first]
        full = self._started[r, top] == self._arity[self._tok[r, top]]
        ptr[has] -= full

        op = self._arity[t] > 0
        r, p = rows[op], ptr[op]
        self._tok[r, p] = t[op]
        self._started[r, p] = 0
        self._trig[r, p] = ctx_trig[op] | self._is_trig[t[op]]
        ptr[op] += 1

        self._ptr[live] = ptr
        self.length[live] += 1
        self.required[live] += self._arity[t] - 1
        self.done[live] = self.required[live] == 0


def parents_siblings(expr: Sequence[int], lib: Library):
    """Parent and left-sibling token ids for every position of ``expr``."""
    state = TreeState(lib, 1, capacity=len(expr) + 1)
    parents, siblings = [], []
    for t in expr:
        parents.append(int(state.parent[0]))
        siblings.append(int(state.sibling[0]))
        state.append(np.array([t]))
    return parents, siblings
