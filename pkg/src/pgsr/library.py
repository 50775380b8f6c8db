"""Token library for prefix-notation expressions."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class Token:
    name: str
    arity: int
    kind: str
    var_index: Optional[int] = None

    @property
    def is_terminal(self) -> bool:
        return self.arity == 0


# kind -> (arity, numpy function, infix symbol or None for function-call style)
_OPERATORS: dict[str, tuple[int, Callable, Optional[str]]] = {
    "add": (2, np.add, "+"),
    "sub": (2, np.subtract, "-"),
    "mul": (2, np.multiply, "*"),
    "div": (2, np.divide, "/"),
    "sin": (1, np.sin, None),
    "cos": (1, np.cos, None),
    "exp": (1, np.exp, None),
    "log": (1, np.log, None),
    "sqrt": (1, np.sqrt, None),
}

TRIG_KINDS = frozenset({"sin", "cos"})
INVERSE_KINDS = {"exp": "log", "log": "exp"}


class Library:
    """Ordered token set: binary tokens, then unary, then terminals.

    The ordering is a hard contract because prior vectors are built by
    concatenating per-class blocks.
    """

    def __init__(self, tokens: Sequence[Token]):
        tokens = list(tokens)
        arities = [t.arity for t in tokens]
        if any(a not in (0, 1, 2) for a in arities):
            raise ValueError("token arity must be 0, 1 or 2")
        if arities != sorted(arities, reverse=True):
            raise ValueError("tokens must be ordered binary, unary, terminal")
        names = [t.name for t in tokens]
        if len(set(names)) != len(names):
            raise ValueError("token names must be unique")
        if 0 not in arities:
            raise ValueError("library needs at least one terminal token")
        for t in tokens:
            if t.arity == 0:
                if t.kind != "var" or t.var_index is None or t.var_index < 0:
                    raise ValueError(f"terminal {t.name!r} must be an input variable")
            elif t.kind not in _OPERATORS or _OPERATORS[t.kind][0] != t.arity:
                raise ValueError(f"unknown operator {t.kind!r} with arity {t.arity}")

        self.tokens: tuple[Token, ...] = tuple(tokens)
        self.names = tuple(names)
        self.arities = np.array(arities, dtype=np.int64)
        self.n_binary = int(np.sum(self.arities == 2))
        self.n_unary = int(np.sum(self.arities == 1))
        self.n_terminal = int(np.sum(self.arities == 0))
        self.n_vars = 1 + max(t.var_index for t in tokens if t.arity == 0)
        self._index = {n: i for i, n in enumerate(names)}
        # Flat per-token tuples for the hot evaluation loop.
        self._ops = tuple(
            (t.arity, t.var_index if t.arity == 0 else _OPERATORS[t.kind][1])
            for t in tokens
        )

    @classmethod
    def from_names(cls, operators: Sequence[str], n_vars: int = 1) -> "Library":
        """Build a library from operator kinds plus ``n_vars`` input variables.

        >>> Library.from_names(["add", "sin"], n_vars=2).names
        ('add', 'sin', 'x1', 'x2')
        """
        ops = sorted(operators, key=lambda k: -_OPERATORS[k][0])
        tokens = [Token(k, _OPERATORS[k][0], k) for k in ops]
        tokens += [Token(f"x{j + 1}", 0, "var", j) for j in range(n_vars)]
        return cls(tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    def __repr__(self) -> str:
        return f"Library({list(self.names)})"

    def __eq__(self, other) -> bool:
        return isinstance(other, Library) and self.tokens == other.tokens

    def __hash__(self) -> int:
        return hash(self.tokens)

    def index(self, name: str) -> int:
        return self._index[name]

    def encode(self, names: Sequence[str]) -> list[int]:
        """Map token names to ids."""
        return [self._index[n] for n in names]

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.names[i] for i in ids]

    @property
    def class_counts(self) -> tuple[int, int, int]:
        return self.n_binary, self.n_unary, self.n_terminal

    def kind_mask(self, kinds) -> np.ndarray:
        return np.array([t.kind in kinds for t in self.tokens])

    def symbol(self, i: int) -> Optional[str]:
        tok = self.tokens[i]
        return _OPERATORS[tok.kind][2] if tok.arity else None
