"""Additive logit priors and hard constraint masks for autoregressive sampling.

Priors are gradient-free vectors added to the policy logits; masks set the
logits of forbidden tokens to ``-inf``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .library import INVERSE_KINDS, TRIG_KINDS, Library
from .tree import TreeState

CONSTRAINTS = ("trig_nesting", "inverse_unary")


class InfeasibleMask(RuntimeError):
    """Every token got masked at some step. Indicates a bug or a bad config."""


@dataclass(frozen=True)
class SoftLengthConfig:
    loc: int = 10
    scale2: float = 5.0

    def __post_init__(self):
        if int(self.loc) != self.loc or self.loc < 1:
            raise ValueError("soft length loc must be a positive integer")
        if not self.scale2 > 0:
            raise ValueError("soft length scale2 must be > 0")


@dataclass(frozen=True)
class LengthBounds:
    min_length: int = 4
    max_length: int = 30

    def __post_init__(self):
        if not 1 <= self.min_length <= self.max_length:
            raise ValueError("need 1 <= min_length <= max_length")


def equal_type_prior(lib: Library) -> np.ndarray:
    """Logits giving each nonempty arity class equal total probability.

    Each token of a class with ``n`` members gets ``-log n`` (additive
    constant fixed to 0), so softmax spreads a class's share uniformly.
    """
    counts = np.array([lib.n_binary, lib.n_unary, lib.n_terminal])
    per_token = counts[2 - lib.arities]
    return -np.log(per_token.astype(np.float64))


def soft_length_prior(i: int, cfg: SoftLengthConfig, lib: Library) -> np.ndarray:
    """Position-dependent Gaussian penalty in logit space.

    Terminals are penalized before position ``loc`` and binary operators
    after it; unary operators are never touched. ``i`` is 1-based.
    """
    if i < 1:
        raise ValueError("position is 1-based")
    out = np.zeros(len(lib))
    pen = -((i - cfg.loc) ** 2) / (2.0 * cfg.scale2)
    if i > cfg.loc:
        out[lib.arities == 2] = pen
    elif i < cfg.loc:
        out[lib.arities == 0] = pen
    return out


def length_allowed(length, required, bounds: LengthBounds, arities: np.ndarray) -> np.ndarray:
    """Boolean ``(B, |L|)`` array of tokens that keep the length bounds satisfiable.

    A token of arity ``a`` is allowed iff ``len + 1 + (required - 1 + a) <=
    max_length``: every open slot needs at least one more token. A terminal
    that would close the tree below ``min_length`` is disallowed.
    """
    length = np.atleast_1d(np.asarray(length))[:, None]
    required = np.atleast_1d(np.asarray(required))[:, None]
    ok = length + required + arities[None, :] <= bounds.max_length
    closes_early = (required == 1) & (length + 1 < bounds.min_length)
    ok &= ~(closes_early & (arities[None, :] == 0))
    return ok


def length_mask(partial: Sequence[int], bounds: LengthBounds, lib: Library) -> np.ndarray:
    """Additive mask (0 or -inf) for the token following ``partial``."""
    state = TreeState.from_prefix(partial, lib)
    ok = length_allowed(state.length, state.required, bounds, lib.arities)[0]
    return np.where(ok, 0.0, -np.inf)


@dataclass(frozen=True)
class PriorConfig:
    """Which priors and masks are active during sampling."""

    equal_type: bool = True
    soft_length: Optional[SoftLengthConfig] = None
    bounds: Optional[LengthBounds] = LengthBounds()
    constraints: tuple = ()

    def __post_init__(self):
        unknown = set(self.constraints) - set(CONSTRAINTS)
        if unknown:
            raise ValueError(f"unknown constraints: {sorted(unknown)}")

    def build(self, lib: Library) -> "Priors":
        return Priors(lib, self)


class Priors:
    """A :class:`PriorConfig` bound to a library, with per-position caching."""

    def __init__(self, lib: Library, config: PriorConfig = PriorConfig()):
        self.lib = lib
        self.config = config
        if config.bounds is not None and config.bounds.min_length > 1 and lib.n_binary + lib.n_unary == 0:
            raise InfeasibleMask("min_length > 1 needs at least one operator")
        # Without explicit bounds sampling still needs a hard cap to terminate.
        self.bounds = config.bounds or LengthBounds(1, 64)
        self.max_length = self.bounds.max_length
        base = equal_type_prior(lib) if config.equal_type else np.zeros(len(lib))
        self._table = [None]
        for i in range(1, self.max_length + 1):
            v = base.copy()
            if config.soft_length is not None:
                v += soft_length_prior(i, config.soft_length, lib)
            self._table.append(v)
        self._is_trig = lib.kind_mask(TRIG_KINDS)
        inv = np.full(len(lib) + 1, -1)
        for k, tok in enumerate(lib.tokens):
            if tok.kind in INVERSE_KINDS and INVERSE_KINDS[tok.kind] in lib.names:
                inv[k] = lib.index(INVERSE_KINDS[tok.kind])
        self._inverse = inv

    def additive(self, i: int) -> np.ndarray:
        """Summed additive prior at 1-based position ``i``."""
        return self._table[i]

    def allowed(self, state: TreeState) -> np.ndarray:
        """Boolean ``(B, |L|)`` mask of permitted next tokens."""
        n, L = state.length.shape[0], len(self.lib)
        ok = np.ones((n, L), dtype=bool)
        ok &= length_allowed(state.length, state.required, self.bounds, self.lib.arities)
        if "trig_nesting" in self.config.constraints:
            ok &= ~(state.under_trig[:, None] & self._is_trig[None, :])
        if "inverse_unary" in self.config.constraints:
            bad = self._inverse[state.parent]
            rows = np.nonzero(bad >= 0)[0]
            ok[rows, bad[rows]] = False
        live = ~state.done
        if np.any(~ok[live].any(axis=1)):
            raise InfeasibleMask("all tokens masked")
        return ok


def compose(i: int, partial: Sequence[int], lib: Library, config: PriorConfig = PriorConfig()):
    """Total additive prior and total mask (0 / -inf) for position ``i``."""
    priors = Priors(lib, config)
    state = TreeState.from_prefix(partial, lib)
    if i > priors.max_length:
        prior = np.zeros(len(lib))
        if config.equal_type:
            prior += equal_type_prior(lib)
        if config.soft_length is not None:
            prior += soft_length_prior(i, config.soft_length, lib)
    else:
        prior = priors.additive(i)
    mask = np.where(priors.allowed(state)[0], 0.0, -np.inf)
    return prior.copy(), mask
