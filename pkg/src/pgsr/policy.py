"""Autoregressive LSTM policy over prefix token sequences.

The network is written directly in numpy with hand-derived backpropagation
through time. At each step the cell reads the parent and left sibling of the
node about to be sampled (one-hot each, with an extra "empty" slot) and emits
one logit per library token. Priors and masks are added after the output
projection and are treated as constants by the gradient.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .library import Library
from .priors import InfeasibleMask, Priors
from .tree import TreeState

_FIELDS = ("W_x", "W_h", "b", "W_out", "b_out")


class EmptyBatch(ValueError):
    pass


@dataclass
class PolicyParams:
    """LSTM weights plus the output projection. Gate order is i, f, g, o."""

    W_x: np.ndarray  # (2 * (L + 1), 4H)
    W_h: np.ndarray  # (H, 4H)
    b: np.ndarray  # (4H,)
    W_out: np.ndarray  # (H, L)
    b_out: np.ndarray  # (L,)

    @property
    def hidden_size(self) -> int:
        return self.W_h.shape[0]

    @property
    def n_tokens(self) -> int:
        return self.W_out.shape[1]

    @property
    def size(self) -> int:
        return sum(getattr(self, f).size for f in _FIELDS)

    @classmethod
    def initialize(cls, n_tokens: int, hidden_size: int = 32, rng=None, init_scale: float = 0.05):
        """Small uniform recurrent weights, zero biases, zero output projection.

        The zero output projection makes every pre-prior logit exactly 0.
        """
        rng = np.random.default_rng(rng)
        H, D = hidden_size, 2 * (n_tokens + 1)
        return cls(
            W_x=rng.uniform(-init_scale, init_scale, (D, 4 * H)),
            W_h=rng.uniform(-init_scale, init_scale, (H, 4 * H)),
            b=np.zeros(4 * H),
            W_out=np.zeros((H, n_tokens)),
            b_out=np.zeros(n_tokens),
        )

    def flat(self) -> np.ndarray:
        return np.concatenate([getattr(self, f).ravel() for f in _FIELDS])

    @classmethod
    def from_flat(cls, vec: np.ndarray, n_tokens: int, hidden_size: int) -> "PolicyParams":
        H, L = hidden_size, n_tokens
        shapes = [(2 * (L + 1), 4 * H), (H, 4 * H), (4 * H,), (H, L), (L,)]
        vec = np.asarray(vec, dtype=np.float64)
        expected = sum(int(np.prod(s)) for s in shapes)
        if vec.size != expected:
            raise ValueError(f"expected {expected} parameters, got {vec.size}")
        out, k = [], 0
        for s in shapes:
            n = int(np.prod(s))
            out.append(vec[k:k + n].reshape(s).copy())
            k += n
        return cls(*out)

    def copy(self) -> "PolicyParams":
        return PolicyParams(*(getattr(self, f).copy() for f in _FIELDS))


def step_input(partial: Sequence[int], lib: Library) -> np.ndarray:
    """One-hot parent ‖ one-hot sibling for the node after ``partial``."""
    state = TreeState.from_prefix(partial, lib)
    L1 = len(lib) + 1
    x = np.zeros(2 * L1)
    x[state.parent[0]] = 1.0
    x[L1 + state.sibling[0]] = 1.0
    return x


def _cell(params: PolicyParams, xw, h, c):
    H = params.hidden_size
    z = xw + h @ params.W_h + params.b
    # One tanh for all four gates: sigmoid(x) = (1 + tanh(x / 2)) / 2.
    z[:, :2 * H] *= 0.5
    z[:, 3 * H:] *= 0.5
    a = np.tanh(z)
    g = a[:, 2 * H:3 * H]
    a[:, :2 * H] += 1.0
    a[:, :2 * H] *= 0.5
    a[:, 3 * H:] += 1.0
    a[:, 3 * H:] *= 0.5
    i, f, o = a[:, :H], a[:, H:2 * H], a[:, 3 * H:]
    c_new = f * c + i * g
    tc = np.tanh(c_new)
    h_new = o * tc
    return h_new, c_new, (i, f, g, o, tc)


def forward_step(params: PolicyParams, x: np.ndarray, state=None):
    """One recurrent step on dense inputs ``x`` of shape ``(B, 2(L+1))``.

    Returns raw logits (before priors) and the new ``(h, c)`` state.
    """
    x = np.atleast_2d(x)
    if state is None:
        H = params.hidden_size
        state = (np.zeros((x.shape[0], H)), np.zeros((x.shape[0], H)))
    h, c = state
    h, c, _ = _cell(params, x @ params.W_x, h, c)
    return h @ params.W_out + params.b_out, (h, c)


def _masked_softmax(z, allowed):
    z = np.where(allowed, z, -np.inf)
    zmax = z.max(axis=1, keepdims=True)
    e = np.exp(z - zmax)
    s = e.sum(axis=1, keepdims=True)
    p = e / s
    logp = z - zmax - np.log(s)
    plogp = np.where(allowed, p * np.where(allowed, logp, 0.0), 0.0)
    return p, logp, -plogp.sum(axis=1)


@dataclass
class ScoredSample:
    sequence: list
    reward: float
    step_logprobs: np.ndarray
    step_entropies: np.ndarray


@dataclass
class SampleBatch:
    """A batch of sampled sequences padded with ``-1``."""

    tokens: np.ndarray  # (M, T)
    lengths: np.ndarray  # (M,)
    logprobs: np.ndarray  # (M, T), 0 past the end
    entropies: np.ndarray  # (M, T), 0 past the end
    rewards: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.rewards is None:
            self.rewards = np.full(len(self.lengths), np.nan)

    def __len__(self):
        return len(self.lengths)

    def sequence(self, j: int) -> list:
        return self.tokens[j, :self.lengths[j]].tolist()

    def subset(self, idx) -> "SampleBatch":
        idx = np.asarray(idx, dtype=np.int64)
        T = int(self.lengths[idx].max()) if len(idx) else 0
        return SampleBatch(
            self.tokens[idx, :T], self.lengths[idx], self.logprobs[idx, :T],
            self.entropies[idx, :T], self.rewards[idx].copy(),
        )

    def samples(self) -> list:
        return [
            ScoredSample(self.sequence(j), float(self.rewards[j]),
                         self.logprobs[j, :self.lengths[j]].copy(),
                         self.entropies[j, :self.lengths[j]].copy())
            for j in range(len(self))
        ]

    @classmethod
    def from_samples(cls, samples: Sequence[ScoredSample]) -> "SampleBatch":
        M = len(samples)
        T = max(len(s.sequence) for s in samples)
        tokens = np.full((M, T), -1, dtype=np.int64)
        logp, ent = np.zeros((M, T)), np.zeros((M, T))
        for j, s in enumerate(samples):
            n = len(s.sequence)
            tokens[j, :n] = s.sequence
            logp[j, :n] = s.step_logprobs
            ent[j, :n] = s.step_entropies
        lengths = np.array([len(s.sequence) for s in samples])
        return cls(tokens, lengths, logp, ent, np.array([s.reward for s in samples], dtype=float))


def sample_batch(params: PolicyParams, priors: Priors, n: int, rng) -> SampleBatch:
    """Autoregressively sample ``n`` complete sequences.

    Randomness comes only from ``rng`` (one uniform per row per position), so
    a fixed seed reproduces the batch exactly.
    """
    if n < 1:
        raise ValueError("batch size must be >= 1")
    lib = priors.lib
    L, T = len(lib), priors.max_length
    H = params.hidden_size
    state = TreeState(lib, n, capacity=T + 1)
    h, c = np.zeros((n, H)), np.zeros((n, H))
    tokens = np.full((n, T), -1, dtype=np.int64)
    logprobs, entropies = np.zeros((n, T)), np.zeros((n, T))
    Wp, Ws = params.W_x[:L + 1], params.W_x[L + 1:]
    for t in range(T):
        live = np.flatnonzero(~state.done)
        if live.size == 0:
            break
        par, sib = state.parent[live], state.sibling[live]
        hl, cl, _ = _cell(params, Wp[par] + Ws[sib], h[live], c[live])
        h[live], c[live] = hl, cl
        z = hl @ params.W_out + params.b_out + priors.additive(t + 1)
        allowed = priors.allowed(state)[live]
        p, logp, ent = _masked_softmax(z, allowed)
        cdf = np.cumsum(p, axis=1)
        # Draw for every row so the stream does not depend on which rows are live.
        u = rng.random(n)[live] * cdf[:, -1]
        choice = np.minimum(np.sum(cdf <= u[:, None], axis=1), L - 1)
        k = np.arange(live.size)
        if not allowed[k, choice].all():
            raise InfeasibleMask("sampled a masked token")
        tokens[live, t] = choice
        logprobs[live, t] = logp[k, choice]
        entropies[live, t] = ent
        full = np.zeros(n, dtype=np.int64)
        full[live] = choice
        state.append(full)
    if not state.done.all():
        raise InfeasibleMask("sequence exceeded the maximum length")
    Tmax = int(state.length.max())
    return SampleBatch(tokens[:, :Tmax], state.length.copy(),
                       logprobs[:, :Tmax], entropies[:, :Tmax])


def _teacher_forward(params: PolicyParams, priors: Priors, tokens: np.ndarray, lengths: np.ndarray):
    """Replay fixed sequences through the policy, caching what BPTT needs."""
    lib = priors.lib
    L = len(lib)
    B, T = tokens.shape
    H = params.hidden_size
    state = TreeState(lib, B, capacity=T + 1)
    h, c = np.zeros((B, H)), np.zeros((B, H))
    Wp, Ws = params.W_x[:L + 1], params.W_x[L + 1:]
    cache = []
    rows = np.arange(B)
    for t in range(T):
        active = t < lengths
        par, sib = state.parent, state.sibling
        h_prev, c_prev = h, c
        h, c, gates = _cell(params, Wp[par] + Ws[sib], h, c)
        z = h @ params.W_out + params.b_out + priors.additive(t + 1)
        allowed = priors.allowed(state)
        allowed[~active] = True
        p, logp, ent = _masked_softmax(z, allowed)
        a = np.where(active, tokens[:, t], 0)
        chosen = logp[rows, a]
        if np.any(~allowed[rows, a] & active):
            raise ValueError("sequence contains a token that is masked under these priors")
        cache.append((par, sib, h_prev, c_prev, gates, c, h, p, logp, ent, allowed, active, a, chosen))
        state.append(np.where(active, tokens[:, t], 0))
    return cache


def log_prob(params: PolicyParams, priors: Priors, sequences: Sequence[Sequence[int]]):
    """Per-step log-probabilities and entropies of fixed sequences."""
    batch = _pad(sequences)
    cache = _teacher_forward(params, priors, batch.tokens, batch.lengths)
    logp = np.stack([np.where(e[11], e[13], 0.0) for e in cache], axis=1)
    ent = np.stack([np.where(e[11], e[9], 0.0) for e in cache], axis=1)
    return logp, ent


def _pad(sequences) -> SampleBatch:
    lengths = np.array([len(s) for s in sequences])
    tokens = np.full((len(sequences), lengths.max()), -1, dtype=np.int64)
    for j, s in enumerate(sequences):
        tokens[j, :len(s)] = s
    z = np.zeros(tokens.shape)
    return SampleBatch(tokens, lengths, z, z.copy())


def _entropy_weights(T: int, decay: float, mode: str) -> np.ndarray:
    if mode == "SE":
        return np.ones(T)
    if mode == "HE":
        return decay ** np.arange(T)
    raise ValueError(f"unknown entropy mode {mode!r}")


def _as_batch(batch) -> SampleBatch:
    if isinstance(batch, SampleBatch):
        return batch
    return SampleBatch.from_samples(list(batch))


def surrogate_objective(params, priors, batch, baseline, entropy_weight=0.0,
                        entropy_decay=1.0, mode="SE", normalizer=None) -> float:
    """Value of the policy-gradient surrogate on frozen sequences.

    ``J = (1/N) sum_j [ (R_j - b) sum_i log pi_ij + eta * sum_i w_i H_ij ]``
    with ``w_i = 1`` (standard) or ``decay**(i-1)`` (hierarchical).
    """
    batch = _as_batch(batch)
    if len(batch) == 0:
        raise EmptyBatch("no samples")
    N = len(batch) if normalizer is None else normalizer
    cache = _teacher_forward(params, priors, batch.tokens, batch.lengths)
    w = _entropy_weights(len(cache), entropy_decay, mode)
    adv = batch.rewards - baseline
    total = 0.0
    for t, e in enumerate(cache):
        active = e[11]
        total += np.sum(np.where(active, adv * e[13] + entropy_weight * w[t] * e[9], 0.0))
    return float(total / N)


def compute_gradients(params: PolicyParams, priors: Priors, batch, baseline: float,
                      entropy_weight: float = 0.0, entropy_decay: float = 1.0,
                      mode: str = "SE", normalizer: Optional[float] = None) -> np.ndarray:
    """Exact gradient of :func:`surrogate_objective` by BPTT, as a flat vector.

    ``normalizer`` defaults to the number of samples in ``batch``.
    """
    batch = _as_batch(batch)
    if len(batch) == 0:
        raise EmptyBatch("no samples")
    if not np.isfinite(baseline) or not np.all(np.isfinite(batch.rewards)):
        raise ValueError("rewards and baseline must be finite")
    N = len(batch) if normalizer is None else normalizer
    L, H = params.n_tokens, params.hidden_size
    B = len(batch)
    cache = _teacher_forward(params, priors, batch.tokens, batch.lengths)
    w = _entropy_weights(len(cache), entropy_decay, mode)
    adv = (batch.rewards - baseline)[:, None]
    rows = np.arange(B)

    g = {f: np.zeros_like(getattr(params, f)) for f in _FIELDS}
    dh_next, dc_next = np.zeros((B, H)), np.zeros((B, H))
    for t in reversed(range(len(cache))):
        par, sib, h_prev, c_prev, (i, f, gg, o, tc), c, h, p, logp, ent, allowed, active, a, _ = cache[t]
        # d log p_a / dz = onehot(a) - p ;  dH / dz = -p (log p + H)
        dz = -adv * p
        dz[rows, a] += adv[:, 0]
        if entropy_weight:
            safe_logp = np.where(allowed, logp, 0.0)
            dz += entropy_weight * w[t] * (-p * (safe_logp + ent[:, None]))
        dz *= active[:, None] / N
        g["W_out"] += h.T @ dz
        g["b_out"] += dz.sum(axis=0)
        dh = dz @ params.W_out.T + dh_next
        dc = dh * o * (1.0 - tc ** 2) + dc_next
        dgates = np.concatenate([
            dc * gg * i * (1.0 - i),
            dc * c_prev * f * (1.0 - f),
            dc * i * (1.0 - gg ** 2),
            dh * tc * o * (1.0 - o),
        ], axis=1)
        g["W_h"] += h_prev.T @ dgates
        g["b"] += dgates.sum(axis=0)
        np.add.at(g["W_x"], par, dgates)
        np.add.at(g["W_x"], L + 1 + sib, dgates)
        dh_next = dgates @ params.W_h.T
        dc_next = dc * f
    return np.concatenate([g[f].ravel() for f in _FIELDS])


_MAGIC = b"PGSR"
_VERSION = 1
_HEADER = struct.Struct("<4sIIIQ")


def save_checkpoint(path, params: PolicyParams) -> None:
    """Little-endian header (magic, version, hidden, |L|, P) then P float64."""
    flat = params.flat()
    header = _HEADER.pack(_MAGIC, _VERSION, params.hidden_size, params.n_tokens, flat.size)
    Path(path).write_bytes(header + flat.astype("<f8").tobytes())


def load_checkpoint(path) -> PolicyParams:
    data = Path(path).read_bytes()
    magic, version, H, L, P = _HEADER.unpack_from(data)
    if magic != _MAGIC or version != _VERSION:
        raise ValueError(f"{path}: not a policy checkpoint (version {version})")
    flat = np.frombuffer(data, dtype="<f8", count=P, offset=_HEADER.size)
    return PolicyParams.from_flat(flat.astype(np.float64), L, H)
