import numpy as np
import pytest

from pgsr.library import Library
from pgsr.policy import PolicyParams, sample_batch
from pgsr.priors import (
    InfeasibleMask, LengthBounds, PriorConfig, Priors, SoftLengthConfig, compose,
    equal_type_prior, length_mask, soft_length_prior,
)
from pgsr.tree import TreeState


def softmax(z):
    e = np.exp(z - np.max(z))
    return e / e.sum()


def class_masses(lib, p):
    return [p[lib.arities == a].sum() for a in (2, 1, 0)]


def reachable_lengths(length, required, arities, cap):
    """All total lengths at which a prefix with this state can be completed."""
    out, frontier, seen = set(), {(length, required)}, set()
    while frontier:
        n, r = frontier.pop()
        if (n, r) in seen or n > cap:
            continue
        seen.add((n, r))
        if r == 0:
            out.add(n)
            continue
        for a in set(arities):
            frontier.add((n + 1, r - 1 + a))
    return out


def brute_force_allowed(partial, lib, bounds):
    n = len(partial)
    r = 1 + sum(lib.arities[t] - 1 for t in partial)
    ok = []
    for tok in range(len(lib)):
        a = lib.arities[tok]
        ends = reachable_lengths(n + 1, r - 1 + a, list(lib.arities), bounds.max_length)
        ok.append(any(bounds.min_length <= e <= bounds.max_length for e in ends))
    return np.array(ok)


class TestEqualType:
    def test_4_4_2(self):
        lib = Library.from_names(("add", "sub", "mul", "div", "sin", "cos", "exp", "log"), 2)
        p = softmax(equal_type_prior(lib))
        np.testing.assert_allclose(p[:4], 1 / 12, rtol=1e-12)
        np.testing.assert_allclose(p[4:8], 1 / 12, rtol=1e-12)
        np.testing.assert_allclose(p[8:], 1 / 6, rtol=1e-12)
        np.testing.assert_allclose(class_masses(lib, p), [1 / 3] * 3, atol=1e-12)

    def test_one_each(self):
        lib = Library.from_names(("add", "sin"), 1)
        np.testing.assert_array_equal(equal_type_prior(lib), 0.0)

    def test_empty_unary_class(self):
        lib = Library.from_names(("add", "mul"), 2)
        p = softmax(equal_type_prior(lib))
        np.testing.assert_allclose(p, 0.25, rtol=1e-12)

    @pytest.mark.parametrize("c", [-7.5, 0.3, 123.0])
    def test_shift_invariance(self, c):
        lib = Library.from_names(("add", "sub", "mul", "sin"), 3)
        psi = equal_type_prior(lib)
        np.testing.assert_allclose(softmax(psi + c), softmax(psi), rtol=1e-12)


class TestSoftLength:
    def test_zero_at_loc(self, lib):
        cfg = SoftLengthConfig(10, 5.0)
        np.testing.assert_array_equal(soft_length_prior(10, cfg, lib), 0.0)

    def test_before_loc(self, lib):
        v = soft_length_prior(5, SoftLengthConfig(10, 5.0), lib)
        assert list(v[lib.arities == 0]) == [-2.5]
        assert np.all(v[lib.arities > 0] == 0)

    def test_after_loc(self, lib):
        v = soft_length_prior(15, SoftLengthConfig(10, 5.0), lib)
        assert np.all(v[lib.arities == 2] == -2.5)
        assert np.all(v[lib.arities < 2] == 0)

    def test_monotone_in_distance(self, lib):
        cfg = SoftLengthConfig(10, 20.0)
        term = [soft_length_prior(i, cfg, lib)[-1] for i in range(1, 10)]
        binary = [soft_length_prior(i, cfg, lib)[0] for i in range(11, 31)]
        assert np.all(np.diff(term) > 0)
        assert np.all(np.diff(binary) < 0)

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            SoftLengthConfig(0, 5.0)
        with pytest.raises(ValueError):
            SoftLengthConfig(10, 0.0)


class TestLengthMask:
    def test_empty_prefix_unmasked(self, lib):
        assert np.all(length_mask([], LengthBounds(1, 30), lib) == 0)

    def test_max_length_masks_binary(self, lib):
        partial = lib.encode(["add", "add", "x1"])
        m = length_mask(partial, LengthBounds(1, 5), lib)
        ok = brute_force_allowed(partial, lib, LengthBounds(1, 5))
        assert np.all(np.isinf(m[lib.arities == 2]))
        np.testing.assert_array_equal(m == 0, ok)

    def test_min_length_masks_terminal(self, lib):
        partial = lib.encode(["add", "x1"])
        m = length_mask(partial, LengthBounds(4, 30), lib)
        ok = brute_force_allowed(partial, lib, LengthBounds(4, 30))
        assert np.isinf(m[-1])
        np.testing.assert_array_equal(m == 0, ok)

    @pytest.mark.parametrize("bounds", [LengthBounds(1, 7), LengthBounds(4, 12), LengthBounds(6, 9)])
    def test_matches_brute_force(self, lib, bounds):
        rng = np.random.default_rng(3)
        pri = Priors(lib, PriorConfig(equal_type=False, bounds=bounds))
        for _ in range(60):
            partial = []
            state = TreeState(lib, 1)
            while not state.done[0]:
                ok = pri.allowed(state)[0]
                np.testing.assert_array_equal(ok, brute_force_allowed(partial, lib, bounds))
                t = int(rng.choice(np.flatnonzero(ok)))
                partial.append(t)
                state.append(np.array([t]))
            assert bounds.min_length <= len(partial) <= bounds.max_length

    def test_bounds_validation(self):
        with pytest.raises(ValueError):
            LengthBounds(5, 4)


class TestCompose:
    def test_no_priors(self, lib):
        prior, mask = compose(1, [], lib, PriorConfig(equal_type=False, bounds=None))
        assert np.all(prior == 0) and np.all(mask == 0)

    def test_slp_zero_at_loc(self, lib):
        cfg = PriorConfig(equal_type=True, soft_length=SoftLengthConfig(10, 5.0))
        prior, _ = compose(10, [], lib, cfg)
        np.testing.assert_array_equal(prior, equal_type_prior(lib))

    def test_slp_lowers_first_terminal_probability(self, lib):
        # zero policy emissions: the effective distribution is softmax(prior)
        p_plain = softmax(compose(1, [], lib, PriorConfig(equal_type=False, bounds=None))[0])
        p_slp = softmax(compose(1, [], lib, PriorConfig(equal_type=False, bounds=None,
                                                      soft_length=SoftLengthConfig(10, 20.0)))[0])
        assert p_slp[-1] < p_plain[-1]

    def test_unknown_constraint(self):
        with pytest.raises(ValueError):
            PriorConfig(constraints=("nope",))

    def test_constraints(self, lib):
        cfg = PriorConfig(equal_type=False, bounds=None, constraints=("trig_nesting", "inverse_unary"))
        _, m = compose(3, lib.encode(["sin", "add"]), lib, cfg)
        assert np.isinf(m[lib.index("sin")]) and np.isinf(m[lib.index("cos")])
        _, m = compose(2, lib.encode(["exp"]), lib, cfg)
        assert np.isinf(m[lib.index("log")]) and m[lib.index("exp")] == 0

    def test_infeasible(self):
        lib = Library.from_names((), 1)
        with pytest.raises(InfeasibleMask):
            Priors(lib, PriorConfig(bounds=LengthBounds(4, 30)))


def test_length_feasibility_sampling(lib):
    params = PolicyParams.initialize(len(lib), 8, rng=0)
    params.W_out[:] = np.random.default_rng(1).normal(0, 2.0, params.W_out.shape)
    pri = Priors(lib, PriorConfig(bounds=LengthBounds(4, 30)))
    batch = sample_batch(params, pri, 2000, np.random.default_rng(2))
    assert batch.lengths.min() >= 4 and batch.lengths.max() <= 30


def test_slp_shortens_initial_lengths(lib):
    """The soft length prior moves mass away from the maximum length."""
    params = PolicyParams.initialize(len(lib), 8, rng=0)
    base = Priors(lib, PriorConfig(bounds=LengthBounds(4, 30)))
    slp = Priors(lib, PriorConfig(bounds=LengthBounds(4, 30), soft_length=SoftLengthConfig(10, 20.0)))
    a = sample_batch(params, base, 4000, np.random.default_rng(0)).lengths
    b = sample_batch(params, slp, 4000, np.random.default_rng(0)).lengths
    assert (b == 30).mean() < 0.5 * (a == 30).mean()
    assert (a == 30).mean() == max(np.bincount(a) / a.size)
