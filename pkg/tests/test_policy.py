import numpy as np
import pytest

from pgsr.library import Library
from pgsr.policy import (
    EmptyBatch, PolicyParams, _pad, SampleBatch, compute_gradients, forward_step, load_checkpoint,
    log_prob, sample_batch, save_checkpoint, step_input, surrogate_objective,
)
from pgsr.priors import LengthBounds, PriorConfig, Priors

from oracles import check_gradient, toy_setup


class TestParams:
    def test_flat_roundtrip(self, lib):
        p = PolicyParams.initialize(len(lib), 6, rng=1)
        q = PolicyParams.from_flat(p.flat(), len(lib), 6)
        np.testing.assert_array_equal(p.flat(), q.flat())
        assert p.size == p.flat().size

    def test_shapes(self, lib):
        p = PolicyParams.initialize(len(lib), 7, rng=0)
        L = len(lib)
        assert p.W_x.shape == (2 * (L + 1), 28)
        assert p.W_h.shape == (7, 28)
        assert p.W_out.shape == (7, L)

    def test_zero_initial_emissions(self, lib):
        p = PolicyParams.initialize(len(lib), 8, rng=0)
        logits, _ = forward_step(p, step_input([], lib))
        np.testing.assert_array_equal(logits, 0.0)

    def test_initialize_deterministic(self, lib):
        a = PolicyParams.initialize(len(lib), 8, rng=np.random.default_rng(5))
        b = PolicyParams.initialize(len(lib), 8, rng=np.random.default_rng(5))
        np.testing.assert_array_equal(a.flat(), b.flat())

    def test_from_flat_size_check(self, lib):
        with pytest.raises(ValueError):
            PolicyParams.from_flat(np.zeros(3), len(lib), 4)

    def test_checkpoint_roundtrip(self, lib, tmp_path):
        p = PolicyParams.initialize(len(lib), 5, rng=3)
        save_checkpoint(tmp_path / "c.bin", p)
        q = load_checkpoint(tmp_path / "c.bin")
        np.testing.assert_array_equal(p.flat(), q.flat())
        assert q.hidden_size == 5 and q.n_tokens == len(lib)

    def test_checkpoint_bad_magic(self, tmp_path):
        (tmp_path / "c.bin").write_bytes(b"XXXX" + bytes(20))
        with pytest.raises(ValueError):
            load_checkpoint(tmp_path / "c.bin")


class TestStepInput:
    def test_empty_prefix(self, lib):
        x = step_input([], lib)
        L1 = len(lib) + 1
        assert x[L1 - 1] == 1 and x[2 * L1 - 1] == 1 and x.sum() == 2

    def test_right_child_sees_left_sibling(self, lib):
        L1 = len(lib) + 1
        x = step_input(lib.encode(["add", "x1"]), lib)
        assert x[lib.index("add")] == 1
        assert x[L1 + lib.index("x1")] == 1

    def test_unary_child(self, lib):
        L1 = len(lib) + 1
        x = step_input(lib.encode(["mul", "sin"]), lib)
        assert x[lib.index("sin")] == 1 and x[2 * L1 - 1] == 1


class TestSampling:
    def test_deterministic(self, lib):
        p = PolicyParams.initialize(len(lib), 8, rng=0)
        pri = Priors(lib, PriorConfig())
        a = sample_batch(p, pri, 200, np.random.default_rng(9))
        b = sample_batch(p, pri, 200, np.random.default_rng(9))
        np.testing.assert_array_equal(a.tokens, b.tokens)
        np.testing.assert_array_equal(a.logprobs, b.logprobs)

    def test_first_token_class_frequencies(self, lib):
        p = PolicyParams.initialize(len(lib), 8, rng=0)
        pri = Priors(lib, PriorConfig(bounds=LengthBounds(1, 30)))
        batch = sample_batch(p, pri, 10_000, np.random.default_rng(0))
        first = lib.arities[batch.tokens[:, 0]]
        for a in (0, 1, 2):
            assert abs(np.mean(first == a) - 1 / 3) < 0.02

    def test_logprob_consistency(self, lib):
        rng = np.random.default_rng(4)
        p = PolicyParams.initialize(len(lib), 8, rng=rng, init_scale=0.3)
        p.W_out[:] = rng.normal(0, 1, p.W_out.shape)
        pri = Priors(lib, PriorConfig(bounds=LengthBounds(4, 20)))
        batch = sample_batch(p, pri, 300, rng)
        logp, ent = log_prob(p, pri, [batch.sequence(j) for j in range(len(batch))])
        T = logp.shape[1]
        np.testing.assert_allclose(logp, batch.logprobs[:, :T], atol=1e-12, rtol=0)
        np.testing.assert_allclose(ent, batch.entropies[:, :T], atol=1e-12, rtol=0)

    def test_entropy_bounds(self, lib):
        p = PolicyParams.initialize(len(lib), 8, rng=0)
        batch = sample_batch(p, Priors(lib, PriorConfig()), 500, np.random.default_rng(1))
        assert np.all(batch.entropies >= -1e-12)
        assert np.all(batch.entropies <= np.log(len(lib)) + 1e-12)

    def test_masked_token_rejected(self, lib):
        p = PolicyParams.initialize(len(lib), 4, rng=0)
        pri = Priors(lib, PriorConfig(bounds=LengthBounds(4, 30)))
        with pytest.raises(ValueError):
            log_prob(p, pri, [lib.encode(["x1"])])

    def test_batch_size_validation(self, lib):
        p = PolicyParams.initialize(len(lib), 4, rng=0)
        with pytest.raises(ValueError):
            sample_batch(p, Priors(lib), 0, np.random.default_rng(0))

    def test_samples_roundtrip(self, lib):
        p = PolicyParams.initialize(len(lib), 4, rng=0)
        batch = sample_batch(p, Priors(lib), 20, np.random.default_rng(0))
        batch.rewards = np.linspace(0, 1, 20)
        again = SampleBatch.from_samples(batch.samples())
        np.testing.assert_array_equal(again.lengths, batch.lengths)
        for j in range(20):
            assert again.sequence(j) == batch.sequence(j)


class TestGradients:
    @pytest.mark.parametrize("mode", ["SE", "HE"])
    @pytest.mark.parametrize("eta", [0.0, 0.02])
    def test_matches_finite_differences(self, mode, eta):
        assert check_gradient(mode, eta) < 1e-4

    def test_zero_gradient_on_ties(self):
        lib, params, priors, batch = toy_setup()
        batch.rewards[:] = 0.4
        g = compute_gradients(params, priors, batch, 0.4)
        np.testing.assert_array_equal(g, 0.0)

    def test_entropy_gradient_zero_at_uniform(self):
        lib = Library.from_names(("add", "sin"), 3)
        params = PolicyParams.initialize(len(lib), 4, rng=0)
        priors = Priors(lib, PriorConfig(equal_type=False, bounds=None))
        seqs = [lib.encode(["x1"]), lib.encode(["add", "x2", "x3"])]
        batch = _pad(seqs)
        batch.rewards = np.zeros(2)
        g = compute_gradients(params, priors, batch, 0.0, entropy_weight=1.0)
        np.testing.assert_allclose(g, 0.0, atol=1e-15)

    def test_normalizer_scales(self):
        lib, params, priors, batch = toy_setup()
        g1 = compute_gradients(params, priors, batch, 0.5)
        g2 = compute_gradients(params, priors, batch, 0.5, normalizer=4 * len(batch))
        np.testing.assert_allclose(g2, g1 / 4, rtol=1e-12)

    def test_empty_batch(self):
        lib, params, priors, batch = toy_setup()
        with pytest.raises(EmptyBatch):
            compute_gradients(params, priors, batch.subset([]), 0.0)

    def test_nonfinite_reward(self):
        lib, params, priors, batch = toy_setup()
        batch.rewards[0] = np.nan
        with pytest.raises(ValueError):
            compute_gradients(params, priors, batch, 0.0)

    def test_ascent_raises_logprob_of_good_sample(self):
        lib, params, priors, batch = toy_setup(seed=2)
        best = int(np.argmax(batch.rewards))
        b = float(np.mean(batch.rewards))
        g = compute_gradients(params, priors, batch, b)
        before = log_prob(params, priors, [batch.sequence(best)])[0].sum()
        moved = PolicyParams.from_flat(params.flat() + 1e-3 * g, len(lib), 4)
        after = log_prob(moved, priors, [batch.sequence(best)])[0].sum()
        assert surrogate_objective(moved, priors, batch, b) > surrogate_objective(params, priors, batch, b)
        assert np.isfinite(after) and np.isfinite(before)
