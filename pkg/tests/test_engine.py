import numpy as np
import pytest
from numpy.testing import assert_allclose

from vbmem import checks
from vbmem.distributions import FullGaussian, MatrixNormalDist, OneHotCategorical
from vbmem.elbo import elbo_closed_form
from vbmem.engine import (
    InferenceConfig,
    InferenceResult,
    kmeanspp_init,
    update_bias,
    update_categorical_address,
    update_gaussian_address,
    update_memory,
    update_mixture_assignment,
    write_episode,
)
from vbmem.episodes import CodePosterior
from vbmem.errors import InvalidArgument
from vbmem.models import AddressBlock, AddressPosterior, MemoryState, ModelSpec, Variant

obs = CodePosterior.observed_code


class TestGaussianAddress:
    def test_scalar_case(self):
        q = update_gaussian_address(obs([3.0]), MatrixNormalDist([[1.0]], [[1.0]]), 1.0)
        assert_allclose(q.mean, [1.0], rtol=0, atol=1e-12)
        assert_allclose(q.cov, [[1 / 3]], rtol=0, atol=1e-12)

    def test_zero_memory_mean(self):
        q = update_gaussian_address(obs([1.0, 2.0]), MatrixNormalDist(np.zeros((3, 2)), np.eye(3)), 0.5)
        assert_allclose(q.mean, np.zeros(3))

    def test_covariance_independent_of_code(self):
        mem = MatrixNormalDist(np.random.default_rng(0).standard_normal((2, 3)), np.eye(2))
        a = update_gaussian_address(obs([1.0, 2.0, 3.0]), mem, 1.0)
        b = update_gaussian_address(obs([-5.0, 0.0, 9.0]), mem, 1.0)
        assert_allclose(a.cov, b.cov)

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidArgument):
            update_gaussian_address(obs([1.0]), MatrixNormalDist(np.zeros((2, 3)), np.eye(2)), 1.0)

    def test_stationary_for_fixed_memory(self):
        rng = np.random.default_rng(1)
        spec = ModelSpec(Variant.GAUSSIAN, 2, 3, R0=rng.standard_normal((2, 3)), sigma_z2=0.7)
        code = CodePosterior(rng.standard_normal(3), rng.uniform(0.2, 1, 3))
        mem = MatrixNormalDist(rng.standard_normal((2, 3)), checks.random_spd(2, rng))
        q = update_gaussian_address(code, mem, spec.sigma_z2)
        result = InferenceResult(MemoryState(spec.variant, [[mem]]),
                                 [AddressPosterior([AddressBlock(OneHotCategorical([1.0]), [q])])])
        grad = checks.elbo_gradient(spec, [code], result)
        # only the address coordinates: 2 means then 3 Cholesky entries
        assert np.max(np.abs(grad[:5])) < 1e-5


class TestCategoricalAddress:
    def test_scalar_case(self):
        theta = update_categorical_address(obs([np.log(3) / 2]), MatrixNormalDist([[1.0], [-1.0]], np.eye(2)), 1.0)
        assert_allclose(theta.probs, [0.75, 0.25], rtol=0, atol=1e-12)

    def test_symmetric_memory_gives_uniform(self):
        R = np.tile([[1.0, -2.0, 0.5]], (4, 1))
        theta = update_categorical_address(obs([0.3, 0.1, 2.0]), MatrixNormalDist(R, 2 * np.eye(4)), 1.0)
        assert_allclose(theta.probs, np.full(4, 0.25))

    def test_maximizes_elbo(self):
        rng = np.random.default_rng(2)
        spec = ModelSpec(Variant.CATEGORICAL, 3, 2, sigma_z2=0.8)
        mem = MatrixNormalDist(rng.standard_normal((3, 2)), checks.random_spd(3, rng))
        code = obs(rng.standard_normal(2))
        theta = update_categorical_address(code, mem, spec.sigma_z2)

        def elbo(p):
            result = InferenceResult(MemoryState(spec.variant, [[mem]]),
                                     [AddressPosterior([AddressBlock(OneHotCategorical([1.0]),
                                                                     [OneHotCategorical(p)])])])
            return elbo_closed_form(spec, [code], result).total

        best = elbo(theta.probs)
        for _ in range(100):
            p = theta.probs * np.exp(0.3 * rng.standard_normal(3))
            assert elbo(p / p.sum()) <= best + 1e-12


class TestMemoryUpdate:
    def test_scalar_case(self):
        q = update_memory([obs([2.0])], [FullGaussian([1.0], [[1.0]])], MatrixNormalDist([[0.0]], [[1.0]]), 1.0)
        assert_allclose(q.U, [[1 / 3]], rtol=0, atol=1e-12)
        assert_allclose(q.R, [[2 / 3]], rtol=0, atol=1e-12)

    def test_empty_episode_gives_prior(self):
        prior = MatrixNormalDist(np.ones((2, 3)), 2 * np.eye(2))
        q = update_memory([], [], prior, 1.0)
        assert_allclose(q.R, prior.R)
        assert_allclose(q.U, prior.U)

    def test_duplicated_halved_responsibilities(self):
        rng = np.random.default_rng(3)
        codes = [obs(rng.standard_normal(3)) for _ in range(4)]
        ws = [FullGaussian(rng.standard_normal(2), checks.random_spd(2, rng)) for _ in range(4)]
        prior = MatrixNormalDist(rng.standard_normal((2, 3)), checks.random_spd(2, rng))
        resp = rng.uniform(0.2, 1.0, 4)
        a = update_memory(codes, ws, prior, 0.6, resp)
        b = update_memory(codes * 2, ws * 2, prior, 0.6, np.concatenate([resp, resp]) / 2)
        assert_allclose(a.R, b.R, atol=1e-12)
        assert_allclose(a.U, b.U, atol=1e-12)

    def test_posterior_row_covariance_is_pd(self):
        rng = np.random.default_rng(4)
        q = update_memory([obs(rng.standard_normal(2)) for _ in range(3)],
                          [OneHotCategorical([0.2, 0.8])] * 3, MatrixNormalDist(np.zeros((2, 2)), np.eye(2)), 1.0)
        np.linalg.cholesky(q.U)

    def test_length_mismatch(self):
        with pytest.raises(InvalidArgument):
            update_memory([obs([1.0])], [], MatrixNormalDist([[0.0]], [[1.0]]), 1.0)


class TestBiasUpdate:
    def test_scalar_case(self):
        # R^T mu_w = 1 through R = 1, mu_w = 1
        q = update_bias([obs([2.0])], [FullGaussian([1.0], [[1.0]])], MatrixNormalDist([[1.0]], [[1.0]]),
                        FullGaussian([0.0], [[1.0]]), 1.0)
        assert_allclose(q.mean, [0.5], atol=1e-12)
        assert_allclose(q.cov, [[0.5]], atol=1e-12)

    def test_empty_gives_prior(self):
        prior = FullGaussian([1.0, 2.0], 3 * np.eye(2))
        q = update_bias([], [], MatrixNormalDist(np.zeros((1, 2)), np.eye(1)), prior, 1.0)
        assert_allclose(q.mean, prior.mean)
        assert_allclose(q.cov, prior.cov)

    def test_vague_likelihood_keeps_prior(self):
        prior = FullGaussian([1.0, -1.0], np.eye(2))
        q = update_bias([obs([5.0, 5.0])], [FullGaussian([1.0], [[1.0]])],
                        MatrixNormalDist(np.ones((1, 2)), np.eye(1)), prior, 1e12)
        assert_allclose(q.mean, prior.mean, atol=1e-6)
        assert_allclose(q.cov, prior.cov, atol=1e-6)


class TestMixtureAssignment:
    def _cluster(self, rng, K=2, C=3):
        mem = MatrixNormalDist(rng.standard_normal((K, C)), checks.random_spd(K, rng))
        b = FullGaussian(rng.standard_normal(C), checks.random_spd(C, rng))
        return mem, b

    def test_single_cluster(self):
        rng = np.random.default_rng(5)
        mem, b = self._cluster(rng)
        code = obs(rng.standard_normal(3))
        w = update_gaussian_address(code, mem, 1.0, b)
        assert_allclose(update_mixture_assignment(code, [(mem, b, w)], 1.0).probs, [1.0])

    def test_copies_split_evenly(self):
        rng = np.random.default_rng(6)
        mem, b = self._cluster(rng)
        code = obs(rng.standard_normal(3))
        w = update_gaussian_address(code, mem, 1.0, b)
        assert_allclose(update_mixture_assignment(code, [(mem, b, w)] * 2, 1.0).probs, [0.5, 0.5])

    def test_maximizes_elbo(self):
        rng = np.random.default_rng(7)
        spec = ModelSpec(Variant.MIXTURE, 2, 3, H=3, sigma_z2=0.9)
        code = CodePosterior(rng.standard_normal(3), rng.uniform(0.1, 1, 3))
        clusters = []
        for _ in range(3):
            mem, b = self._cluster(rng)
            clusters.append((mem, b, update_gaussian_address(code, mem, spec.sigma_z2, b)))
        theta = update_mixture_assignment(code, clusters, spec.sigma_z2)
        state = MemoryState(spec.variant, [[c[0] for c in clusters]], [[c[1] for c in clusters]])

        def elbo(p):
            addr = AddressPosterior([AddressBlock(OneHotCategorical(p), [c[2] for c in clusters])])
            return elbo_closed_form(spec, [code], InferenceResult(state, [addr])).total

        best = elbo(theta.probs)
        for _ in range(100):
            p = theta.probs * np.exp(0.5 * rng.standard_normal(3))
            assert elbo(p / p.sum()) <= best + 1e-12


class TestKmeansPP:
    def test_single_center_is_a_code(self):
        X = np.arange(10.0)[:, None]
        c = kmeanspp_init(X, 1, np.random.default_rng(0))
        assert c.shape == (1, 1) and c[0, 0] in X

    def test_two_points(self):
        X = np.array([[0.0], [10.0]])
        for seed in range(10):
            c = kmeanspp_init(X, 2, np.random.default_rng(seed))
            assert sorted(c[:, 0]) == [0.0, 10.0]

    def test_seeded(self):
        X = np.random.default_rng(1).standard_normal((20, 3))
        a = kmeanspp_init(X, 4, np.random.default_rng(5))
        b = kmeanspp_init(X, 4, np.random.default_rng(5))
        assert_allclose(a, b)

    def test_identical_codes_fall_back(self):
        c = kmeanspp_init(np.ones((5, 2)), 3, np.random.default_rng(0))
        assert_allclose(c, np.ones((3, 2)))

    def test_too_many_clusters(self):
        with pytest.raises(InvalidArgument):
            kmeanspp_init(np.zeros((2, 1)), 3, np.random.default_rng(0))


class TestWriteEpisode:
    def test_one_sweep_is_composition(self):
        rng = np.random.default_rng(8)
        spec = ModelSpec(Variant.GAUSSIAN, 2, 3, R0=rng.standard_normal((2, 3)), sigma_z2=0.5)
        codes = [obs(rng.standard_normal(3)) for _ in range(5)]
        res = write_episode(spec, codes, InferenceConfig(sweeps=1))
        prior = MatrixNormalDist(spec.R0, spec.U0)
        ws = [update_gaussian_address(c, prior, spec.sigma_z2) for c in codes]
        mem = update_memory(codes, ws, prior, spec.sigma_z2)
        assert_allclose(res.memory.memory[0][0].R, mem.R, atol=1e-12)
        assert_allclose(res.memory.memory[0][0].U, mem.U, atol=1e-12)
        for a, w in zip(res.addresses, ws):
            assert_allclose(a.w.mean, w.mean, atol=1e-12)

    @pytest.mark.parametrize("variant", list(Variant))
    def test_trace_is_monotone(self, variant):
        rng = np.random.default_rng(9)
        for i in range(5):
            spec = checks.random_spec(variant, rng)
            codes = checks.random_codes(spec.C, int(rng.integers(spec.H, 20)), rng, observed=bool(i % 2))
            res = write_episode(spec, codes, InferenceConfig(sweeps=8, init_mode="data", rng_seed=i))
            assert len(res.elbo_trace) == 9
            assert checks.monotone_violation(res.elbo_trace) <= 1e-8

    def test_trace_matches_closed_form(self):
        rng = np.random.default_rng(10)
        spec = checks.random_spec(Variant.TREE, rng)
        codes = checks.random_codes(spec.C, 10, rng, observed=False)
        res = write_episode(spec, codes, InferenceConfig(sweeps=3, init_mode="random"))
        assert_allclose(res.elbo_trace[-1], elbo_closed_form(spec, codes, res).total, rtol=1e-12)

    def test_mixture_with_one_cluster_equals_mean_shifted(self):
        assert checks.check_reduction(np.random.default_rng(11), instances=3).passed

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(12)
        spec = checks.random_spec(Variant.MIXTURE, rng)
        codes = checks.random_codes(spec.C, 12, rng, observed=True)
        perm = rng.permutation(12)
        a = write_episode(spec, codes, InferenceConfig(sweeps=5, init_mode="random", rng_seed=3))
        b = write_episode(spec, [codes[i] for i in perm], InferenceConfig(sweeps=5, init_mode="random", rng_seed=3))
        for x, y in zip(a.memory.memory[0], b.memory.memory[0]):
            assert_allclose(x.R, y.R, atol=1e-10)
            assert_allclose(x.U, y.U, atol=1e-10)
        for i, j in enumerate(perm):
            assert_allclose(b.addresses[i].s.probs, a.addresses[j].s.probs, atol=1e-10)

    def test_recon_offset_shifts_elbo_only(self):
        rng = np.random.default_rng(13)
        spec = checks.random_spec(Variant.MIXTURE, rng)
        codes = checks.random_codes(spec.C, 6, rng, observed=False)
        cfg = InferenceConfig(sweeps=4, init_mode="random", rng_seed=1)
        a = write_episode(spec, codes, cfg)
        b = write_episode(spec, codes, cfg, recon_terms=np.full(6, -2.5))
        assert_allclose(np.array(b.elbo_trace) - np.array(a.elbo_trace), -15.0, atol=1e-9)
        assert checks.max_posterior_difference(a, b) == 0.0

    def test_tree_pseudocounts(self):
        rng = np.random.default_rng(14)
        spec = ModelSpec(Variant.TREE, 2, 4, H=3, G=2)
        codes = checks.random_codes(4, 9, rng, observed=True)
        res = write_episode(spec, codes, InferenceConfig(sweeps=3, init_mode="data"))
        table = res.memory.pseudocounts
        assert table.counts[()].sum() == 9
        hard = [tuple(int(b.assignment.probs.argmax()) for b in a.blocks) for a in res.addresses]
        assert table.counts[()][hard[0][0]] >= 1
        assert sum(v.sum() for k, v in table.counts.items() if len(k) == 1) == 9

    def test_responsibilities_on_simplex_and_memory_pd(self):
        rng = np.random.default_rng(15)
        spec = checks.random_spec(Variant.MIXTURE, rng)
        res = write_episode(spec, checks.random_codes(spec.C, 10, rng, True), InferenceConfig(sweeps=3))
        for a in res.addresses:
            assert abs(a.s.probs.sum() - 1) < 1e-12
        for m in res.memory.memory[0]:
            np.linalg.cholesky(m.U)

    def test_errors(self):
        spec = ModelSpec(Variant.MIXTURE, 2, 3, H=4)
        with pytest.raises(InvalidArgument):
            write_episode(spec, [obs([1.0, 2.0])])
        with pytest.raises(InvalidArgument):
            write_episode(spec, [obs([1.0, 2.0, 3.0])] * 2, InferenceConfig(init_mode="data"))
        with pytest.raises(InvalidArgument):
            InferenceConfig(sweeps=0)

    def test_early_stopping(self):
        rng = np.random.default_rng(16)
        spec = ModelSpec(Variant.GAUSSIAN, 2, 3, R0=rng.standard_normal((2, 3)))
        res = write_episode(spec, checks.random_codes(3, 5, rng, True), InferenceConfig(sweeps=5000, rel_tol=1e-9))
        assert 2 <= len(res.elbo_trace) < 5001
