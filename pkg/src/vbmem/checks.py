"""Property suites runnable from the command line.

Each suite returns a ``SuiteReport``; ``passed`` is False as soon as any
instance violates the property, and ``failures`` lists the offending cases
in a machine-readable form.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _core
from .distributions import (
    FullGaussian,
    MatrixNormalDist,
    OneHotCategorical,
    kl_full_gaussian,
    kl_matrix_normal,
    reparam_sample_matrix_normal,
)
from .elbo import elbo_closed_form, elbo_monte_carlo
from .engine import InferenceConfig, InferenceResult, write_episode
from .episodes import CodePosterior, stack_codes
from .models import AddressBlock, AddressPosterior, MemoryState, ModelSpec, Variant, reduce_mixture_to_mean_shifted

SUITES = ("kl", "reparam", "monotone", "stationarity", "reduction", "mc-elbo")


@dataclass
class SuiteReport:
    suite: str
    passed: bool = True
    cases: int = 0
    worst: float = 0.0
    failures: list = field(default_factory=list)

    def record(self, ok: bool, value: float, **info):
        self.cases += 1
        self.worst = max(self.worst, float(value))
        if not ok:
            self.passed = False
            self.failures.append({"value": float(value), **info})

    def to_dict(self) -> dict:
        return {"suite": self.suite, "passed": self.passed, "cases": self.cases,
                "worst": self.worst, "failures": self.failures}


# random instances -------------------------------------------------------------


def random_spd(n: int, rng: np.random.Generator, floor: float = 0.3) -> np.ndarray:
    A = rng.standard_normal((n, n))
    return A @ A.T / n + floor * np.eye(n)


def random_spec(variant: Variant, rng: np.random.Generator, max_k=8, max_c=8, max_h=4, max_g=2) -> ModelSpec:
    variant = Variant(variant)
    K = int(rng.integers(1, max_k + 1))
    H = int(rng.integers(1, max_h + 1)) if variant in (Variant.MIXTURE, Variant.TREE) else 1
    G = int(rng.integers(1, max_g + 1)) if variant is Variant.TREE else 1
    C = G * int(rng.integers(1, max_c // G + 1))
    Cg = C // G
    kwargs = dict(R0=rng.standard_normal((K, Cg)), U0=random_spd(K, rng),
                  sigma_z2=float(rng.uniform(0.3, 2.0)))
    if variant in (Variant.MEAN_SHIFTED, Variant.MIXTURE):
        kwargs.update(mu_b0=rng.standard_normal(Cg), Sigma_b0=random_spd(Cg, rng))
    return ModelSpec(variant, K, C, H, G, **kwargs)


def random_codes(C: int, T: int, rng: np.random.Generator, observed: bool) -> list:
    return [CodePosterior(2.0 * rng.standard_normal(C),
                          np.zeros(C) if observed else rng.uniform(0.05, 1.0, C))
            for _ in range(T)]


def random_posterior(spec: ModelSpec, T: int, rng: np.random.Generator) -> InferenceResult:
    """An arbitrary (not optimized) variational posterior with valid shapes."""
    K, Cg, H, G = spec.K, spec.partition_width, spec.H, spec.G
    memory = [[MatrixNormalDist(spec.R0 + rng.standard_normal((K, Cg)), random_spd(K, rng, 0.1))
               for _ in range(H)] for _ in range(G)]
    bias = None
    if spec.variant.has_bias:
        bias = [[FullGaussian(rng.standard_normal(Cg), random_spd(Cg, rng, 0.1)) for _ in range(H)]
                for _ in range(G)]
    addresses = []
    for _ in range(T):
        blocks = []
        for _ in range(G):
            if spec.variant.categorical_weights:
                ws = [OneHotCategorical(_core.normalize(rng.dirichlet(np.ones(K)))) for _ in range(H)]
            else:
                ws = [FullGaussian(rng.standard_normal(K), random_spd(K, rng, 0.1)) for _ in range(H)]
            blocks.append(AddressBlock(OneHotCategorical(_core.normalize(rng.dirichlet(np.ones(H)))), ws))
        addresses.append(AddressPosterior(blocks))
    return InferenceResult(MemoryState(spec.variant, memory, bias), addresses, [], "random")


# suites -------------------------------------------------------------------------


def check_kl(rng: np.random.Generator, instances: int = 50, tol: float = 1e-10) -> SuiteReport:
    """Matrix-normal KL against the KL of the vectorized Gaussians, plus KL(p || p) = 0."""
    report = SuiteReport("kl")
    for i in range(instances):
        K, C = (int(v) for v in rng.integers(1, 5, size=2))
        q = MatrixNormalDist(rng.standard_normal((K, C)), random_spd(K, rng))
        p = MatrixNormalDist(rng.standard_normal((K, C)), random_spd(K, rng))
        a = kl_matrix_normal(q, p)
        b = kl_full_gaussian(q.vectorized(), p.vectorized())
        diff = abs(a - b)
        report.record(diff <= tol and a >= -1e-10, diff, instance=i, K=K, C=C)
        self_kl = abs(kl_matrix_normal(q, q))
        report.record(self_kl <= tol, self_kl, instance=i, case="self")
    return report


def check_reparam(rng: np.random.Generator, n: int = 100_000, K: int = 3, C: int = 2,
                  rel_tol: float = 0.05) -> SuiteReport:
    """Sample mean within 4 standard errors and sample covariance of vec(M) within rel_tol of I_C kron U."""
    report = SuiteReport("reparam")
    d = MatrixNormalDist(rng.standard_normal((K, C)), random_spd(K, rng))
    noise = rng.standard_normal((n, K, C))
    samples = np.stack([reparam_sample_matrix_normal(d, e) for e in noise])
    vec = samples.transpose(0, 2, 1).reshape(n, K * C)
    target = d.vectorized()
    cov = np.cov(vec, rowvar=False)
    rel = np.linalg.norm(cov - target.cov) / np.linalg.norm(target.cov)
    report.record(rel <= rel_tol, rel, statistic="covariance")
    se = np.sqrt(np.diag(target.cov) / n)
    z = np.max(np.abs(vec.mean(axis=0) - target.mean) / se)
    report.record(z <= 4.0, z, statistic="mean_z")
    return report


def monotone_violation(trace) -> float:
    """Largest decrease between consecutive ELBO values, relative to the earlier value."""
    trace = np.asarray(trace)
    if trace.size < 2:
        return 0.0
    drops = (trace[:-1] - trace[1:]) / np.maximum(np.abs(trace[:-1]), 1e-300)
    return float(max(drops.max(), 0.0))


def check_monotone(rng: np.random.Generator, episodes: int = 100, sweeps: int = 10,
                   rel_slack: float = 1e-8, variants=tuple(Variant)) -> SuiteReport:
    report = SuiteReport("monotone")
    modes = ("prior", "random", "data")
    for variant in variants:
        for i in range(episodes):
            spec = random_spec(variant, rng)
            T = int(rng.integers(max(spec.H, 1), 33))
            codes = random_codes(spec.C, T, rng, observed=bool(rng.integers(2)))
            cfg = InferenceConfig(sweeps=sweeps, init_mode=modes[i % 3], rng_seed=int(rng.integers(2**32)))
            result = write_episode(spec, codes, cfg)
            v = monotone_violation(result.elbo_trace)
            report.record(v <= rel_slack, v, variant=variant.value, episode=i)
    return report


def _gaussian_param_vector(part: _core.Part) -> np.ndarray:
    T, _, K = part.m.shape
    tril = np.tril_indices(K)
    Lw = np.linalg.cholesky(part.S[:, 0])
    LU = np.linalg.cholesky(part.U[0])
    return np.concatenate([part.m[:, 0].ravel(), Lw[:, tril[0], tril[1]].ravel(),
                           part.R[0].ravel(), LU[tril].ravel()])


def _gaussian_part_from_vector(x: np.ndarray, T: int, K: int, C: int) -> _core.Part:
    tril = np.tril_indices(K)
    nt = len(tril[0])
    i = 0
    m = x[i:i + T * K].reshape(T, K); i += T * K
    Lw = np.zeros((T, K, K))
    Lw[:, tril[0], tril[1]] = x[i:i + T * nt].reshape(T, nt); i += T * nt
    R = x[i:i + K * C].reshape(K, C); i += K * C
    LU = np.zeros((K, K))
    LU[tril] = x[i:i + nt]
    S = Lw @ Lw.transpose(0, 2, 1)
    return _core.Part(R[None], (LU @ LU.T)[None], None, None, np.ones((T, 1)), m[:, None], S[:, None])


def elbo_gradient(spec: ModelSpec, codes, result: InferenceResult, step: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of the ELBO of a Gaussian-address posterior.

    Coordinates: every mean of q(w_t), the Cholesky factor of every
    covariance of q(w_t), the memory mean R, and the Cholesky factor of U.
    """
    mu, var, observed = stack_codes(codes)
    prior = _core.PriorArrays.from_spec(spec)
    base = _core.parts_from_public(spec, result.memory, result.addresses)[0]
    T = mu.shape[0]
    x0 = _gaussian_param_vector(base)

    def f(x):
        part = _gaussian_part_from_vector(x, T, spec.K, spec.C)
        return -sum(_core.partition_terms(part, prior, mu, var, observed))

    grad = np.zeros_like(x0)
    for j in range(x0.size):
        e = np.zeros_like(x0)
        e[j] = step
        grad[j] = (f(x0 + e) - f(x0 - e)) / (2.0 * step)
    return grad


def check_stationarity(rng: np.random.Generator, sweeps: int = 3000, tol: float = 1e-4,
                       shapes=((1, 1), (2, 3)), T: int = 4) -> SuiteReport:
    report = SuiteReport("stationarity")
    for K, C in shapes:
        for observed in (True, False):
            spec = ModelSpec(Variant.GAUSSIAN, K, C, R0=rng.standard_normal((K, C)), U0=random_spd(K, rng))
            codes = random_codes(C, T, rng, observed)
            result = write_episode(spec, codes, InferenceConfig(sweeps=sweeps, elbo_trace=False))
            g = float(np.max(np.abs(elbo_gradient(spec, codes, result))))
            report.record(g < tol, g, K=K, C=C, observed=observed)
    return report


def _result_arrays(result: InferenceResult):
    out = []
    for row in result.memory.memory:
        for m in row:
            out += [m.R, m.U]
    if result.memory.bias is not None:
        for row in result.memory.bias:
            for b in row:
                out += [b.mean, b.cov]
    for a in result.addresses:
        for blk in a.blocks:
            out.append(blk.assignment.probs)
            for w in blk.weights:
                out.append(w.mean)
                if isinstance(w, FullGaussian):
                    out.append(w.cov)
    return out


def max_posterior_difference(a: InferenceResult, b: InferenceResult) -> float:
    xs, ys = _result_arrays(a), _result_arrays(b)
    if len(xs) != len(ys) or any(x.shape != y.shape for x, y in zip(xs, ys)):
        return float("inf")
    return max(float(np.max(np.abs(x - y))) for x, y in zip(xs, ys))


def check_reduction(rng: np.random.Generator, instances: int = 20, sweeps: int = 10,
                    tol: float = 1e-10) -> SuiteReport:
    """Mixture with one cluster against mean-shifted; tree with one partition against mixture."""
    report = SuiteReport("reduction")
    for i in range(instances):
        mix = random_spec(Variant.MIXTURE, rng, max_h=1)
        T = int(rng.integers(1, 17))
        codes = random_codes(mix.C, T, rng, observed=bool(rng.integers(2)))
        cfg = InferenceConfig(sweeps=sweeps, init_mode=("prior", "random", "data")[i % 3],
                              rng_seed=int(rng.integers(2**32)))
        d = max_posterior_difference(write_episode(mix, codes, cfg),
                                     write_episode(reduce_mixture_to_mean_shifted(mix), codes, cfg))
        report.record(d <= tol, d, pair="mixture-vs-mean-shifted", instance=i)

        mix = random_spec(Variant.MIXTURE, rng)
        mix = ModelSpec(Variant.MIXTURE, mix.K, mix.C, mix.H, 1, mix.sigma_z2, mix.R0, mix.U0)
        tree = ModelSpec(Variant.TREE, mix.K, mix.C, mix.H, 1, mix.sigma_z2, mix.R0, mix.U0)
        T = int(rng.integers(mix.H, 17))
        codes = random_codes(mix.C, T, rng, observed=bool(rng.integers(2)))
        a, b = write_episode(mix, codes, cfg), write_episode(tree, codes, cfg)
        d = max_posterior_difference(a, b)
        report.record(d <= tol, d, pair="tree-vs-mixture", instance=i)
    return report


def check_mc_elbo(rng: np.random.Generator, instances: int = 20, n_samples: int = 100_000,
                  n_se: float = 3.0, variants=tuple(Variant)) -> SuiteReport:
    """Closed-form ELBO against the Monte Carlo estimate, in units of its standard error."""
    report = SuiteReport("mc-elbo")
    for variant in variants:
        for i in range(instances):
            spec = random_spec(variant, rng, max_k=3, max_c=4, max_h=3, max_g=2)
            T = int(rng.integers(1, 4))
            codes = random_codes(spec.C, T, rng, observed=bool(i % 2))
            result = random_posterior(spec, T, rng)
            closed = elbo_closed_form(spec, codes, result).total
            est, se = elbo_monte_carlo(spec, codes, result, n_samples, rng)
            z = abs(est - closed) / se
            report.record(z <= n_se, z, variant=variant.value, instance=i, closed=closed, estimate=est, se=se)
    return report


def run_suite(name: str, rng: np.random.Generator, quick: bool = False) -> SuiteReport:
    if name == "kl":
        return check_kl(rng)
    if name == "reparam":
        return check_reparam(rng)
    if name == "monotone":
        return check_monotone(rng, episodes=10 if quick else 100)
    if name == "stationarity":
        return check_stationarity(rng)
    if name == "reduction":
        return check_reduction(rng, instances=5 if quick else 20)
    if name == "mc-elbo":
        return check_mc_elbo(rng, instances=2 if quick else 20, n_samples=20_000 if quick else 100_000)
    raise ValueError(f"unknown suite {name!r}; choose from {', '.join(SUITES)}")
