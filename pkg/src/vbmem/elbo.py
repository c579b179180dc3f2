"""Evidence lower bound: closed form, Monte Carlo cross-check, and the stochastic regularizer."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import _core
from .episodes import CodePosterior, stack_codes
from .errors import InvalidArgument
from .models import AddressPosterior, MemoryState, ModelSpec, Variant

MAX_ENUMERATED_ASSIGNMENTS = 64


@dataclass(frozen=True)
class ElboBreakdown:
    recon: float
    code_kl: float
    address_kl: float
    memory_kl: float
    total: float

    def to_dict(self) -> dict:
        return {k: float(getattr(self, k)) for k in ("recon", "code_kl", "address_kl", "memory_kl", "total")}


def _code_arrays(spec: ModelSpec, codes):
    codes = list(getattr(codes, "codes", codes))
    if not codes:
        return np.zeros((0, spec.C)), np.zeros((0, spec.C)), True
    mu, var, observed = stack_codes(codes)
    if mu.shape[1] != spec.C:
        raise InvalidArgument(f"code dimension {mu.shape[1]} does not match C={spec.C}")
    return mu, var, observed


def elbo_closed_form(spec: ModelSpec, codes, result, recon_terms=None) -> ElboBreakdown:
    """Every ELBO term evaluated analytically for the posterior in ``result``.

    Discrete variables are handled by exact responsibility-weighted sums.
    With observed codes (all variances zero) the code term is the expected
    negative log-likelihood of the code means and carries no entropy.
    """
    mu, var, observed = _code_arrays(spec, codes)
    if len(result.addresses) != mu.shape[0]:
        raise InvalidArgument(f"{mu.shape[0]} codes but {len(result.addresses)} address posteriors")
    recon = 0.0
    if recon_terms is not None:
        if len(recon_terms) != mu.shape[0]:
            raise InvalidArgument("one reconstruction term per timestep is required")
        recon = float(np.sum(recon_terms))
    parts = _core.parts_from_public(spec, result.memory, result.addresses)
    prior = _core.PriorArrays.from_spec(spec)
    code, address, memory = _core.elbo_terms(parts, prior, spec, mu, var, observed)
    return ElboBreakdown(recon, code, address, memory, recon - code - address - memory)


def tree_expected_code_kl(spec: ModelSpec, code: CodePosterior, address: AddressPosterior,
                          memory: MemoryState) -> float:
    """Expected code KL of one timestep under a tree posterior, in O(G * H) cluster evaluations.

    The joint assignment distribution factorizes over partitions and the
    code likelihood factorizes over code slices, so the expectation splits
    into one H-term weighted sum per partition.
    """
    if spec.variant is not Variant.TREE:
        raise InvalidArgument("tree_expected_code_kl requires the tree variant")
    if code.dim != spec.C:
        raise InvalidArgument("code dimension does not match the spec")
    parts = _core.parts_from_public(spec, memory, [address])
    total = 0.0
    for g, p in enumerate(parts):
        sl = spec.partition_slice(g)
        mu, var = code.mean[None, sl], code.var[None, sl]
        E2 = _core.second_moment(p.m, p.S)
        for h in range(spec.H):
            kl = _core.cluster_code_kl(p.R[h], p.U[h], p.mu_b[h], p.Sig_b[h], p.m[:, h], E2[:, h],
                                       mu, var, spec.sigma_z2, code.observed)
            total += p.theta[0, h] * kl[0]
    return float(total)


# Monte Carlo cross-check --------------------------------------------------------


def _mn_sampler(R, U):
    """scipy frozen Gaussian over column-stacked vec(M), covariance I_C kron U."""
    K, C = R.shape
    return stats.multivariate_normal(R.flatten(order="F"), np.kron(np.eye(C), U))


def _draw_matrix(dist, n, K, C, rng):
    vec = np.asarray(dist.rvs(size=n, random_state=rng)).reshape(n, K * C)
    return vec, vec.reshape(n, C, K).transpose(0, 2, 1)


def _draw_gaussian(dist, n, rng, dim):
    return np.asarray(dist.rvs(size=n, random_state=rng)).reshape(n, dim)


def _mc_chunk(spec, mu, var, observed, parts, n, rng):
    """ln p - ln q for n joint draws (discrete variables summed out where feasible)."""
    K, Cg, H, G = spec.K, spec.partition_width, spec.H, spec.G
    categorical = spec.variant.categorical_weights
    p_mem = _mn_sampler(spec.R0, spec.U0)
    p_b = stats.multivariate_normal(spec.mu_b0, spec.Sigma_b0) if spec.variant.has_bias else None
    out = np.zeros(n)

    # global variables
    M = [[None] * H for _ in range(G)]
    b = [[None] * H for _ in range(G)]
    for g, p in enumerate(parts):
        for h in range(H):
            q_mem = _mn_sampler(p.R[h], p.U[h])
            vec, M[g][h] = _draw_matrix(q_mem, n, K, Cg, rng)
            out += p_mem.logpdf(vec) - q_mem.logpdf(vec)
            if p_b is not None:
                q_b = stats.multivariate_normal(p.mu_b[h], p.Sig_b[h])
                b[g][h] = _draw_gaussian(q_b, n, rng, Cg)
                out += p_b.logpdf(b[g][h]) - q_b.logpdf(b[g][h])

    sigma = np.sqrt(spec.sigma_z2)
    enumerate_s = H ** G <= MAX_ENUMERATED_ASSIGNMENTS
    for t in range(mu.shape[0]):
        if observed:
            z = np.broadcast_to(mu[t], (n, spec.C))
        else:
            z = mu[t] + np.sqrt(var[t]) * rng.standard_normal((n, spec.C))
            out -= np.sum(stats.norm.logpdf(z, mu[t], np.sqrt(var[t])), axis=1)

        def partition_value(g, h):
            """ln p(z_g | w, s_g = h, Omega) + ln p(w) - ln q(w | s_g = h), per draw."""
            p = parts[g]
            zg = z[:, spec.partition_slice(g)]
            shift = 0.0 if b[g][h] is None else b[g][h]
            if categorical:
                val = np.zeros(n)
                for k in range(K):
                    if p.m[t, h, k] == 0.0:
                        continue
                    pred = M[g][h][:, k, :] + shift
                    ll = np.sum(stats.norm.logpdf(zg, pred, sigma), axis=1)
                    val += p.m[t, h, k] * (ll + np.log(1.0 / K) - np.log(p.m[t, h, k]))
                return val
            q_w = stats.multivariate_normal(p.m[t, h], p.S[t, h])
            w = _draw_gaussian(q_w, n, rng, K)
            pred = np.einsum("nk,nkc->nc", w, M[g][h]) + shift
            ll = np.sum(stats.norm.logpdf(zg, pred, sigma), axis=1)
            lp = stats.multivariate_normal(np.zeros(K), np.eye(K)).logpdf(w)
            return ll + lp - q_w.logpdf(w)

        if enumerate_s:
            for joint in itertools.product(range(H), repeat=G):
                weight = np.prod([parts[g].theta[t, h] for g, h in enumerate(joint)])
                if weight == 0.0:
                    continue
                val = sum(partition_value(g, h) for g, h in enumerate(joint))
                log_ratio = sum(np.log(1.0 / H) - np.log(parts[g].theta[t, h]) for g, h in enumerate(joint))
                out += weight * (val + log_ratio)
        else:
            for g, p in enumerate(parts):
                draws = rng.choice(H, size=n, p=p.theta[t])
                vals = np.stack([partition_value(g, h) for h in range(H)], axis=1)
                picked = vals[np.arange(n), draws]
                out += picked + np.log(1.0 / H) - np.log(p.theta[t, draws])
    return out


def elbo_monte_carlo(spec: ModelSpec, codes, result, n_samples: int, rng: np.random.Generator,
                     recon_terms=None, chunk: int = 5000) -> tuple[float, float]:
    """Sample-average of ln p - ln q under the variational posterior; returns (estimate, std error).

    Continuous variables are sampled through scipy.stats densities, with the
    memory drawn as a full Gaussian over vec(M).  Assignments are summed
    exactly when there are at most 64 joint outcomes, else sampled.
    """
    if n_samples < 2:
        raise InvalidArgument("n_samples must be at least 2")
    mu, var, observed = _code_arrays(spec, codes)
    if len(result.addresses) != mu.shape[0]:
        raise InvalidArgument(f"{mu.shape[0]} codes but {len(result.addresses)} address posteriors")
    parts = _core.parts_from_public(spec, result.memory, result.addresses)
    values = []
    done = 0
    while done < n_samples:
        n = min(chunk, n_samples - done)
        values.append(_mc_chunk(spec, mu, var, observed, parts, n, rng))
        done += n
    values = np.concatenate(values)
    if recon_terms is not None:
        values = values + float(np.sum(recon_terms))
    return float(values.mean()), float(values.std(ddof=1) / np.sqrt(n_samples))


# stochastic regularizer --------------------------------------------------------


@dataclass(frozen=True)
class RegularizerParams:
    gamma: float = 0.5
    epsilon: float = 0.1
    delta: float = 0.2
    alpha: float = 8.0
    beta: float = 8.0

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0:
            raise InvalidArgument("alpha and beta must be positive")
        if self.delta < 0:
            raise InvalidArgument("delta must be non-negative")


def sample_mixing_weight(params: RegularizerParams, rng: np.random.Generator, size=None):
    """t = gamma - epsilon + delta * s with s ~ Beta(alpha, beta)."""
    return params.gamma - params.epsilon + params.delta * rng.beta(params.alpha, params.beta, size=size)


def apply_stochastic_regularizer(code: CodePosterior, prior_mean, params: RegularizerParams,
                                 rng: np.random.Generator) -> CodePosterior:
    """Replace the code mean by a random convex combination with the prior-predicted mean."""
    prior_mean = np.asarray(prior_mean, dtype=np.float64)
    if prior_mean.shape != code.mean.shape:
        raise InvalidArgument("prior mean does not match the code dimension")
    t = sample_mixing_weight(params, rng)
    return CodePosterior(t * code.mean + (1.0 - t) * prior_mean, code.var)


def expected_code_mean(spec: ModelSpec, memory: MemoryState, address: AddressPosterior) -> np.ndarray:
    """E[M^T w + b] under q(Omega) q(y_t), the prior-predicted code mean for one timestep."""
    parts = _core.parts_from_public(spec, memory, [address])
    out = np.zeros(spec.C)
    for g, p in enumerate(parts):
        sl = spec.partition_slice(g)
        for h in range(spec.H):
            mean = p.m[0, h] @ p.R[h]
            if p.mu_b is not None:
                mean = mean + p.mu_b[h]
            out[sl] += p.theta[0, h] * mean
    return out
