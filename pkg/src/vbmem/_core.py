"""Array-level update rules and ELBO terms shared by the engine and the ELBO module.

Every variant is handled as G independent partitions, each with H clusters.
Within a partition the working state is a handful of stacked arrays (see
``Part``); public value types are converted to and from this form at the
API boundary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import softmax

from .distributions import (
    FullGaussian,
    MatrixNormalDist,
    OneHotCategorical,
    kl_full_gaussian,
    kl_matrix_normal,
    spd_inverse,
)
from .errors import InvalidArgument
from .models import AddressBlock, AddressPosterior, MemoryState, ModelSpec

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class Part:
    """Mutable working state for one partition.

    ``m[t, h]`` is the mean of q(w_t | s_t = h) (the probability vector for
    categorical weights) and ``S[t, h]`` its covariance (None when the
    weights are categorical).
    """

    R: np.ndarray  # (H, K, Cg)
    U: np.ndarray  # (H, K, K)
    mu_b: np.ndarray | None  # (H, Cg)
    Sig_b: np.ndarray | None  # (H, Cg, Cg)
    theta: np.ndarray  # (T, H)
    m: np.ndarray  # (T, H, K)
    S: np.ndarray | None  # (T, H, K, K)

    def copy(self) -> "Part":
        return Part(*(None if a is None else a.copy() for a in
                      (self.R, self.U, self.mu_b, self.Sig_b, self.theta, self.m, self.S)))


@dataclass(frozen=True)
class PriorArrays:
    R0: np.ndarray
    U0: np.ndarray
    U0inv: np.ndarray
    mu_b0: np.ndarray | None
    Sig_b0: np.ndarray | None
    Sig_b0inv: np.ndarray | None
    sigma2: float
    categorical: bool
    has_bias: bool

    @classmethod
    def from_spec(cls, spec: ModelSpec) -> "PriorArrays":
        bias = spec.variant.has_bias
        return cls(
            R0=spec.R0,
            U0=spec.U0,
            U0inv=spd_inverse(spec.U0, "U0"),
            mu_b0=spec.mu_b0,
            Sig_b0=spec.Sigma_b0,
            Sig_b0inv=spd_inverse(spec.Sigma_b0, "Sigma_b0") if bias else None,
            sigma2=spec.sigma_z2,
            categorical=spec.variant.categorical_weights,
            has_bias=bias,
        )


# cluster-level closed forms --------------------------------------------------


def second_moment(m: np.ndarray, S: np.ndarray | None) -> np.ndarray:
    """E[w w^T] for stacked weight posteriors; Diag(theta) when S is None."""
    if S is None:
        K = m.shape[-1]
        out = np.zeros(m.shape + (K,))
        idx = np.arange(K)
        out[..., idx, idx] = m
        return out
    return S + m[..., :, None] * m[..., None, :]


def gaussian_weights(R, U, resid, sigma2):
    """Optimal q(w) given memory (R, U) and code residuals (T, Cg) after the location."""
    K, Cg = R.shape
    A = R @ R.T + Cg * U
    Sig = spd_inverse(np.eye(K) + A / sigma2, "address precision")
    m = (resid @ R.T) @ Sig / sigma2
    return m, Sig


def categorical_weights(R, U, resid, sigma2):
    Cg = R.shape[1]
    diag_A = np.sum(R * R, axis=1) + Cg * np.diag(U)
    logits = -0.5 * diag_A / sigma2 + (resid @ R.T) / sigma2
    return normalize(softmax(logits, axis=-1))


def normalize(p):
    return p / p.sum(axis=-1, keepdims=True)


def bias_posterior(R, m, resp, mu_z, mu_b0, Sig_b0inv, sigma2):
    Cg = R.shape[1]
    Sig = spd_inverse(Sig_b0inv + (resp.sum() / sigma2) * np.eye(Cg), "location precision")
    resid = mu_z - m @ R
    mu = Sig @ (Sig_b0inv @ mu_b0 + resp @ resid / sigma2)
    return mu, Sig


def memory_posterior(m, E2, resp, resid, R0, U0inv, sigma2):
    prec = U0inv + np.einsum("t,tij->ij", resp, E2) / sigma2
    U = spd_inverse(prec, "memory precision")
    R = U @ (U0inv @ R0 + (resp[:, None] * m).T @ resid / sigma2)
    return R, U


def expected_sq_error(R, U, mu_b, Sig_b, m, E2, mu_z, var_z):
    """E||z_t - M^T w_t - b||^2 for every t under the factorized posterior."""
    Cg = R.shape[1]
    A = R @ R.T + Cg * U
    pred = m @ R
    Q = (np.sum(mu_z * mu_z, axis=1) + np.sum(var_z, axis=1)
         - 2.0 * np.sum(mu_z * pred, axis=1) + np.einsum("ij,tij->t", A, E2))
    if mu_b is not None:
        Q = Q - 2.0 * mu_z @ mu_b + 2.0 * pred @ mu_b + mu_b @ mu_b + np.trace(Sig_b)
    return Q


def cluster_code_kl(R, U, mu_b, Sig_b, m, E2, mu_z, var_z, sigma2, observed):
    """Per-timestep E[KL(q(z_t) || p(z_t | s_t = h, w_t, M_h, b_h))] for one cluster.

    In observed mode the code entropy is dropped and the value is the
    expected negative log-likelihood of the code mean.
    """
    Cg = R.shape[1]
    Q = expected_sq_error(R, U, mu_b, Sig_b, m, E2, mu_z, var_z)
    if observed:
        return 0.5 * Cg * (LOG_2PI + np.log(sigma2)) + Q / (2.0 * sigma2)
    return 0.5 * np.sum(np.log(sigma2 / var_z) - 1.0, axis=1) + Q / (2.0 * sigma2)


def weight_kl(m, S):
    """KL(q(w | s = h) || p(w)) for stacked posteriors (leading axes preserved)."""
    K = m.shape[-1]
    if S is None:
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(m > 0, m * np.log(m * K), 0.0)
        return terms.sum(axis=-1)
    L = np.linalg.cholesky(S)
    logdet = 2.0 * np.sum(np.log(np.diagonal(L, axis1=-2, axis2=-1)), axis=-1)
    tr = np.trace(S, axis1=-2, axis2=-1)
    return 0.5 * (tr + np.sum(m * m, axis=-1) - K - logdet)


def assignment_kl(theta):
    H = theta.shape[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(theta > 0, theta * np.log(theta * H), 0.0)
    return terms.sum(axis=-1)


# partition-level sweeps -------------------------------------------------------


def resid_for(part: Part, h: int, mu_z):
    return mu_z if part.mu_b is None else mu_z - part.mu_b[h]


def w_step(part: Part, prior: PriorArrays, mu_z):
    for h in range(part.R.shape[0]):
        resid = resid_for(part, h, mu_z)
        if prior.categorical:
            part.m[:, h] = categorical_weights(part.R[h], part.U[h], resid, prior.sigma2)
        else:
            m, Sig = gaussian_weights(part.R[h], part.U[h], resid, prior.sigma2)
            part.m[:, h] = m
            part.S[:, h] = Sig


def cluster_code_kls(part: Part, prior: PriorArrays, mu_z, var_z, observed):
    """(T, H) matrix of per-cluster expected code KLs."""
    E2 = second_moment(part.m, part.S)
    cols = []
    for h in range(part.R.shape[0]):
        mu_b = None if part.mu_b is None else part.mu_b[h]
        Sig_b = None if part.Sig_b is None else part.Sig_b[h]
        cols.append(cluster_code_kl(part.R[h], part.U[h], mu_b, Sig_b, part.m[:, h], E2[:, h],
                                    mu_z, var_z, prior.sigma2, observed))
    return np.stack(cols, axis=1) if cols else np.zeros((mu_z.shape[0], 0))


def s_step(part: Part, prior: PriorArrays, mu_z, var_z, observed):
    logits = -cluster_code_kls(part, prior, mu_z, var_z, observed) - weight_kl(part.m, part.S)
    part.theta = normalize(softmax(logits, axis=1))


def b_step(part: Part, prior: PriorArrays, mu_z):
    if part.mu_b is None:
        return
    for h in range(part.R.shape[0]):
        mu, Sig = bias_posterior(part.R[h], part.m[:, h], part.theta[:, h], mu_z,
                                 prior.mu_b0, prior.Sig_b0inv, prior.sigma2)
        part.mu_b[h] = mu
        part.Sig_b[h] = Sig


def m_step(part: Part, prior: PriorArrays, mu_z):
    E2 = second_moment(part.m, part.S)
    for h in range(part.R.shape[0]):
        R, U = memory_posterior(part.m[:, h], E2[:, h], part.theta[:, h], resid_for(part, h, mu_z),
                                prior.R0, prior.U0inv, prior.sigma2)
        part.R[h] = R
        part.U[h] = U


def sweep(part: Part, prior: PriorArrays, mu_z, var_z, observed):
    w_step(part, prior, mu_z)
    s_step(part, prior, mu_z, var_z, observed)
    b_step(part, prior, mu_z)
    m_step(part, prior, mu_z)


def partition_terms(part: Part, prior: PriorArrays, mu_z, var_z, observed):
    """(code_kl, address_kl, memory_kl) summed over the partition's timesteps."""
    code = float(np.sum(part.theta * cluster_code_kls(part, prior, mu_z, var_z, observed)))
    address = float(np.sum(assignment_kl(part.theta)) + np.sum(part.theta * weight_kl(part.m, part.S)))
    p_mem = MatrixNormalDist(prior.R0, prior.U0)
    memory = 0.0
    for h in range(part.R.shape[0]):
        memory += kl_matrix_normal(MatrixNormalDist(part.R[h], part.U[h]), p_mem)
    if part.mu_b is not None:
        p_b = FullGaussian(prior.mu_b0, prior.Sig_b0)
        for h in range(part.R.shape[0]):
            memory += kl_full_gaussian(FullGaussian(part.mu_b[h], part.Sig_b[h]), p_b)
    return code, address, memory


def elbo_terms(parts, prior: PriorArrays, spec: ModelSpec, mu_z, var_z, observed):
    code = address = memory = 0.0
    for g, part in enumerate(parts):
        sl = spec.partition_slice(g)
        c, a, m = partition_terms(part, prior, mu_z[:, sl], var_z[:, sl], observed)
        code += c
        address += a
        memory += m
    return code, address, memory


# conversion between public value types and working arrays --------------------


def prior_parts(spec: ModelSpec, T: int) -> list:
    """Working state equal to the prior: q(Omega) = p(Omega), q(w) = p(w), uniform q(s)."""
    H, K, Cg = spec.H, spec.K, spec.partition_width
    parts = []
    for _ in range(spec.G):
        categorical = spec.variant.categorical_weights
        parts.append(Part(
            R=np.repeat(spec.R0[None], H, axis=0),
            U=np.repeat(spec.U0[None], H, axis=0),
            mu_b=np.repeat(spec.mu_b0[None], H, axis=0) if spec.variant.has_bias else None,
            Sig_b=np.repeat(spec.Sigma_b0[None], H, axis=0) if spec.variant.has_bias else None,
            theta=np.full((T, H), 1.0 / H),
            m=np.full((T, H, K), 1.0 / K) if categorical else np.zeros((T, H, K)),
            S=None if categorical else np.broadcast_to(np.eye(K), (T, H, K, K)).copy(),
        ))
    return parts


def parts_to_public(spec: ModelSpec, parts, pseudocounts=None):
    memory = [[MatrixNormalDist(p.R[h], p.U[h]) for h in range(spec.H)] for p in parts]
    bias = None
    if spec.variant.has_bias:
        bias = [[FullGaussian(p.mu_b[h], p.Sig_b[h]) for h in range(spec.H)] for p in parts]
    state = MemoryState(spec.variant, memory, bias, pseudocounts)
    T = parts[0].theta.shape[0]
    addresses = []
    for t in range(T):
        blocks = []
        for p in parts:
            if p.S is None:
                ws = [OneHotCategorical(p.m[t, h]) for h in range(spec.H)]
            else:
                ws = [FullGaussian(p.m[t, h], p.S[t, h]) for h in range(spec.H)]
            blocks.append(AddressBlock(OneHotCategorical(p.theta[t]), ws))
        addresses.append(AddressPosterior(blocks))
    return state, addresses


def parts_from_public(spec: ModelSpec, memory: MemoryState, addresses) -> list:
    memory.check_against(spec)
    addresses = list(addresses)
    T = len(addresses)
    categorical = spec.variant.categorical_weights
    parts = []
    for g in range(spec.G):
        R = np.stack([memory.memory[g][h].R for h in range(spec.H)])
        U = np.stack([memory.memory[g][h].U for h in range(spec.H)])
        mu_b = Sig_b = None
        if memory.bias is not None:
            mu_b = np.stack([memory.bias[g][h].mean for h in range(spec.H)])
            Sig_b = np.stack([memory.bias[g][h].cov for h in range(spec.H)])
        theta = np.zeros((T, spec.H))
        m = np.zeros((T, spec.H, spec.K))
        S = None if categorical else np.zeros((T, spec.H, spec.K, spec.K))
        for t, a in enumerate(addresses):
            if len(a.blocks) != spec.G:
                raise InvalidArgument(f"address posterior {t} has {len(a.blocks)} blocks, expected {spec.G}")
            block = a.blocks[g]
            if block.assignment.dim != spec.H:
                raise InvalidArgument("assignment dimension does not match H")
            theta[t] = block.assignment.probs
            for h, w in enumerate(block.weights):
                if w.dim != spec.K:
                    raise InvalidArgument("weight posterior dimension does not match K")
                if categorical != isinstance(w, OneHotCategorical):
                    raise InvalidArgument("weight posterior family does not match the variant")
                m[t, h] = w.mean
                if S is not None:
                    S[t, h] = w.cov
        parts.append(Part(R.copy(), U.copy(), mu_b, Sig_b, theta, m, S))
    return parts
