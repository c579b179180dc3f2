"""Coordinate-ascent mean-field inference ("memory writing").

Each sweep refreshes, per partition: every q(w_t | s_t = h), then every
q(s_t), then every q(b_h), then every q(M_h).  Each step is the exact
maximizer of the ELBO in its factor, so the ELBO never decreases.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import _core
from .distributions import FullGaussian, MatrixNormalDist, OneHotCategorical, spd_inverse
from .episodes import CodePosterior, Episode, stack_codes
from .errors import InvalidArgument
from .models import (
    AddressPosterior,
    MemoryState,
    ModelSpec,
    PseudocountTable,
    Variant,
)


class InitMode(str, enum.Enum):
    PRIOR = "prior"
    RANDOM = "random"
    DATA = "data"


RANDOM_INIT_SCALE = 0.1


@dataclass(frozen=True)
class InferenceConfig:
    sweeps: int = 20
    init_mode: InitMode = InitMode.PRIOR
    rng_seed: int = 0
    elbo_trace: bool = True
    rel_tol: float | None = None  # stop early once the relative ELBO change falls below this

    def __post_init__(self):
        if int(self.sweeps) != self.sweeps or self.sweeps < 1:
            raise InvalidArgument("sweeps must be a positive integer")
        object.__setattr__(self, "init_mode", InitMode(self.init_mode))
        if not 0 <= int(self.rng_seed) < 2**64:
            raise InvalidArgument("rng_seed must be a 64-bit unsigned integer")


@dataclass(frozen=True, eq=False)
class InferenceResult:
    memory: MemoryState
    addresses: tuple
    elbo_trace: tuple = field(default_factory=tuple)
    provenance: str = "mfvb"

    def __post_init__(self):
        object.__setattr__(self, "addresses", tuple(self.addresses))
        object.__setattr__(self, "elbo_trace", tuple(float(v) for v in self.elbo_trace))


def _codes_of(codes):
    if isinstance(codes, Episode):
        return list(codes.codes)
    return list(codes)


def _check_codes(spec: ModelSpec, codes):
    mu, var, observed = stack_codes(codes)
    if len(codes) == 0:
        return np.zeros((0, spec.C)), np.zeros((0, spec.C)), True
    if mu.shape[1] != spec.C:
        raise InvalidArgument(f"code dimension {mu.shape[1]} does not match C={spec.C}")
    return mu, var, observed


def kmeanspp_init(codes, H: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding over code means; returns an (H, C) array of chosen means.

    The first center is uniform.  Each later center is drawn with probability
    proportional to the squared distance to the nearest chosen center, by
    inverting the cumulative sum.  If every remaining distance is zero the
    draw falls back to a uniform choice.
    """
    if isinstance(codes, np.ndarray):
        X = np.asarray(codes, dtype=np.float64)
    else:
        X = stack_codes(_codes_of(codes))[0]
    T = X.shape[0]
    if H < 1:
        raise InvalidArgument("H must be positive")
    if H > T:
        raise InvalidArgument(f"cannot choose H={H} centers from T={T} codes")
    chosen = [int(rng.integers(T))]
    d2 = np.sum((X - X[chosen[0]]) ** 2, axis=1)
    for _ in range(1, H):
        total = d2.sum()
        if total <= 0.0:
            j = int(rng.integers(T))
        else:
            j = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            j = min(j, T - 1)
        chosen.append(j)
        d2 = np.minimum(d2, np.sum((X - X[j]) ** 2, axis=1))
    return X[chosen].copy()


def _initial_parts(spec: ModelSpec, mu_z, cfg: InferenceConfig, rng):
    parts = _core.prior_parts(spec, mu_z.shape[0])
    if cfg.init_mode is InitMode.RANDOM:
        for p in parts:
            p.R = p.R + RANDOM_INIT_SCALE * rng.standard_normal(p.R.shape)
    elif cfg.init_mode is InitMode.DATA and spec.variant.has_bias:
        for g, p in enumerate(parts):
            p.mu_b = kmeanspp_init(mu_z[:, spec.partition_slice(g)], spec.H, rng)
    return parts


def _elbo(parts, prior, spec, mu, var, observed, recon):
    code, address, memory = _core.elbo_terms(parts, prior, spec, mu, var, observed)
    return recon - code - address - memory


def write_episode(spec: ModelSpec, codes, cfg: InferenceConfig | None = None,
                  recon_terms=None) -> InferenceResult:
    """Run initialization and ``cfg.sweeps`` coordinate-ascent sweeps on one episode.

    ``recon_terms`` are optional per-timestep reconstruction log-likelihoods.
    They only shift the recorded ELBO; no update depends on them.
    """
    cfg = cfg or InferenceConfig()
    codes = _codes_of(codes)
    if not codes:
        raise InvalidArgument("write_episode needs at least one code")
    mu, var, observed = _check_codes(spec, codes)
    recon = 0.0 if recon_terms is None else float(np.sum(recon_terms))
    if recon_terms is not None and len(recon_terms) != len(codes):
        raise InvalidArgument("one reconstruction term per timestep is required")
    rng = np.random.default_rng(cfg.rng_seed)
    prior = _core.PriorArrays.from_spec(spec)
    parts = _initial_parts(spec, mu, cfg, rng)

    track = cfg.elbo_trace or cfg.rel_tol is not None
    trace = [_elbo(parts, prior, spec, mu, var, observed, recon)] if track else []
    for _ in range(cfg.sweeps):
        for g, p in enumerate(parts):
            sl = spec.partition_slice(g)
            _core.sweep(p, prior, mu[:, sl], var[:, sl], observed)
        if track:
            trace.append(_elbo(parts, prior, spec, mu, var, observed, recon))
            if cfg.rel_tol is not None and abs(trace[-1] - trace[-2]) <= cfg.rel_tol * abs(trace[-2]):
                break

    pseudocounts = None
    if spec.variant is Variant.TREE:
        hard = np.stack([p.theta.argmax(axis=1) for p in parts], axis=1)
        pseudocounts = PseudocountTable.from_assignments(hard, spec.H)
    memory, addresses = _core.parts_to_public(spec, parts, pseudocounts)
    return InferenceResult(memory, addresses, trace if cfg.elbo_trace else [], "mfvb")


# single-factor updates ---------------------------------------------------------


def _resid(code: CodePosterior, mem: MatrixNormalDist, bias: FullGaussian | None):
    if code.dim != mem.cols:
        raise InvalidArgument(f"code dimension {code.dim} does not match memory columns {mem.cols}")
    mu = code.mean[None, :]
    if bias is not None:
        if bias.dim != mem.cols:
            raise InvalidArgument("location dimension does not match memory columns")
        mu = mu - bias.mean
    return mu


def update_gaussian_address(code: CodePosterior, mem: MatrixNormalDist, sigma_z2: float,
                            bias: FullGaussian | None = None) -> FullGaussian:
    m, Sig = _core.gaussian_weights(mem.R, mem.U, _resid(code, mem, bias), sigma_z2)
    return FullGaussian(m[0], Sig)


def update_categorical_address(code: CodePosterior, mem: MatrixNormalDist, sigma_z2: float,
                               bias: FullGaussian | None = None) -> OneHotCategorical:
    return OneHotCategorical(_core.categorical_weights(mem.R, mem.U, _resid(code, mem, bias), sigma_z2)[0])


def _weight_arrays(addresses, K):
    """Means and covariances (None for categorical) of a list of weight posteriors."""
    ws = [a.w if isinstance(a, AddressPosterior) else a for a in addresses]
    if not ws:
        return np.zeros((0, K)), np.zeros((0, K, K))
    if any(w.dim != K for w in ws):
        raise InvalidArgument("weight posterior dimension does not match memory rows")
    m = np.stack([w.mean for w in ws])
    if all(isinstance(w, OneHotCategorical) for w in ws):
        return m, None
    if any(isinstance(w, OneHotCategorical) for w in ws):
        raise InvalidArgument("weight posteriors mix categorical and Gaussian families")
    return m, np.stack([w.cov for w in ws])


def _responsibilities(resp, T):
    if resp is None:
        return np.ones(T)
    resp = np.asarray(resp, dtype=np.float64)
    if resp.shape != (T,):
        raise InvalidArgument("one responsibility per timestep is required")
    if np.any(resp < 0) or np.any(resp > 1):
        raise InvalidArgument("responsibilities must lie in [0, 1]")
    return resp


def _code_means(codes, C):
    codes = _codes_of(codes)
    if not codes:
        return np.zeros((0, C))
    mu = stack_codes(codes)[0]
    if mu.shape[1] != C:
        raise InvalidArgument("code dimension does not match memory columns")
    return mu


def update_memory(codes, addresses, prior: MatrixNormalDist, sigma_z2: float,
                  responsibilities=None, bias: FullGaussian | None = None) -> MatrixNormalDist:
    """Optimal q(M) given weight posteriors (Gaussian or categorical) for each code."""
    mu = _code_means(codes, prior.cols)
    m, S = _weight_arrays(addresses, prior.rows)
    if m.shape[0] != mu.shape[0]:
        raise InvalidArgument(f"{mu.shape[0]} codes but {m.shape[0]} address posteriors")
    resp = _responsibilities(responsibilities, mu.shape[0])
    resid = mu if bias is None else mu - bias.mean
    R, U = _core.memory_posterior(m, _core.second_moment(m, S), resp, resid, prior.R,
                                  spd_inverse(prior.U, "prior row covariance"), sigma_z2)
    return MatrixNormalDist(R, U)


def update_bias(codes, addresses, mem: MatrixNormalDist, prior: FullGaussian, sigma_z2: float,
                responsibilities=None) -> FullGaussian:
    mu = _code_means(codes, mem.cols)
    m, _ = _weight_arrays(addresses, mem.rows)
    if m.shape[0] != mu.shape[0]:
        raise InvalidArgument(f"{mu.shape[0]} codes but {m.shape[0]} address posteriors")
    resp = _responsibilities(responsibilities, mu.shape[0])
    mean, cov = _core.bias_posterior(mem.R, m, resp, mu, prior.mean,
                                     spd_inverse(prior.cov, "prior location covariance"), sigma_z2)
    return FullGaussian(mean, cov)


def update_mixture_assignment(code: CodePosterior, clusters, sigma_z2: float) -> OneHotCategorical:
    """Optimal q(s_t) given, for each cluster h, (q(M_h), q(b_h) or None, q(w_t | s_t = h))."""
    clusters = list(clusters)
    if not clusters:
        raise InvalidArgument("at least one cluster is required")
    mu = code.mean[None, :]
    var = code.var[None, :]
    logits = np.zeros(len(clusters))
    for h, (mem, bias, w) in enumerate(clusters):
        _resid(code, mem, bias)
        m, S = _weight_arrays([w], mem.rows)
        E2 = _core.second_moment(m, S)
        mu_b = None if bias is None else bias.mean
        Sig_b = None if bias is None else bias.cov
        kl = _core.cluster_code_kl(mem.R, mem.U, mu_b, Sig_b, m, E2, mu, var, sigma_z2, code.observed)
        logits[h] = -kl[0] - _core.weight_kl(m, S)[0]
    return OneHotCategorical(_core.normalize(np.exp(logits - logits.max())))
