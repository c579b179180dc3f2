"""Reading from a written memory: direct ancestral sampling and iterative reading.

Both procedures work on codes.  A decoder hook maps each sampled code to
an observation; the default is the identity.  An encoder hook maps an
observation back to a code posterior; the default wraps it as an observed
code.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import _core
from .episodes import CodePosterior
from .errors import InvalidArgument
from .models import MemoryState, ModelSpec, Variant

DecoderHook = Callable[[np.ndarray], object]
EncoderHook = Callable[[object], CodePosterior]


def identity_decoder(z: np.ndarray) -> np.ndarray:
    return z


def observed_encoder(x) -> CodePosterior:
    return CodePosterior.observed_code(np.asarray(x, dtype=np.float64))


def _check_memory(spec: ModelSpec, memory: MemoryState):
    memory.check_against(spec)
    if spec.variant is Variant.TREE and not memory.pseudocounts:
        raise InvalidArgument("tree generation needs a non-empty pseudocount table")


def _sample_global(memory: MemoryState, g: int, h: int, rng):
    M = memory.memory[g][h].sample(rng)
    b = None
    if memory.bias is not None:
        q_b = memory.bias[g][h]
        b = q_b.mean + np.linalg.cholesky(q_b.cov) @ rng.standard_normal(q_b.dim)
    return M, b


def _emit(M, b, w, sigma2, rng):
    z = M.T @ w + np.sqrt(sigma2) * rng.standard_normal(M.shape[1])
    return z if b is None else z + b


def _prior_weight(spec: ModelSpec, rng):
    if spec.variant.categorical_weights:
        return np.eye(spec.K)[rng.integers(spec.K)]
    return rng.standard_normal(spec.K)


def generate_direct(spec: ModelSpec, memory: MemoryState, n: int, rng: np.random.Generator,
                    decoder: DecoderHook = identity_decoder) -> list:
    """Ancestral samples: Omega ~ q(Omega), assignments and weights from their priors, z, then decode.

    Mixture assignments are uniform.  Tree assignments follow the
    autoregressive pseudocount distribution tallied during writing.
    """
    _check_memory(spec, memory)
    if n < 0:
        raise InvalidArgument("n must be non-negative")
    out = []
    for _ in range(n):
        if spec.variant is Variant.TREE:
            s = memory.pseudocounts.sample(rng)
        else:
            s = tuple(int(rng.integers(spec.H)) for _ in range(spec.G))
        z = np.empty(spec.C)
        for g, h in enumerate(s):
            M, b = _sample_global(memory, g, h, rng)
            z[spec.partition_slice(g)] = _emit(M, b, _prior_weight(spec, rng), spec.sigma_z2, rng)
        out.append(decoder(z))
    return out


def infer_local(spec: ModelSpec, memory: MemoryState, code: CodePosterior):
    """Optimal q(s) and q(w | s) for one code with q(Omega) held fixed, as working arrays."""
    if code.dim != spec.C:
        raise InvalidArgument("code dimension does not match the spec")
    prior = _core.PriorArrays.from_spec(spec)
    base = _core.parts_from_public(spec, memory, [])
    parts = []
    for g, p in enumerate(base):
        sl = spec.partition_slice(g)
        local = _core.prior_parts(spec, 1)[0]
        local.R, local.U, local.mu_b, local.Sig_b = p.R, p.U, p.mu_b, p.Sig_b
        mu, var = code.mean[None, sl], code.var[None, sl]
        _core.w_step(local, prior, mu)
        _core.s_step(local, prior, mu, var, code.observed)
        parts.append(local)
    return parts


def generate_iterative(spec: ModelSpec, memory: MemoryState, steps: int, rng: np.random.Generator,
                       decoder: DecoderHook = identity_decoder, encoder: EncoderHook = observed_encoder,
                       initial=None) -> list:
    """Iterative reading: encode, infer local latents, resample from memory, decode; repeat.

    The chain starts from ``initial`` or, if absent, from one direct sample.
    Omega is resampled from q(Omega) at every step.
    """
    _check_memory(spec, memory)
    if steps < 1:
        raise InvalidArgument("steps must be at least 1")
    x = generate_direct(spec, memory, 1, rng, decoder)[0] if initial is None else initial
    out = []
    for _ in range(steps):
        parts = infer_local(spec, memory, encoder(x))
        z = np.empty(spec.C)
        for g, p in enumerate(parts):
            h = int(rng.choice(spec.H, p=p.theta[0]))
            M, b = _sample_global(memory, g, h, rng)
            if p.S is None:
                w = np.eye(spec.K)[rng.choice(spec.K, p=p.m[0, h])]
            else:
                w = p.m[0, h] + np.linalg.cholesky(p.S[0, h]) @ rng.standard_normal(spec.K)
            z[spec.partition_slice(g)] = _emit(M, b, w, spec.sigma_z2, rng)
        x = decoder(z)
        out.append(x)
    return out


def resize_memory(spec_old: ModelSpec, spec_new: ModelSpec) -> ModelSpec:
    """Validate a change of cluster count.

    Nothing in the model depends parametrically on H, so resizing amounts
    to writing the episode again with the new spec.
    """
    for name in ("variant", "K", "C", "G", "sigma_z2"):
        if getattr(spec_old, name) != getattr(spec_new, name):
            raise InvalidArgument(f"resizing may only change H; {name} differs")
    for name in ("R0", "U0", "mu_b0", "Sigma_b0"):
        a, b = getattr(spec_old, name), getattr(spec_new, name)
        if (a is None) != (b is None) or (a is not None and not np.array_equal(a, b)):
            raise InvalidArgument(f"resizing may only change H; {name} differs")
    return spec_new
