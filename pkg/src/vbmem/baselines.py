"""Least-squares memory writers used as comparison opponents.

Both writers are reconstructions in the spirit of the Dynamic Kanerva
Machine's write rule.  Addresses are regularized least-squares point
solutions against the current memory mean, and memory is then updated
conjugately.  Results carry the provenance tag ``baseline-reconstruction``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import _core
from .distributions import spd_inverse
from .engine import InferenceResult
from .episodes import Episode, stack_codes
from .errors import InvalidArgument
from .models import ModelSpec, Variant

PROVENANCE = "baseline-reconstruction"


class BaselineKind(str, enum.Enum):
    ONLINE = "OnlineNonIterative"
    BATCHED = "BatchedIterative"


@dataclass(frozen=True)
class BaselineConfig:
    kind: BaselineKind = BaselineKind.ONLINE
    iterations: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kind", BaselineKind(self.kind))
        if self.iterations < 1:
            raise InvalidArgument("iterations must be at least 1")


def least_squares_addresses(R: np.ndarray, mu_z: np.ndarray, sigma_z2: float):
    """w_t = (I + R R^T / s2)^-1 R mu_z / s2, with that inverse as covariance.

    At s2 = 1 this is the ridge solution (R R^T + I)^-1 R mu_z.  Unlike the
    variational update it ignores the memory's uncertainty U.
    """
    K = R.shape[0]
    Sig = spd_inverse(np.eye(K) + R @ R.T / sigma_z2, "least-squares precision")
    return (mu_z @ R.T) @ Sig / sigma_z2, Sig


def baseline_write(spec: ModelSpec, episode, config: BaselineConfig | None = None,
                   rng: np.random.Generator | None = None) -> InferenceResult:
    """Write an episode with a least-squares baseline; the result is scored on the shared ELBO.

    ``rng`` is accepted for interface symmetry; both writers are deterministic.
    """
    config = config or BaselineConfig()
    if spec.variant is not Variant.GAUSSIAN:
        raise InvalidArgument("baselines support the Gaussian-address variant only")
    codes = list(episode.codes) if isinstance(episode, Episode) else list(episode)
    T = len(codes)
    if T:
        mu, var, observed = stack_codes(codes)
        if mu.shape[1] != spec.C:
            raise InvalidArgument(f"code dimension {mu.shape[1]} does not match C={spec.C}")
    else:
        mu, var, observed = np.zeros((0, spec.C)), np.zeros((0, spec.C)), True

    prior = _core.PriorArrays.from_spec(spec)
    part = _core.prior_parts(spec, T)[0]
    resp = np.ones(T)

    def elbo():
        c, a, m = _core.elbo_terms([part], prior, spec, mu, var, observed)
        return -c - a - m

    trace = [elbo()]
    if config.kind is BaselineKind.ONLINE:
        for t in range(T):
            m_t, Sig = least_squares_addresses(part.R[0], mu[t:t + 1], spec.sigma_z2)
            part.m[t, 0] = m_t[0]
            part.S[t, 0] = Sig
            E2 = _core.second_moment(part.m[t:t + 1, 0], part.S[t:t + 1, 0])
            # single-timestep conjugate update, current posterior acting as prior
            R, U = _core.memory_posterior(part.m[t:t + 1, 0], E2, resp[t:t + 1], mu[t:t + 1],
                                          part.R[0].copy(), spd_inverse(part.U[0], "memory row covariance"),
                                          spec.sigma_z2)
            part.R[0], part.U[0] = R, U
            trace.append(elbo())
    else:
        for _ in range(config.iterations):
            m_all, Sig = least_squares_addresses(part.R[0], mu, spec.sigma_z2)
            part.m[:, 0] = m_all
            part.S[:, 0] = Sig
            E2 = _core.second_moment(part.m[:, 0], part.S[:, 0])
            R, U = _core.memory_posterior(part.m[:, 0], E2, resp, mu, prior.R0, prior.U0inv, spec.sigma_z2)
            part.R[0], part.U[0] = R, U
            trace.append(elbo())

    memory, addresses = _core.parts_to_public(spec, [part])
    return InferenceResult(memory, addresses, trace, PROVENANCE)
