"""Episodes of code posteriors, the linear-Gaussian episode generator, and JSON I/O."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    InvalidArgument,
    MixedObservationError,
    NegativeVarianceError,
    NonUniformDimensionError,
    SchemaError,
)


@dataclass(frozen=True, eq=False)
class CodePosterior:
    """Diagonal Gaussian q(z_t); ``var`` is all zeros for an observed code."""

    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=np.float64, copy=True)
        var = np.array(self.var, dtype=np.float64, copy=True)
        if mean.ndim != 1 or var.shape != mean.shape:
            raise InvalidArgument("code mean and var must be vectors of equal length")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(var))):
            raise InvalidArgument("code posterior has non-finite entries")
        if np.any(var < 0):
            raise NegativeVarianceError("code variances must be non-negative")
        mean.setflags(write=False)
        var.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "var", var)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def observed(self) -> bool:
        return not np.any(self.var)

    @classmethod
    def observed_code(cls, z) -> "CodePosterior":
        z = np.asarray(z, dtype=np.float64)
        return cls(z, np.zeros_like(z))


def stack_codes(codes) -> tuple[np.ndarray, np.ndarray, bool]:
    """Stack codes into (T, C) mean and variance arrays and report observed mode.

    Raises if the codes have different dimensions or mix observed and latent
    codes.  An empty list yields arrays of shape (0, 0).
    """
    codes = list(codes)
    if not codes:
        return np.zeros((0, 0)), np.zeros((0, 0)), True
    dims = {c.dim for c in codes}
    if len(dims) != 1:
        raise NonUniformDimensionError(f"codes have differing dimensions {sorted(dims)}")
    flags = {c.observed for c in codes}
    if len(flags) != 1:
        raise MixedObservationError("episode mixes observed and latent codes")
    mu = np.stack([c.mean for c in codes])
    var = np.stack([c.var for c in codes])
    return mu, var, flags.pop()


@dataclass(frozen=True, eq=False)
class Episode:
    codes: tuple
    observed: bool
    provenance: str = ""

    def __post_init__(self):
        codes = tuple(self.codes)
        if not codes:
            raise InvalidArgument("an episode needs at least one code")
        _, _, observed = stack_codes(codes)
        if bool(self.observed) != observed:
            raise MixedObservationError("observed flag does not match code variances")
        object.__setattr__(self, "codes", codes)
        object.__setattr__(self, "observed", bool(self.observed))

    @property
    def T(self) -> int:
        return len(self.codes)

    @property
    def C(self) -> int:
        return self.codes[0].dim

    def to_dict(self) -> dict:
        return {
            "observed": self.observed,
            "codes": [{"mean": c.mean.tolist(), "var": c.var.tolist()} for c in self.codes],
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, d) -> "Episode":
        if not isinstance(d, dict):
            raise SchemaError("episode document must be a JSON object")
        for key in ("codes", "observed"):
            if key not in d:
                raise SchemaError(f"episode is missing required key {key!r}")
        if not isinstance(d["codes"], list):
            raise SchemaError("'codes' must be a list")
        codes = []
        for i, c in enumerate(d["codes"]):
            if not isinstance(c, dict) or "mean" not in c or "var" not in c:
                raise SchemaError(f"code {i} must have 'mean' and 'var'")
            mean = np.asarray(c["mean"], dtype=np.float64)
            var = np.asarray(c["var"], dtype=np.float64)
            if mean.ndim != 1 or var.shape != mean.shape:
                raise SchemaError(f"code {i} has mismatched mean/var")
            codes.append(CodePosterior(mean, var))
        if len({c.dim for c in codes}) > 1:
            raise NonUniformDimensionError("codes have differing dimensions")
        return cls(codes, bool(d["observed"]), str(d.get("provenance", "")))


def save_episode(episode: Episode, path) -> None:
    # json writes floats with repr, which round-trips float64 exactly
    Path(path).write_text(json.dumps(episode.to_dict()), encoding="utf-8")


def load_episode(path) -> Episode:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"episode file is not valid JSON: {exc}") from exc
    return Episode.from_dict(doc)


@dataclass(frozen=True)
class SynthConfig:
    T: int = 32
    K: int = 32
    C: int = 50
    sigma_z2: float = 1.0
    R0_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for name in ("T", "K", "C"):
            if getattr(self, name) < 1:
                raise InvalidArgument(f"{name} must be positive")
        if not self.sigma_z2 > 0:
            raise InvalidArgument("sigma_z2 must be positive")
        if self.R0_scale < 0:
            raise InvalidArgument("R0_scale must be non-negative")


@dataclass(frozen=True, eq=False)
class GroundTruth:
    R0: np.ndarray
    M: np.ndarray
    w: np.ndarray  # (T, K)


def generate_synthetic_episode(cfg: SynthConfig, rng: np.random.Generator) -> tuple[Episode, GroundTruth]:
    """Ancestral sample from the linear Gaussian model with U0 = I.

    M is drawn once per episode, then each timestep draws w_t ~ N(0, I_K) and
    z_t ~ N(M^T w_t, sigma_z2 I_C).  The codes are returned as observed.
    """
    R0 = cfg.R0_scale * rng.standard_normal((cfg.K, cfg.C))
    M = R0 + rng.standard_normal((cfg.K, cfg.C))
    w = rng.standard_normal((cfg.T, cfg.K))
    z = w @ M + np.sqrt(cfg.sigma_z2) * rng.standard_normal((cfg.T, cfg.C))
    codes = [CodePosterior.observed_code(row) for row in z]
    episode = Episode(codes, True, f"synthetic-linear-gaussian seed={cfg.seed}")
    return episode, GroundTruth(R0, M, w)
