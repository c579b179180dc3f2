"""Gaussian, matrix-normal and one-hot categorical distributions.

All distributions here are immutable value objects backed by float64 numpy
arrays.  Matrix-normal distributions always carry an identity column
covariance, so only the mean ``R`` (K x C) and row covariance ``U`` (K x K)
are stored.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import InvalidArgument

__all__ = [
    "MatrixNormalDist",
    "DiagGaussian",
    "FullGaussian",
    "OneHotCategorical",
    "cholesky",
    "logdet",
    "spd_inverse",
    "kl_matrix_normal",
    "kl_full_gaussian",
    "kl_categorical",
    "reparam_sample_matrix_normal",
    "expect_quadratic_form",
]

JITTER = 1e-9


def _frozen(a, ndim: int, name: str) -> np.ndarray:
    arr = np.array(a, dtype=np.float64, copy=True)
    if arr.ndim != ndim:
        raise InvalidArgument(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgument(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


def cholesky(a: np.ndarray, name: str = "matrix") -> np.ndarray:
    """Lower Cholesky factor of ``a``; raises InvalidArgument if not PD.

    No jitter is added.  Callers that need regularization should add
    ``JITTER * I`` themselves.
    """
    try:
        return linalg.cholesky(a, lower=True)
    except linalg.LinAlgError as exc:
        raise InvalidArgument(f"{name} is not positive definite") from exc


def logdet(a: np.ndarray, name: str = "matrix") -> float:
    L = cholesky(a, name)
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def spd_inverse(a: np.ndarray, name: str = "matrix") -> np.ndarray:
    """Inverse of a symmetric PD matrix via Cholesky.  Result is exactly symmetric."""
    L = cholesky(a, name)
    Linv = linalg.solve_triangular(L, np.eye(a.shape[0]), lower=True)
    return Linv.T @ Linv


@dataclass(frozen=True, eq=False)
class MatrixNormalDist:
    """Matrix-variate Gaussian MN(R, U, I_C) over K x C matrices."""

    R: np.ndarray
    U: np.ndarray

    def __post_init__(self):
        R = _frozen(self.R, 2, "R")
        U = _frozen(self.U, 2, "U")
        if U.shape != (R.shape[0], R.shape[0]):
            raise InvalidArgument(f"row covariance shape {U.shape} does not match mean shape {R.shape}")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "U", U)

    @property
    def rows(self) -> int:
        return self.R.shape[0]

    @property
    def cols(self) -> int:
        return self.R.shape[1]

    def vectorized(self) -> "FullGaussian":
        """Equivalent Gaussian over column-stacked vec(M), covariance I_C kron U."""
        return FullGaussian(self.R.flatten(order="F"), np.kron(np.eye(self.cols), self.U))

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return reparam_sample_matrix_normal(self, rng.standard_normal(self.R.shape))


@dataclass(frozen=True, eq=False)
class DiagGaussian:
    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        mean = _frozen(self.mean, 1, "mean")
        var = _frozen(self.var, 1, "var")
        if var.shape != mean.shape:
            raise InvalidArgument("mean and var must have the same length")
        if np.any(var < 0):
            raise InvalidArgument("variances must be non-negative")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "var", var)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True, eq=False)
class FullGaussian:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = _frozen(self.mean, 1, "mean")
        cov = _frozen(self.cov, 2, "cov")
        if cov.shape != (mean.shape[0], mean.shape[0]):
            raise InvalidArgument(f"covariance shape {cov.shape} does not match mean length {mean.shape[0]}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def second_moment(self) -> np.ndarray:
        return self.cov + np.outer(self.mean, self.mean)

    @classmethod
    def standard(cls, dim: int) -> "FullGaussian":
        return cls(np.zeros(dim), np.eye(dim))


@dataclass(frozen=True, eq=False)
class OneHotCategorical:
    """Categorical distribution over the standard basis vectors of R^dim."""

    probs: np.ndarray

    def __post_init__(self):
        p = _frozen(self.probs, 1, "probs")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise InvalidArgument("probs must lie on the simplex")
        object.__setattr__(self, "probs", p)

    @property
    def dim(self) -> int:
        return self.probs.shape[0]

    @property
    def mean(self) -> np.ndarray:
        return self.probs

    @property
    def cov(self) -> np.ndarray:
        return np.diag(self.probs) - np.outer(self.probs, self.probs)

    @property
    def second_moment(self) -> np.ndarray:
        return np.diag(self.probs)

    @classmethod
    def uniform(cls, dim: int) -> "OneHotCategorical":
        return cls(np.full(dim, 1.0 / dim))


def kl_matrix_normal(q: MatrixNormalDist, p: MatrixNormalDist) -> float:
    """KL(q || p) for matrix normals sharing the identity column covariance."""
    if q.R.shape != p.R.shape:
        raise InvalidArgument(f"shape mismatch: {q.R.shape} vs {p.R.shape}")
    K, C = q.R.shape
    L0 = cholesky(p.U, "prior row covariance")
    ld_q = logdet(q.U, "posterior row covariance")
    ld_p = 2.0 * np.sum(np.log(np.diag(L0)))
    # tr(U0^-1 Uq) and tr(D^T U0^-1 D) through triangular solves
    A = linalg.solve_triangular(L0, q.U, lower=True)
    tr_term = np.trace(linalg.solve_triangular(L0, A.T, lower=True))
    D = linalg.solve_triangular(L0, q.R - p.R, lower=True)
    maha = float(np.sum(D * D))
    return 0.5 * (C * tr_term + maha - K * C - C * ld_q + C * ld_p)


def kl_full_gaussian(q: FullGaussian, p: FullGaussian) -> float:
    if q.dim != p.dim:
        raise InvalidArgument(f"dimension mismatch: {q.dim} vs {p.dim}")
    L0 = cholesky(p.cov, "prior covariance")
    ld_q = logdet(q.cov, "posterior covariance")
    ld_p = 2.0 * np.sum(np.log(np.diag(L0)))
    A = linalg.solve_triangular(L0, q.cov, lower=True)
    tr_term = np.trace(linalg.solve_triangular(L0, A.T, lower=True))
    d = linalg.solve_triangular(L0, q.mean - p.mean, lower=True)
    return 0.5 * (tr_term + float(d @ d) - q.dim - ld_q + ld_p)


def kl_categorical(q: OneHotCategorical, p: OneHotCategorical) -> float:
    if q.dim != p.dim:
        raise InvalidArgument(f"dimension mismatch: {q.dim} vs {p.dim}")
    mask = q.probs > 0
    if np.any(p.probs[mask] == 0):
        raise InvalidArgument("KL divergence is infinite: p is zero where q is positive")
    return float(np.sum(q.probs[mask] * (np.log(q.probs[mask]) - np.log(p.probs[mask]))))


def reparam_sample_matrix_normal(d: MatrixNormalDist, noise: np.ndarray) -> np.ndarray:
    """Map standard-normal noise E (K x C) to R + chol(U) E."""
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != d.R.shape:
        raise InvalidArgument(f"noise shape {noise.shape} does not match {d.R.shape}")
    return d.R + cholesky(d.U, "row covariance") @ noise


def expect_quadratic_form(dist: FullGaussian | OneHotCategorical, A) -> float:
    """E[w^T A w] = tr(A Sigma) + mu^T A mu, for any distribution with finite second moments."""
    A = np.asarray(A, dtype=np.float64)
    if A.shape != (dist.dim, dist.dim):
        raise InvalidArgument(f"matrix shape {A.shape} does not match dimension {dist.dim}")
    return float(np.sum(A * dist.second_moment))
