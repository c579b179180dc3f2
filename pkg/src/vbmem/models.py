"""Model specifications, episode-level memory state and address posteriors.

Five generative variants share one structure: G independent partitions of
the code, each holding H clusters with a K-row memory matrix and (for the
mean-shifted family) a location vector.  The plain Gaussian and categorical
address models are the H = G = 1 case without locations.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .distributions import (
    FullGaussian,
    MatrixNormalDist,
    OneHotCategorical,
    cholesky,
)
from .errors import InvalidArgument, SchemaError


class Variant(str, enum.Enum):
    GAUSSIAN = "GaussianAddress"
    CATEGORICAL = "CategoricalAddress"
    MEAN_SHIFTED = "MeanShifted"
    MIXTURE = "Mixture"
    TREE = "Tree"

    @property
    def has_bias(self) -> bool:
        return self in (Variant.MEAN_SHIFTED, Variant.MIXTURE, Variant.TREE)

    @property
    def categorical_weights(self) -> bool:
        return self is Variant.CATEGORICAL


CLI_NAMES = {
    "gaussian": Variant.GAUSSIAN,
    "categorical": Variant.CATEGORICAL,
    "mean-shifted": Variant.MEAN_SHIFTED,
    "mixture": Variant.MIXTURE,
    "tree": Variant.TREE,
}


def _readonly(a, ndim, name):
    arr = np.array(a, dtype=np.float64, copy=True)
    if arr.ndim != ndim:
        raise InvalidArgument(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """A generative-model variant plus all prior hyperparameters.

    ``R0``/``U0`` describe the prior of every memory matrix; for the tree
    variant they have C/G columns and are shared by all partitions.  The
    location prior ``mu_b0``/``Sigma_b0`` is only used by mean-shifted
    variants; the tree variant pins it to (0, I).
    """

    variant: Variant
    K: int
    C: int
    H: int = 1
    G: int = 1
    sigma_z2: float = 1.0
    R0: np.ndarray | None = None
    U0: np.ndarray | None = None
    mu_b0: np.ndarray | None = None
    Sigma_b0: np.ndarray | None = None

    def __post_init__(self):
        variant = Variant(self.variant)
        object.__setattr__(self, "variant", variant)
        for name in ("K", "C", "H", "G"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise InvalidArgument(f"{name} must be a positive integer, got {v}")
            object.__setattr__(self, name, int(v))
        if not self.sigma_z2 > 0 or not np.isfinite(self.sigma_z2):
            raise InvalidArgument("sigma_z2 must be positive")
        object.__setattr__(self, "sigma_z2", float(self.sigma_z2))
        if self.C % self.G:
            raise InvalidArgument(f"G={self.G} must divide C={self.C}")
        if variant not in (Variant.MIXTURE, Variant.TREE) and self.H != 1:
            raise InvalidArgument(f"{variant.value} requires H=1")
        if variant is not Variant.TREE and self.G != 1:
            raise InvalidArgument(f"{variant.value} requires G=1")

        Cg = self.C // self.G
        R0 = np.zeros((self.K, Cg)) if self.R0 is None else self.R0
        U0 = np.eye(self.K) if self.U0 is None else self.U0
        R0 = _readonly(R0, 2, "R0")
        U0 = _readonly(U0, 2, "U0")
        if R0.shape != (self.K, Cg):
            raise InvalidArgument(f"R0 must have shape {(self.K, Cg)}, got {R0.shape}")
        if U0.shape != (self.K, self.K):
            raise InvalidArgument(f"U0 must have shape {(self.K, self.K)}, got {U0.shape}")
        cholesky(U0, "U0")
        object.__setattr__(self, "R0", R0)
        object.__setattr__(self, "U0", U0)

        if variant is Variant.TREE:
            if self.mu_b0 is not None and np.any(np.asarray(self.mu_b0) != 0):
                raise InvalidArgument("the tree variant fixes mu_b0 = 0")
            if self.Sigma_b0 is not None and not np.array_equal(np.asarray(self.Sigma_b0), np.eye(Cg)):
                raise InvalidArgument("the tree variant fixes Sigma_b0 = I")
            mu_b0, Sigma_b0 = np.zeros(Cg), np.eye(Cg)
        elif variant.has_bias:
            mu_b0 = np.zeros(Cg) if self.mu_b0 is None else self.mu_b0
            Sigma_b0 = np.eye(Cg) if self.Sigma_b0 is None else self.Sigma_b0
        else:
            mu_b0 = Sigma_b0 = None
        if mu_b0 is not None:
            mu_b0 = _readonly(mu_b0, 1, "mu_b0")
            Sigma_b0 = _readonly(Sigma_b0, 2, "Sigma_b0")
            if mu_b0.shape != (Cg,) or Sigma_b0.shape != (Cg, Cg):
                raise InvalidArgument("location prior does not match the code dimension")
            cholesky(Sigma_b0, "Sigma_b0")
        object.__setattr__(self, "mu_b0", mu_b0)
        object.__setattr__(self, "Sigma_b0", Sigma_b0)

    @property
    def partition_width(self) -> int:
        return self.C // self.G

    def partition_slice(self, g: int) -> slice:
        w = self.partition_width
        return slice(g * w, (g + 1) * w)

    def with_clusters(self, H: int) -> "ModelSpec":
        return replace(self, H=H)

    def to_dict(self) -> dict:
        d = {
            "variant": self.variant.value,
            "K": self.K,
            "C": self.C,
            "H": self.H,
            "G": self.G,
            "sigma_z2": self.sigma_z2,
            "R0": self.R0.tolist(),
            "U0": self.U0.tolist(),
            "mu_b0": None if self.mu_b0 is None else self.mu_b0.tolist(),
            "Sigma_b0": None if self.Sigma_b0 is None else self.Sigma_b0.tolist(),
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        for key in ("variant", "K", "C"):
            if key not in d:
                raise SchemaError(f"model spec is missing required field {key!r}")
        known = {"variant", "K", "C", "H", "G", "sigma_z2", "R0", "U0", "mu_b0", "Sigma_b0"}
        unknown = set(d) - known
        if unknown:
            raise SchemaError(f"unknown model spec fields: {sorted(unknown)}")
        try:
            variant = Variant(d["variant"])
        except ValueError as exc:
            raise SchemaError(f"unknown variant {d['variant']!r}") from exc
        kwargs = {k: v for k, v in d.items() if k != "variant" and v is not None}
        return cls(variant=variant, **kwargs)


@dataclass(frozen=True, eq=False)
class AddressBlock:
    """q(s) over H clusters and q(w | s = h) for every h, for one partition."""

    assignment: OneHotCategorical
    weights: tuple  # of FullGaussian or OneHotCategorical, one per cluster

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(self.weights))
        if len(self.weights) != self.assignment.dim:
            raise InvalidArgument("one weight posterior per cluster is required")


@dataclass(frozen=True, eq=False)
class AddressPosterior:
    """Variational posterior over the addressing variables of one timestep."""

    blocks: tuple

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))

    @property
    def w(self):
        """The single weight posterior of an H = G = 1 model."""
        if len(self.blocks) != 1 or len(self.blocks[0].weights) != 1:
            raise InvalidArgument("address posterior has more than one weight block")
        return self.blocks[0].weights[0]

    @property
    def s(self) -> OneHotCategorical:
        if len(self.blocks) != 1:
            raise InvalidArgument("address posterior has more than one partition")
        return self.blocks[0].assignment


@dataclass
class PseudocountTable:
    """Counts of hard cluster assignments conditioned on assignment prefixes.

    ``counts[prefix]`` is a length-H vector counting how often partition
    ``len(prefix)`` was assigned to each cluster after the earlier
    partitions were assigned ``prefix``.
    """

    H: int
    G: int
    counts: dict = field(default_factory=dict)

    @classmethod
    def from_assignments(cls, assignments: np.ndarray, H: int) -> "PseudocountTable":
        assignments = np.asarray(assignments, dtype=int)
        G = assignments.shape[1]
        table = cls(H=H, G=G)
        for row in assignments:
            for g in range(G):
                prefix = tuple(int(a) for a in row[:g])
                vec = table.counts.setdefault(prefix, np.zeros(H))
                vec[row[g]] += 1
        return table

    def __len__(self):
        return len(self.counts)

    def probabilities(self, prefix: tuple) -> np.ndarray:
        """Laplace-smoothed next-assignment distribution (uniform for unseen prefixes)."""
        counts = self.counts.get(tuple(prefix), np.zeros(self.H))
        return (counts + 1.0) / (counts.sum() + self.H)

    def sample(self, rng: np.random.Generator) -> tuple:
        prefix = ()
        for _ in range(self.G):
            p = self.probabilities(prefix)
            prefix = prefix + (int(rng.choice(self.H, p=p)),)
        return prefix

    def to_list(self) -> list:
        return [{"prefix": list(k), "counts": v.tolist()} for k, v in sorted(self.counts.items())]

    @classmethod
    def from_list(cls, rows: list, H: int, G: int) -> "PseudocountTable":
        table = cls(H=H, G=G)
        for row in rows:
            table.counts[tuple(int(a) for a in row["prefix"])] = np.asarray(row["counts"], dtype=float)
        return table


@dataclass(frozen=True, eq=False)
class MemoryState:
    """q(Omega): per-partition, per-cluster memory and location posteriors."""

    variant: Variant
    memory: tuple  # [g][h] -> MatrixNormalDist
    bias: tuple | None = None  # [g][h] -> FullGaussian
    pseudocounts: PseudocountTable | None = None

    def __post_init__(self):
        object.__setattr__(self, "memory", tuple(tuple(row) for row in self.memory))
        if self.bias is not None:
            object.__setattr__(self, "bias", tuple(tuple(row) for row in self.bias))
            if [len(r) for r in self.bias] != [len(r) for r in self.memory]:
                raise InvalidArgument("bias and memory layouts differ")

    @property
    def G(self) -> int:
        return len(self.memory)

    @property
    def H(self) -> int:
        return len(self.memory[0])

    def check_against(self, spec: ModelSpec):
        if self.variant is not spec.variant:
            raise InvalidArgument(f"memory is for {self.variant.value}, spec is {spec.variant.value}")
        if self.G != spec.G or any(len(r) != spec.H for r in self.memory):
            raise InvalidArgument("memory layout does not match the model spec")
        for row in self.memory:
            for m in row:
                if m.R.shape != (spec.K, spec.partition_width):
                    raise InvalidArgument("memory matrix shape does not match the model spec")
        if spec.variant.has_bias != (self.bias is not None):
            raise InvalidArgument("location posteriors do not match the variant")


class Priors(NamedTuple):
    memory: MemoryState
    address: AddressPosterior


def build_priors(spec: ModelSpec) -> Priors:
    """p(Omega) in MemoryState form together with the per-timestep address prior."""
    prior_m = MatrixNormalDist(spec.R0, spec.U0)
    memory = [[prior_m] * spec.H for _ in range(spec.G)]
    bias = None
    if spec.variant.has_bias:
        prior_b = FullGaussian(spec.mu_b0, spec.Sigma_b0)
        bias = [[prior_b] * spec.H for _ in range(spec.G)]
    if spec.variant.categorical_weights:
        w_prior = OneHotCategorical.uniform(spec.K)
    else:
        w_prior = FullGaussian.standard(spec.K)
    block = AddressBlock(OneHotCategorical.uniform(spec.H), [w_prior] * spec.H)
    return Priors(
        MemoryState(spec.variant, memory, bias),
        AddressPosterior([block] * spec.G),
    )


def reduce_mixture_to_mean_shifted(spec: ModelSpec) -> ModelSpec:
    if spec.variant is not Variant.MIXTURE:
        raise InvalidArgument("only mixture specs can be reduced")
    if spec.H != 1:
        raise InvalidArgument(f"reduction requires H=1, got H={spec.H}")
    return replace(spec, variant=Variant.MEAN_SHIFTED)
