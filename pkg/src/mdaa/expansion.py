"""Frozen random-feature expansion feeding the analytic classifiers.

Each branch (audio, video, fused) owns one :class:`Expansion`: a seeded
Gaussian projection ``input_dim x phi`` followed by an elementwise
nonlinearity. The projection never changes after construction.
"""

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .errors import DimensionMismatch, InvalidSpec, NonFiniteInput


class Branch(IntEnum):
    AUDIO = 0
    VIDEO = 1
    FUSED = 2

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, value) -> "Branch":
        if isinstance(value, Branch):
            return value
        if isinstance(value, str):
            return cls[value.upper()]
        return cls(int(value))


# Leader-election tie-break order, most preferred first.
BRANCH_PRIORITY = (Branch.FUSED, Branch.VIDEO, Branch.AUDIO)


class Nonlinearity(IntEnum):
    RELU = 0
    IDENTITY = 1

    @classmethod
    def parse(cls, value) -> "Nonlinearity":
        if isinstance(value, Nonlinearity):
            return value
        if isinstance(value, str):
            return cls[value.upper()]
        return cls(int(value))


@dataclass(frozen=True)
class ExpansionSpec:
    input_dim: int
    expanded_dim: int = 512
    seed: int = 0
    nonlinearity: Nonlinearity = Nonlinearity.RELU
    scale: float = 1.0

    def validate(self) -> None:
        if self.input_dim < 1 or self.expanded_dim < 1:
            raise InvalidSpec(
                f"dimensions must be >= 1, got {self.input_dim}x{self.expanded_dim}"
            )
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise InvalidSpec(f"scale must be positive, got {self.scale}")
        if not 0 <= self.seed < 2**64:
            raise InvalidSpec("seed must fit in an unsigned 64-bit integer")
        Nonlinearity.parse(self.nonlinearity)


@dataclass(frozen=True)
class ExpandedFeature:
    values: np.ndarray
    modality_tag: Branch


class Expansion:
    """A frozen projection plus nonlinearity.

    ``projection`` may be passed explicitly (tests use this to pin the map);
    otherwise it is regenerated from ``spec.seed``.
    """

    def __init__(self, spec: ExpansionSpec, projection: np.ndarray | None = None):
        spec.validate()
        self.spec = spec
        self._custom = projection is not None
        if projection is None:
            rng = np.random.default_rng(spec.seed)
            projection = rng.standard_normal((spec.input_dim, spec.expanded_dim))
            projection *= spec.scale
        else:
            projection = np.array(projection, dtype=np.float64)
            if projection.shape != (spec.input_dim, spec.expanded_dim):
                raise DimensionMismatch(
                    f"projection shape {projection.shape} does not match spec"
                )
        projection.setflags(write=False)
        self._projection = projection
        self._relu = Nonlinearity.parse(spec.nonlinearity) is Nonlinearity.RELU

    @property
    def projection(self) -> np.ndarray:
        return self._projection

    @property
    def input_dim(self) -> int:
        return self.spec.input_dim

    @property
    def dim(self) -> int:
        return self.spec.expanded_dim

    def transform(self, x) -> np.ndarray:
        """Expand a batch ``(rows, input_dim)`` to ``(rows, phi)``."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise DimensionMismatch(
                f"expected rows of length {self.input_dim}, got shape {x.shape}"
            )
        if not np.all(np.isfinite(x)):
            raise NonFiniteInput("features contain NaN or Inf")
        out = x @ self._projection
        if self._relu:
            np.maximum(out, 0.0, out=out)
        return out


def build_expansion(spec: ExpansionSpec) -> Expansion:
    return Expansion(spec)


def expand(e: Expansion, x, tag: Branch | str = Branch.FUSED) -> ExpandedFeature:
    """Expand a single raw feature vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionMismatch("expand takes one vector; use Expansion.transform")
    return ExpandedFeature(e.transform(x[None, :])[0], Branch.parse(tag))
