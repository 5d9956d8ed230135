"""Analytic classifiers: weighted ridge regression kept in closed form.

A classifier never stores training data. Everything it knows lives in the
memory bank ``{P, Q}``::

    P = sum_k w_k x_k^T x_k + gamma I      (phi x phi)
    Q = sum_k w_k x_k^T y_k                (phi x C)

and its weights are ``W = P^{-1} Q``, obtained through a Cholesky solve.
Source samples carry class-balancing weights; target samples carry weight
one. Because both matrices are plain sums, folding new samples in one at a
time or all at once yields the same ``W`` as solving the joint problem over
everything seen so far.
"""

import struct
from dataclasses import dataclass

import numpy as np

from . import linalg
from .errors import CorruptSnapshot, DimensionMismatch, EmptyClass, InvalidSpec
from .expansion import Branch

BANK_MAGIC = b"MDAB"
BANK_VERSION = 1
_BANK_HEADER = struct.Struct("<4sHIId")


@dataclass(frozen=True)
class ClassWeights:
    """Per-class balancing weights ``N / (C * N_c)``."""

    per_class: np.ndarray
    n_source: int
    n_classes: int
    counts: np.ndarray

    def for_labels(self, labels) -> np.ndarray:
        return self.per_class[np.asarray(labels, dtype=np.int64)]


def compute_class_weights(labels, num_classes: int) -> ClassWeights:
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if num_classes < 1:
        raise InvalidSpec("num_classes must be >= 1")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise InvalidSpec(f"labels must lie in [0, {num_classes})")
    counts = np.bincount(labels, minlength=num_classes)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise EmptyClass(int(empty[0]))
    n = int(labels.size)
    per_class = n / (num_classes * counts.astype(np.float64))
    return ClassWeights(per_class, n, num_classes, counts)


def one_hot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64).ravel()
    out = np.zeros((labels.size, num_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


@dataclass
class MemoryBank:
    P: np.ndarray
    Q: np.ndarray
    gamma: float
    num_classes: int

    @property
    def dim(self) -> int:
        return self.P.shape[0]

    @classmethod
    def empty(cls, dim: int, num_classes: int, gamma: float) -> "MemoryBank":
        if not (np.isfinite(gamma) and gamma > 0):
            raise InvalidSpec(f"gamma must be positive, got {gamma}")
        return cls(gamma * np.eye(dim), np.zeros((dim, num_classes)), float(gamma), num_classes)

    def copy(self) -> "MemoryBank":
        return MemoryBank(self.P.copy(), self.Q.copy(), self.gamma, self.num_classes)

    def to_bytes(self) -> bytes:
        header = _BANK_HEADER.pack(
            BANK_MAGIC, BANK_VERSION, self.dim, self.num_classes, self.gamma
        )
        return (
            header
            + np.ascontiguousarray(self.P, dtype="<f8").tobytes()
            + np.ascontiguousarray(self.Q, dtype="<f8").tobytes()
        )

    @classmethod
    def from_bytes(cls, blob: bytes, offset: int = 0) -> tuple["MemoryBank", int]:
        """Parse a bank starting at ``offset``; return it and the end offset."""
        if len(blob) - offset < _BANK_HEADER.size:
            raise CorruptSnapshot("memory bank header truncated")
        magic, version, dim, n_classes, gamma = _BANK_HEADER.unpack_from(blob, offset)
        if magic != BANK_MAGIC:
            raise CorruptSnapshot(f"bad memory bank magic {magic!r}")
        if version != BANK_VERSION:
            raise CorruptSnapshot(f"unsupported memory bank version {version}")
        offset += _BANK_HEADER.size
        n_p, n_q = dim * dim, dim * n_classes
        end = offset + 8 * (n_p + n_q)
        if len(blob) < end:
            raise CorruptSnapshot("memory bank payload truncated")
        values = np.frombuffer(blob, dtype="<f8", count=n_p + n_q, offset=offset)
        P = values[:n_p].reshape(dim, dim).astype(np.float64)
        Q = values[n_p:].reshape(dim, n_classes).astype(np.float64)
        return cls(P, Q, float(gamma), int(n_classes)), end


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=-1, keepdims=True)
    return z


class AnalyticClassifier:
    """One linear head whose weights are always the closed-form ridge solution.

    Updates only touch the memory bank and mark the cached weights stale; the
    Cholesky solve happens the next time weights are read.
    """

    def __init__(self, bank: MemoryBank, branch: Branch = Branch.FUSED):
        self.bank = bank
        self.branch = Branch.parse(branch)
        self._weights: np.ndarray | None = None

    @property
    def dirty(self) -> bool:
        return self._weights is None

    @property
    def dim(self) -> int:
        return self.bank.dim

    @property
    def num_classes(self) -> int:
        return self.bank.num_classes

    @property
    def weights(self) -> np.ndarray:
        if self._weights is None:
            factor = linalg.spd_factorize(self.bank.P)
            self._weights = linalg.spd_solve(factor, self.bank.Q)
        return self._weights

    def copy(self) -> "AnalyticClassifier":
        twin = AnalyticClassifier(self.bank.copy(), self.branch)
        if self._weights is not None:
            twin._weights = self._weights.copy()
        return twin

    def adapt(self, features, pseudo_labels) -> "AnalyticClassifier":
        """Fold a target batch into the memory bank (unit sample weights)."""
        x = np.asarray(features, dtype=np.float64)
        y = np.asarray(pseudo_labels, dtype=np.float64)
        if x.ndim != 2 or y.ndim != 2 or x.shape[0] != y.shape[0]:
            raise DimensionMismatch(
                f"features {x.shape} and pseudo-labels {y.shape} do not pair up"
            )
        if x.shape[1] != self.dim or y.shape[1] != self.num_classes:
            raise DimensionMismatch(
                f"expected ({self.dim}, {self.num_classes}) columns, "
                f"got ({x.shape[1]}, {y.shape[1]})"
            )
        if x.shape[0] == 0:
            return self
        self.bank.P = linalg.rank_k_update(self.bank.P, x)
        self.bank.Q = linalg.cross_update(self.bank.Q, x, y)
        self._weights = None
        return self

    def logits(self, features) -> np.ndarray:
        x = np.asarray(features, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise DimensionMismatch(f"expected rows of length {self.dim}, got {x.shape}")
        return x @ self.weights

    def probs(self, features) -> np.ndarray:
        return softmax(self.logits(features))


def init_source(
    features,
    labels,
    weights: ClassWeights | None,
    gamma: float,
    branch: Branch = Branch.FUSED,
) -> AnalyticClassifier:
    """Build a classifier from labelled source data.

    Args:
        features: expanded source batch ``(N, phi)``.
        labels: one-hot label matrix ``(N, C)``.
        weights: class-balancing weights; ``None`` means every sample
            weighs one.
        gamma: ridge strength, must be positive.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2 or x.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"features {x.shape} and labels {y.shape} do not pair up")
    bank = MemoryBank.empty(x.shape[1], y.shape[1], gamma)
    if x.shape[0]:
        if weights is None:
            w = np.ones(x.shape[0])
        else:
            if weights.n_classes != y.shape[1]:
                raise DimensionMismatch("class weights and labels disagree on C")
            w = weights.for_labels(np.argmax(y, axis=1))
        bank.P = linalg.weighted_rank_k_update(bank.P, x, w)
        bank.Q = bank.Q + (x * w[:, None]).T @ y
    clf = AnalyticClassifier(bank, branch)
    clf.weights  # fail fast on a non-PD bank
    return clf


def adapt(ac: AnalyticClassifier, features, pseudo_labels) -> AnalyticClassifier:
    return ac.adapt(features, pseudo_labels)


def predict_logits(ac: AnalyticClassifier, features) -> np.ndarray:
    return ac.logits(features)


def predict_probs(ac: AnalyticClassifier, features) -> np.ndarray:
    return ac.probs(features)
