"""Dynamic late fusion: leader election, soft pseudo-labels, update gating.

For each sample the classifier with the highest top-class probability (its
MAP score) is the leader. The leader's distribution supplies both the final
prediction and a sparse soft pseudo-label. Every classifier, the leader
included, is then gated independently: it learns from the sample only if the
leader's MAP beats its own by at least ``theta``.
"""

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import EmptyBatch, EmptyInput, InvalidN
from .expansion import BRANCH_PRIORITY, Branch


@dataclass(frozen=True)
class SoftLabel:
    positions: tuple[int, ...]
    weights: tuple[float, ...]

    @property
    def n(self) -> int:
        return len(self.positions)

    def dense(self, num_classes: int) -> np.ndarray:
        out = np.zeros(num_classes)
        out[list(self.positions)] = self.weights
        return out


@dataclass(frozen=True)
class GateDecision:
    ac_id: Branch
    leader_map: float
    ac_map: float
    accepted: bool


def rank_weights(n: int) -> tuple[Fraction, ...]:
    """Linearly decaying weights ``(n + 1 - i) / (1 + ... + n)`` for i = 1..n."""
    total = n * (n + 1) // 2
    return tuple(Fraction(n + 1 - i, total) for i in range(1, n + 1))


def elect_leader(prob_rows) -> tuple[Branch, dict[Branch, float]]:
    """Pick the classifier whose distribution has the largest maximum.

    Args:
        prob_rows: mapping ``branch -> probability row`` for one sample.

    Returns:
        The leader and every branch's MAP score. Exact ties go to the branch
        that comes first in ``fused > video > audio``.
    """
    if not prob_rows:
        raise EmptyInput("no classifier outputs to elect from")
    maps = {Branch.parse(b): float(np.max(row)) for b, row in prob_rows.items()}
    best = max(maps.values())
    for branch in BRANCH_PRIORITY:
        if maps.get(branch) == best:
            return branch, maps
    raise AssertionError("unreachable")


def build_soft_label(leader_probs, n: int, num_classes: int) -> SoftLabel:
    probs = np.asarray(leader_probs, dtype=np.float64)
    if not 1 <= n <= num_classes:
        raise InvalidN(f"n must lie in [1, {num_classes}], got {n}")
    if probs.shape != (num_classes,):
        raise InvalidN(f"expected a row of {num_classes} probabilities")
    # Stable sort on -p keeps the lower class index first among ties.
    order = np.argsort(-probs, kind="stable")[:n]
    return SoftLabel(
        tuple(int(c) for c in order), tuple(float(a) for a in rank_weights(n))
    )


def soft_label_matrix(prob_rows: np.ndarray, n: int) -> np.ndarray:
    """Vectorized :func:`build_soft_label` over rows, already densified."""
    prob_rows = np.asarray(prob_rows, dtype=np.float64)
    rows, num_classes = prob_rows.shape
    if not 1 <= n <= num_classes:
        raise InvalidN(f"n must lie in [1, {num_classes}], got {n}")
    order = np.argsort(-prob_rows, axis=1, kind="stable")[:, :n]
    alphas = np.array([float(a) for a in rank_weights(n)])
    out = np.zeros_like(prob_rows)
    np.put_along_axis(out, order, np.broadcast_to(alphas, order.shape), axis=1)
    return out


def gate(leader_map: float, ac_map: float, theta: float) -> bool:
    return leader_map - ac_map >= theta


@dataclass
class ThresholdState:
    """Per-classifier thresholds, optionally drifting with the mean MAP gap.

    ``theta <- theta + lam * (d_t - d_{t-1})`` where ``d_t`` is the mean
    leader-minus-classifier gap over a batch. The first batch only records
    ``d``. With ``lam == 0`` the thresholds never move.
    """

    theta_ini: float = 1e-3
    lam: float = 0.0
    theta: dict[Branch, float] = field(default_factory=dict)
    prev_gap: dict[Branch, float] = field(default_factory=dict)

    def threshold(self, branch: Branch) -> float:
        return self.theta.get(branch, self.theta_ini)


def update_threshold(state: ThresholdState, ac_id, batch_gaps) -> ThresholdState:
    gaps = np.asarray(batch_gaps, dtype=np.float64)
    if gaps.size == 0:
        raise EmptyBatch("threshold update needs at least one gap")
    branch = Branch.parse(ac_id)
    d_t = float(np.mean(gaps))
    if branch not in state.prev_gap:
        state.theta[branch] = state.theta_ini
    else:
        state.theta[branch] = state.threshold(branch) + state.lam * (
            d_t - state.prev_gap[branch]
        )
    state.prev_gap[branch] = d_t
    return state
