"""Independent checks of the recursive solver against a dense joint solve.

The recursive classifier claims that after any sequence of target batches
its weights equal the ridge solution over *all* data seen so far, source
samples weighted by class balance and target samples weighted one. The
oracle here builds that joint system explicitly (source rows scaled by
``sqrt(w)``) and solves it with :func:`numpy.linalg.solve`, which shares no
code with the Cholesky path under test.

It also times single factorizations at a few sizes and fits ``c * phi^3``.
"""

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .classifier import AnalyticClassifier, MemoryBank, compute_class_weights, init_source, one_hot
from .errors import InvalidConfig, NotPositiveDefinite
from .linalg import spd_factorize, weighted_rank_k_update

MAX_ORACLE_PHI = 256


@dataclass
class OracleConfig:
    cases: int = 60
    phis: tuple = (8, 32, 128)
    class_counts: tuple = (2, 10)
    source_samples: int = 200
    imbalance: float = 4.0
    max_batches: int = 100
    max_batch_size: int = 17
    gamma: float = 1.0
    near_duplicate: bool = False
    tolerance: float = 1e-8
    seed: int = 0

    def validate(self) -> None:
        if self.cases < 1:
            raise InvalidConfig("cases must be >= 1")
        if not self.phis or min(self.phis) < 1:
            raise InvalidConfig("phis must be positive")
        if max(self.phis) > MAX_ORACLE_PHI:
            raise InvalidConfig(
                f"the dense joint solve is limited to phi <= {MAX_ORACLE_PHI}"
            )
        if not self.class_counts or min(self.class_counts) < 2:
            raise InvalidConfig("class counts must be >= 2")
        if self.source_samples < max(self.class_counts):
            raise InvalidConfig("need at least one source sample per class")
        if self.max_batches < 1 or self.max_batch_size < 1:
            raise InvalidConfig("batch limits must be >= 1")
        if not (np.isfinite(self.gamma) and self.gamma >= 0):
            raise InvalidConfig("gamma must be finite and >= 0")
        if self.imbalance < 1:
            raise InvalidConfig("imbalance must be >= 1")


@dataclass
class CaseResult:
    case: int
    phi: int
    num_classes: int
    batches: int
    target_samples: int
    rel_error: float | None
    passed: bool
    diagnosis: str = ""


@dataclass
class OracleReport:
    cases: list = field(default_factory=list)
    tolerance: float = 1e-8
    elapsed: float = 0.0

    @property
    def passed(self) -> bool:
        return bool(self.cases) and all(c.passed for c in self.cases)

    @property
    def max_rel_error(self) -> float | None:
        errs = [c.rel_error for c in self.cases if c.rel_error is not None]
        return max(errs) if errs else None

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "tolerance": self.tolerance,
            "num_cases": len(self.cases),
            "num_failed": sum(not c.passed for c in self.cases),
            "max_rel_error": self.max_rel_error,
            "elapsed_s": self.elapsed,
            "cases": [asdict(c) for c in self.cases],
        }


def _imbalanced_labels(rng, n: int, num_classes: int, ratio: float) -> np.ndarray:
    # Geometric class sizes between 1 and 1/ratio, every class present.
    shares = ratio ** (-np.linspace(0.0, 1.0, num_classes))
    counts = np.maximum(1, np.floor(n * shares / shares.sum())).astype(int)
    counts[0] += n - counts.sum()
    labels = np.repeat(np.arange(num_classes), counts)
    return rng.permutation(labels)


def _features(rng, n: int, phi: int, near_duplicate: bool) -> np.ndarray:
    if near_duplicate:
        protos = rng.standard_normal((max(2, phi // 8), phi))
        picks = rng.integers(0, protos.shape[0], n)
        return protos[picks] + 1e-9 * rng.standard_normal((n, phi))
    # Rank-deficient on purpose: only gamma keeps P positive definite.
    rank = max(1, phi // 2)
    return rng.standard_normal((n, rank)) @ rng.standard_normal((rank, phi)) / np.sqrt(rank)


def _soft_targets(rng, n: int, num_classes: int) -> np.ndarray:
    return rng.dirichlet(np.ones(num_classes), size=n)


def joint_solve(source_x, source_y, source_w, target_x, target_y, gamma: float) -> np.ndarray:
    """Dense ridge solution over weighted source plus unit-weight target rows."""
    root = np.sqrt(source_w)[:, None]
    x = np.vstack([source_x * root, target_x])
    y = np.vstack([source_y * root, target_y])
    lhs = x.T @ x + gamma * np.eye(x.shape[1])
    return np.linalg.solve(lhs, x.T @ y)


def _source_classifier(x, y, weights, gamma: float) -> AnalyticClassifier:
    if gamma > 0:
        return init_source(x, y, weights, gamma)
    # gamma == 0 bypasses MemoryBank's guard so the factorization itself fails.
    w = weights.for_labels(np.argmax(y, axis=1))
    bank = MemoryBank(
        weighted_rank_k_update(np.zeros((x.shape[1],) * 2), x, w),
        (x * w[:, None]).T @ y,
        0.0,
        y.shape[1],
    )
    clf = AnalyticClassifier(bank)
    clf.weights
    return clf


def run_case(rng, case: int, phi: int, num_classes: int, cfg: OracleConfig) -> CaseResult:
    labels = _imbalanced_labels(rng, cfg.source_samples, num_classes, cfg.imbalance)
    sx = _features(rng, labels.size, phi, cfg.near_duplicate)
    sy = one_hot(labels, num_classes)
    weights = compute_class_weights(labels, num_classes)
    sizes = rng.integers(1, cfg.max_batch_size + 1, rng.integers(1, cfg.max_batches + 1))
    tx = _features(rng, int(sizes.sum()), phi, cfg.near_duplicate)
    ty = _soft_targets(rng, tx.shape[0], num_classes)
    base = dict(
        case=case,
        phi=phi,
        num_classes=num_classes,
        batches=int(sizes.size),
        target_samples=int(sizes.sum()),
    )
    try:
        clf = _source_classifier(sx, sy, weights, cfg.gamma)
        start = 0
        for size in sizes:
            clf.adapt(tx[start : start + size], ty[start : start + size])
            start += size
        recursive = clf.weights
    except NotPositiveDefinite as exc:
        return CaseResult(**base, rel_error=None, passed=False, diagnosis=f"NotPositiveDefinite: {exc}")
    expected = joint_solve(sx, sy, weights.for_labels(labels), tx, ty, cfg.gamma)
    err = float(np.linalg.norm(recursive - expected) / np.linalg.norm(expected))
    return CaseResult(**base, rel_error=err, passed=err <= cfg.tolerance)


def run_oracle(cfg: OracleConfig | None = None) -> OracleReport:
    """Run ``cfg.cases`` randomized equivalence cases, cycling through sizes."""
    cfg = cfg or OracleConfig()
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    grid = [(p, c) for p in cfg.phis for c in cfg.class_counts]
    report = OracleReport(tolerance=cfg.tolerance)
    t0 = time.perf_counter()
    for case in range(cfg.cases):
        phi, num_classes = grid[case % len(grid)]
        report.cases.append(run_case(rng, case, phi, num_classes, cfg))
    report.elapsed = time.perf_counter() - t0
    return report


def time_factorization(phi: int, repeats: int = 20, seed: int = 0) -> float:
    """Best-of-``repeats`` wall time of one ``phi x phi`` SPD factorization."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2 * phi, phi))
    m = x.T @ x + np.eye(phi)
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        spd_factorize(m)
        best = min(best, time.perf_counter() - t0)
    return best


@dataclass
class CubicFit:
    phis: tuple
    seconds: tuple
    coefficient: float
    ratios: tuple
    factor: float = 2.0

    @property
    def passed(self) -> bool:
        return all(1 / self.factor <= r <= self.factor for r in self.ratios)

    def to_dict(self) -> dict:
        return {
            "phis": list(self.phis),
            "seconds": list(self.seconds),
            "coefficient": self.coefficient,
            "ratio_to_fit": list(self.ratios),
            "factor": self.factor,
            "passed": self.passed,
        }


def fit_cubic(phis, seconds, factor: float = 2.0) -> CubicFit:
    """Least-squares fit of ``log t = log c + 3 log phi``.

    Each measurement is then compared to the fit; ``ratios`` holds
    ``t / (c * phi^3)``.
    """
    phis = np.asarray(phis, dtype=np.float64)
    seconds = np.asarray(seconds, dtype=np.float64)
    normalized = seconds / phis**3
    c = float(np.exp(np.mean(np.log(normalized))))
    ratios = normalized / c
    return CubicFit(
        tuple(int(p) for p in phis),
        tuple(float(s) for s in seconds),
        c,
        tuple(float(r) for r in ratios),
        factor,
    )


def complexity_check(phis=(128, 256, 512), repeats: int = 20) -> CubicFit:
    return fit_cubic(phis, [time_factorization(p, repeats) for p in phis])
