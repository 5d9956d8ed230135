"""Gradient-free multi-modal test-time adaptation with analytic classifiers.

Three closed-form ridge classifiers (audio, video, fused) adapt to an
unlabeled stream through recursive memory-bank updates, while a late-fusion
gate decides which classifier learns from which sample.
"""

from .adapter import (
    AdaptationEvent,
    FusionConfig,
    MdaaModel,
    ModalBatch,
    build_model,
    default_specs,
    infer_and_adapt,
    infer_only,
    restore,
    snapshot,
)
from .classifier import (
    AnalyticClassifier,
    ClassWeights,
    MemoryBank,
    compute_class_weights,
    init_source,
    one_hot,
)
from .errors import *  # noqa: F401,F403
from .expansion import Branch, Expansion, ExpansionSpec, Nonlinearity, expand
from .fusion import (
    GateDecision,
    SoftLabel,
    ThresholdState,
    build_soft_label,
    elect_leader,
    gate,
    update_threshold,
)
from .linalg import SpdFactor, rank_k_update, spd_factorize, spd_solve
from .metrics import PhaseReport, RunReport, emit_report, measure_forgetting, score_phase

__version__ = "0.1.0"
