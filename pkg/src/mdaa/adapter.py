"""Multi-branch adapter: three analytic classifiers tied together by late fusion.

One classifier sits on each of the audio, video, and fused (audio and video
concatenated) branches. Each batch is processed test-then-train:

1. every branch predicts; the most confident branch per sample leads and
   supplies the prediction;
2. the leader's distribution becomes a soft pseudo-label;
3. each branch is gated per sample against the leader's MAP score;
4. after the whole batch, each branch folds in its accepted samples.

Gating uses scores from before the batch's update, so a batch never sees its
own adaptation.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .classifier import (
    AnalyticClassifier,
    MemoryBank,
    compute_class_weights,
    init_source,
    one_hot,
)
from .errors import CorruptSnapshot, DimensionMismatch, EmptyInput, InvalidSpec
from .expansion import (
    BRANCH_PRIORITY,
    Branch,
    Expansion,
    ExpansionSpec,
    Nonlinearity,
)
from .fusion import GateDecision, SoftLabel, ThresholdState, soft_label_matrix, update_threshold

MODEL_MAGIC = b"MDAM"
MODEL_VERSION = 1
_HEAD = struct.Struct("<4sHB")
_EXPANSION = struct.Struct("<BIIQBd")
_FUSION = struct.Struct("<dddIBd")

ABLATIONS = (None, "ungated", "self_training")


@dataclass(frozen=True)
class ModalBatch:
    """What the adapter gets to see: features only, never labels."""

    audio: np.ndarray
    video: np.ndarray

    def __post_init__(self):
        audio = np.atleast_2d(np.asarray(self.audio, dtype=np.float64))
        video = np.atleast_2d(np.asarray(self.video, dtype=np.float64))
        if audio.shape[0] != video.shape[0]:
            raise DimensionMismatch(
                f"audio has {audio.shape[0]} rows, video has {video.shape[0]}"
            )
        object.__setattr__(self, "audio", audio)
        object.__setattr__(self, "video", video)

    def __len__(self) -> int:
        return self.audio.shape[0]

    def branch_input(self, branch: Branch) -> np.ndarray:
        if branch is Branch.AUDIO:
            return self.audio
        if branch is Branch.VIDEO:
            return self.video
        return np.hstack([self.audio, self.video])


@dataclass
class FusionConfig:
    theta: float = 1e-3
    top_n: int = 2
    dynamic: bool = False
    lam: float = 0.0

    def validate(self, num_classes: int) -> None:
        if not (np.isfinite(self.theta) and self.theta >= 0):
            raise InvalidSpec(f"theta must be >= 0, got {self.theta}")
        if not 1 <= self.top_n <= num_classes:
            raise InvalidSpec(f"top_n must lie in [1, {num_classes}], got {self.top_n}")
        if not (np.isfinite(self.lam) and self.lam >= 0):
            raise InvalidSpec(f"lambda must be >= 0, got {self.lam}")


@dataclass(frozen=True)
class AdaptationEvent:
    sample_index: int
    maps: dict
    leader: Branch
    prediction: int
    soft_label: SoftLabel
    gates: dict
    ac_predictions: dict

    def to_dict(self) -> dict:
        return {
            "sample_index": self.sample_index,
            "leader": self.leader.label,
            "prediction": self.prediction,
            "maps": {b.label: v for b, v in self.maps.items()},
            "ac_predictions": {b.label: v for b, v in self.ac_predictions.items()},
            "soft_label": {
                "positions": list(self.soft_label.positions),
                "weights": list(self.soft_label.weights),
            },
            "accepted": {b.label: g.accepted for b, g in self.gates.items()},
        }


@dataclass
class _Forward:
    features: dict
    probs: dict
    maps: dict
    leader_maps: np.ndarray
    leader_idx: np.ndarray
    order: tuple
    predictions: np.ndarray
    leader_probs: np.ndarray


@dataclass
class MdaaModel:
    expansions: dict
    classifiers: dict
    fusion: FusionConfig = field(default_factory=FusionConfig)
    thresholds: ThresholdState = field(default_factory=ThresholdState)
    baseline_accuracy: float | None = None

    def __post_init__(self):
        if set(self.expansions) != set(self.classifiers) or not self.classifiers:
            raise InvalidSpec("every branch needs both an expansion and a classifier")
        counts = {c.num_classes for c in self.classifiers.values()}
        if len(counts) != 1:
            raise InvalidSpec("classifiers disagree on the number of classes")
        for b, clf in self.classifiers.items():
            if clf.dim != self.expansions[b].dim:
                raise InvalidSpec(f"{b.label}: classifier and expansion widths differ")
        self.fusion.validate(self.num_classes)
        if not self.thresholds.theta and not self.thresholds.prev_gap:
            self.thresholds.theta_ini = self.fusion.theta
            self.thresholds.lam = self.fusion.lam

    @property
    def num_classes(self) -> int:
        return next(iter(self.classifiers.values())).num_classes

    @property
    def branches(self) -> tuple:
        return tuple(b for b in BRANCH_PRIORITY if b in self.classifiers)

    def threshold(self, branch: Branch) -> float:
        return self.thresholds.threshold(branch)

    def _forward(self, batch: ModalBatch) -> _Forward:
        if len(batch) == 0:
            raise EmptyInput("batch is empty")
        order = self.branches
        features, probs, maps = {}, {}, {}
        for b in order:
            features[b] = self.expansions[b].transform(batch.branch_input(b))
            probs[b] = self.classifiers[b].probs(features[b])
            maps[b] = probs[b].max(axis=1)
        stacked = np.stack([maps[b] for b in order], axis=1)
        # argmax returns the first maximum, and ``order`` is priority order.
        leader_idx = np.argmax(stacked, axis=1)
        rows = np.arange(len(batch))
        leader_probs = np.stack([probs[b] for b in order], axis=1)[rows, leader_idx]
        return _Forward(
            features=features,
            probs=probs,
            maps=maps,
            leader_maps=stacked[rows, leader_idx],
            leader_idx=leader_idx,
            order=order,
            predictions=np.argmax(leader_probs, axis=1),
            leader_probs=leader_probs,
        )

    def infer_only(self, batch: ModalBatch) -> np.ndarray:
        return self._forward(batch).predictions

    def infer_and_adapt(
        self, batch: ModalBatch, start_index: int = 0, ablation: str | None = None
    ) -> tuple[np.ndarray, list]:
        """Predict a batch, then adapt each branch on its gated samples.

        Args:
            batch: features for both modalities.
            start_index: offset added to the per-sample event indices.
            ablation: ``None`` for the normal gated update. ``"ungated"``
                lets every branch, the leader included, learn every sample
                from the leader's pseudo-label. ``"self_training"`` drops
                fusion from the update entirely: each branch learns every
                sample from its own pseudo-label.

        Returns:
            The predictions and one :class:`AdaptationEvent` per sample.
        """
        if ablation not in ABLATIONS:
            raise InvalidSpec(f"unknown ablation {ablation!r}; choose from {ABLATIONS}")
        fw = self._forward(batch)
        soft = soft_label_matrix(fw.leader_probs, self.fusion.top_n)
        gaps, accepted = {}, {}
        for b in fw.order:
            gaps[b] = fw.leader_maps - fw.maps[b]
            if ablation is None:
                accepted[b] = gaps[b] >= self.threshold(b)
            else:
                accepted[b] = np.ones(len(batch), dtype=bool)
        events = self._events(fw, soft, accepted, start_index)
        for b in fw.order:
            mask = accepted[b]
            if not mask.any():
                continue
            target = soft
            if ablation == "self_training":
                target = soft_label_matrix(fw.probs[b], self.fusion.top_n)
            self.classifiers[b].adapt(fw.features[b][mask], target[mask])
        if self.fusion.dynamic:
            for b in fw.order:
                update_threshold(self.thresholds, b, gaps[b])
        return fw.predictions, events

    def _events(self, fw: _Forward, soft, accepted, start_index: int) -> list:
        n = self.fusion.top_n
        ac_preds = {b: np.argmax(fw.probs[b], axis=1) for b in fw.order}
        order = np.argsort(-fw.leader_probs, axis=1, kind="stable")[:, :n]
        events = []
        for i in range(len(fw.predictions)):
            positions = tuple(int(c) for c in order[i])
            leader_map = float(fw.leader_maps[i])
            events.append(
                AdaptationEvent(
                    sample_index=start_index + i,
                    maps={b: float(fw.maps[b][i]) for b in fw.order},
                    leader=fw.order[fw.leader_idx[i]],
                    prediction=int(fw.predictions[i]),
                    soft_label=SoftLabel(positions, tuple(float(soft[i, c]) for c in positions)),
                    gates={
                        b: GateDecision(b, leader_map, float(fw.maps[b][i]), bool(accepted[b][i]))
                        for b in fw.order
                    },
                    ac_predictions={b: int(ac_preds[b][i]) for b in fw.order},
                )
            )
        return events

    def record_baseline(self, batch: ModalBatch, labels) -> float:
        preds = self.infer_only(batch)
        self.baseline_accuracy = float(np.mean(preds == np.asarray(labels)))
        return self.baseline_accuracy

    def copy(self) -> "MdaaModel":
        return restore(snapshot(self))

    def banks(self) -> dict:
        return {b: c.bank for b, c in self.classifiers.items()}


def default_specs(
    audio_dim: int,
    video_dim: int,
    phi: int = 512,
    seed: int = 0,
    nonlinearity: Nonlinearity = Nonlinearity.RELU,
    scale: float | None = None,
) -> dict:
    """One expansion spec per branch, seeded ``seed``, ``seed+1``, ``seed+2``."""
    dims = {
        Branch.AUDIO: audio_dim,
        Branch.VIDEO: video_dim,
        Branch.FUSED: audio_dim + video_dim,
    }
    return {
        b: ExpansionSpec(
            input_dim=d,
            expanded_dim=phi,
            seed=(seed + int(b)) % 2**64,
            nonlinearity=nonlinearity,
            scale=scale if scale is not None else 1.0 / np.sqrt(d),
        )
        for b, d in dims.items()
    }


def build_model(
    audio,
    video,
    labels,
    num_classes: int,
    specs: dict,
    gamma: float = 1.0,
    fusion: FusionConfig | None = None,
    class_balance: bool = True,
) -> MdaaModel:
    """Initialize every branch's classifier from labelled source data.

    Source features are consumed here and not kept.
    """
    fusion = fusion or FusionConfig()
    labels = np.asarray(labels, dtype=np.int64)
    batch = ModalBatch(audio, video)
    if len(batch) != labels.size:
        raise DimensionMismatch("one label per source sample is required")
    weights = compute_class_weights(labels, num_classes) if class_balance else None
    y = one_hot(labels, num_classes)
    expansions, classifiers = {}, {}
    for b in BRANCH_PRIORITY:
        if b not in specs:
            continue
        expansions[b] = Expansion(specs[b])
        x = expansions[b].transform(batch.branch_input(b))
        classifiers[b] = init_source(x, y, weights, gamma, b)
    return MdaaModel(expansions, classifiers, fusion)


def infer_and_adapt(model: MdaaModel, batch: ModalBatch, **kwargs):
    return model.infer_and_adapt(batch, **kwargs)


def infer_only(model: MdaaModel, batch: ModalBatch) -> np.ndarray:
    return model.infer_only(batch)


def snapshot(model: MdaaModel) -> bytes:
    """Serialize a model to the little-endian ``MDAM`` blob."""
    parts = [_HEAD.pack(MODEL_MAGIC, MODEL_VERSION, len(model.classifiers))]
    state = model.thresholds
    for b in model.branches:
        exp = model.expansions[b]
        if getattr(exp, "_custom", False):
            raise InvalidSpec("expansions with injected projections cannot be saved")
        s = exp.spec
        parts.append(
            _EXPANSION.pack(
                int(b),
                s.input_dim,
                s.expanded_dim,
                s.seed,
                int(Nonlinearity.parse(s.nonlinearity)),
                s.scale,
            )
        )
        parts.append(model.classifiers[b].bank.to_bytes())
        parts.append(
            _FUSION.pack(
                state.threshold(b),
                state.theta_ini,
                state.lam,
                model.fusion.top_n,
                int(model.fusion.dynamic),
                state.prev_gap.get(b, float("nan")),
            )
        )
    return b"".join(parts)


def restore(blob: bytes) -> MdaaModel:
    blob = bytes(blob)
    if len(blob) < _HEAD.size:
        raise CorruptSnapshot("snapshot header truncated")
    magic, version, count = _HEAD.unpack_from(blob, 0)
    if magic != MODEL_MAGIC:
        raise CorruptSnapshot(f"bad snapshot magic {magic!r}")
    if version != MODEL_VERSION:
        raise CorruptSnapshot(f"unsupported snapshot version {version}")
    offset = _HEAD.size
    expansions, classifiers = {}, {}
    state = ThresholdState()
    fusion = None
    try:
        for _ in range(count):
            if len(blob) - offset < _EXPANSION.size:
                raise CorruptSnapshot("expansion record truncated")
            bid, in_dim, phi, seed, nonlin, scale = _EXPANSION.unpack_from(blob, offset)
            offset += _EXPANSION.size
            branch = Branch(bid)
            spec = ExpansionSpec(in_dim, phi, seed, Nonlinearity(nonlin), scale)
            bank, offset = MemoryBank.from_bytes(blob, offset)
            if len(blob) - offset < _FUSION.size:
                raise CorruptSnapshot("fusion record truncated")
            theta, theta_ini, lam, top_n, dynamic, prev = _FUSION.unpack_from(blob, offset)
            offset += _FUSION.size
            expansions[branch] = Expansion(spec)
            classifiers[branch] = AnalyticClassifier(bank, branch)
            state.theta_ini, state.lam = theta_ini, lam
            state.theta[branch] = theta
            if not np.isnan(prev):
                state.prev_gap[branch] = prev
            fusion = FusionConfig(theta_ini, int(top_n), bool(dynamic), lam)
    except CorruptSnapshot:
        raise
    except ValueError as exc:
        raise CorruptSnapshot(f"invalid snapshot field: {exc}") from None
    if offset != len(blob):
        raise CorruptSnapshot(f"{len(blob) - offset} trailing bytes after snapshot")
    if fusion is None:
        raise CorruptSnapshot("snapshot holds no branches")
    return MdaaModel(expansions, classifiers, fusion, state)
