"""Synthetic two-modality data with controllable corruption schedules.

Classes are Gaussian clusters, independently placed in each modality. A
:class:`PhaseSchedule` strings together phases that corrupt one modality
with a parametric family (noise, scaling, dropout, shift) while the other
passes through untouched. Ground truth travels alongside each batch for
scoring, but in a separate field from the :class:`ModalBatch` the adapter
consumes.
"""

import csv
import io
import struct
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterator

import numpy as np

from .adapter import ModalBatch
from .errors import InvalidConfig, InvalidSeverity


class Modality(str, Enum):
    AUDIO = "audio"
    VIDEO = "video"


class CorruptionKind(str, Enum):
    ADDITIVE_GAUSSIAN = "additive_gaussian"
    SCALE = "scale"
    DROPOUT = "dropout"
    SHIFT = "shift"


@dataclass(frozen=True)
class CorruptionSpec:
    modality: Modality
    kind: CorruptionKind
    severity: float

    def __post_init__(self):
        object.__setattr__(self, "modality", Modality(self.modality))
        object.__setattr__(self, "kind", CorruptionKind(self.kind))
        if not np.isfinite(self.severity) or self.severity < 0:
            raise InvalidSeverity(f"severity must be finite and >= 0, got {self.severity}")
        if self.kind is CorruptionKind.DROPOUT and self.severity > 1:
            raise InvalidSeverity("dropout severity is a probability in [0, 1]")

    def describe(self) -> str:
        return f"{self.modality.value}:{self.kind.value}@{self.severity:g}"


@dataclass(frozen=True)
class Phase:
    corruption: CorruptionSpec | None
    samples: int
    batch_size: int

    def describe(self) -> str:
        return "clean" if self.corruption is None else self.corruption.describe()


@dataclass(frozen=True)
class PhaseSchedule:
    phases: tuple
    mode: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "phases", tuple(self.phases))
        for ph in self.phases:
            if ph.samples < 0 or ph.batch_size < 1:
                raise InvalidConfig(f"bad phase sizes: {ph}")
        targets = [ph.corruption.modality for ph in self.phases if ph.corruption]
        if self.mode == "progressive_single_modality" and len(set(targets)) > 1:
            raise InvalidConfig("progressive schedules corrupt a single modality")
        if self.mode == "interleaved" and any(
            a == b for a, b in zip(targets, targets[1:])
        ):
            raise InvalidConfig("interleaved schedules must alternate modalities")


@dataclass
class TaskConfig:
    num_classes: int = 10
    audio_dim: int = 32
    video_dim: int = 32
    source_samples: int = 2000
    heldout_samples: int = 1000
    within_class_std: float = 1.0
    # Expected norm of each class mean; the two modalities are scaled apart.
    audio_separation: float = 3.0
    video_separation: float = 3.0
    imbalance: float = 1.0
    # Within-class variation lives in a random subspace of this many dims
    # (0 = isotropic), plus an isotropic floor of ``noise_floor`` std.
    intrinsic_dim: int = 0
    noise_floor: float = 0.0
    # Emit features at a fixed per-sample RMS, as a normalized encoder output would.
    normalize: bool = True
    seed: int = 0

    def validate(self) -> None:
        if self.num_classes < 2:
            raise InvalidConfig("need at least two classes")
        if self.audio_dim < 1 or self.video_dim < 1:
            raise InvalidConfig("feature dimensions must be >= 1")
        if self.within_class_std < 0:
            raise InvalidConfig("within_class_std must be >= 0")
        if self.imbalance < 1:
            raise InvalidConfig("imbalance is a max/min count ratio, must be >= 1")
        if self.source_samples < self.num_classes or self.heldout_samples < 0:
            raise InvalidConfig("every class needs at least one source sample")


@dataclass
class LabeledSet:
    audio: np.ndarray
    video: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def batch(self) -> ModalBatch:
        return ModalBatch(self.audio, self.video)


@dataclass
class SyntheticTask:
    num_classes: int
    audio_dim: int
    video_dim: int
    class_means: dict
    within_class_std: float
    seed: int
    normalize: bool = True
    bases: dict = field(default_factory=dict)
    noise_floor: float = 0.0
    config: TaskConfig = field(repr=False, default=None)

    def encode(self, x: np.ndarray) -> np.ndarray:
        return rms_normalize(x) if self.normalize else x

    def sample(self, labels, rng: np.random.Generator) -> LabeledSet:
        labels = np.asarray(labels, dtype=np.int64)
        out = {}
        for m in Modality:
            means = self.class_means[m]
            basis = self.bases.get(m)
            if basis is None:
                noise = rng.standard_normal((labels.size, means.shape[1]))
            else:
                noise = rng.standard_normal((labels.size, basis.shape[0])) @ basis
            out[m] = means[labels] + self.within_class_std * noise
            if self.noise_floor:
                out[m] += self.noise_floor * rng.standard_normal(out[m].shape)
        return LabeledSet(out[Modality.AUDIO], out[Modality.VIDEO], labels)

    def sample_encoded(self, labels, rng: np.random.Generator) -> LabeledSet:
        raw = self.sample(labels, rng)
        return LabeledSet(self.encode(raw.audio), self.encode(raw.video), raw.labels)


@dataclass(frozen=True)
class StreamBatch:
    """One step of the stream: adapter input plus hidden ground truth."""

    phase_index: int
    batch: ModalBatch
    labels: np.ndarray


def rms_normalize(x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Rescale each row to unit root-mean-square."""
    x = np.asarray(x, dtype=np.float64)
    return x / np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + eps)


def imbalanced_counts(total: int, num_classes: int, ratio: float) -> np.ndarray:
    """Geometric class counts from ``n_min`` up to ``ratio * n_min``.

    ``n_min`` is a whole number, so the largest-to-smallest count ratio is
    exactly ``ratio`` whenever ``ratio * n_min`` is whole; the grand total
    only approximates ``total``.
    """
    steps = ratio ** (np.arange(num_classes) / max(num_classes - 1, 1))
    n_min = max(int(round(total / steps.sum())), 1)
    return np.maximum(np.rint(n_min * steps).astype(np.int64), 1)


def _class_means(rng, num_classes: int, dim: int, separation: float) -> np.ndarray:
    for _ in range(100):
        means = rng.standard_normal((num_classes, dim)) * (separation / np.sqrt(dim))
        diffs = means[:, None, :] - means[None, :, :]
        dist = np.sqrt((diffs**2).sum(-1))
        if np.min(dist[np.triu_indices(num_classes, 1)]) > 0:
            return means
    raise InvalidConfig("could not place distinct class means")


def generate_task(config: TaskConfig) -> tuple[SyntheticTask, LabeledSet, LabeledSet]:
    """Build the task, an (optionally imbalanced) source set, and a balanced held-out set."""
    config.validate()
    seq = np.random.SeedSequence(config.seed)
    mean_rng, src_rng, held_rng = (np.random.default_rng(s) for s in seq.spawn(3))
    means = {
        Modality.AUDIO: _class_means(
            mean_rng, config.num_classes, config.audio_dim, config.audio_separation
        ),
        Modality.VIDEO: _class_means(
            mean_rng, config.num_classes, config.video_dim, config.video_separation
        ),
    }
    bases = {}
    if config.intrinsic_dim:
        for m, d in ((Modality.AUDIO, config.audio_dim), (Modality.VIDEO, config.video_dim)):
            k = min(config.intrinsic_dim, d)
            q, _ = np.linalg.qr(mean_rng.standard_normal((d, k)))
            bases[m] = q.T
    task = SyntheticTask(
        config.num_classes,
        config.audio_dim,
        config.video_dim,
        means,
        config.within_class_std,
        config.seed,
        config.normalize,
        bases,
        config.noise_floor,
        config,
    )
    counts = imbalanced_counts(config.source_samples, config.num_classes, config.imbalance)
    src_labels = src_rng.permutation(np.repeat(np.arange(config.num_classes), counts))
    held_labels = held_rng.permutation(
        np.arange(config.heldout_samples) % config.num_classes
    )
    return task, task.sample_encoded(src_labels, src_rng), task.sample_encoded(held_labels, held_rng)


def corrupt(sample, spec: CorruptionSpec, rng: np.random.Generator) -> np.ndarray:
    """Apply one corruption family to a vector or a batch of row vectors."""
    x = np.asarray(sample, dtype=np.float64)
    s = spec.severity
    kind = spec.kind
    if kind is CorruptionKind.ADDITIVE_GAUSSIAN:
        return x + s * rng.standard_normal(x.shape) if s else x.copy()
    if kind is CorruptionKind.SCALE:
        return x * s if s else x.copy()
    if kind is CorruptionKind.DROPOUT:
        if s > 1:
            raise InvalidSeverity("dropout severity is a probability in [0, 1]")
        return np.where(rng.random(x.shape) < s, 0.0, x) if s else x.copy()
    if kind is CorruptionKind.SHIFT:
        return x + s
    raise InvalidSeverity(f"unknown corruption kind {kind}")


def stream(task: SyntheticTask, schedule: PhaseSchedule) -> Iterator[StreamBatch]:
    """Yield batches phase by phase; each phase draws fresh balanced samples.

    Every phase gets its own child seed, so phases are reproducible
    independently of each other.
    """
    children = np.random.SeedSequence([task.seed, 1]).spawn(max(len(schedule.phases), 1))
    for index, (phase, seed) in enumerate(zip(schedule.phases, children)):
        data_rng, corrupt_rng, perm_rng = (np.random.default_rng(s) for s in seed.spawn(3))
        labels = perm_rng.permutation(np.arange(phase.samples) % task.num_classes)
        clean = task.sample(labels, data_rng)
        audio, video = clean.audio, clean.video
        spec = phase.corruption
        if spec is not None and spec.modality is Modality.AUDIO:
            audio = corrupt(audio, spec, corrupt_rng)
        elif spec is not None:
            video = corrupt(video, spec, corrupt_rng)
        audio, video = task.encode(audio), task.encode(video)
        for start in range(0, phase.samples, phase.batch_size):
            stop = min(start + phase.batch_size, phase.samples)
            yield StreamBatch(
                index, ModalBatch(audio[start:stop], video[start:stop]), labels[start:stop]
            )


def stream_phases(task: SyntheticTask, schedule: PhaseSchedule) -> list[LabeledSet]:
    """Materialize each phase of :func:`stream` as one labelled set."""
    sets = [[] for _ in schedule.phases]
    for sb in stream(task, schedule):
        sets[sb.phase_index].append(sb)
    out = []
    for parts, phase in zip(sets, schedule.phases):
        if not parts:
            out.append(LabeledSet(np.zeros((0, task.audio_dim)), np.zeros((0, task.video_dim)), np.zeros(0, np.int64)))
            continue
        out.append(
            LabeledSet(
                np.vstack([p.batch.audio for p in parts]),
                np.vstack([p.batch.video for p in parts]),
                np.concatenate([p.labels for p in parts]),
            )
        )
    return out


# Six phases per modality at the top severity. Severities are relative to
# unit within-class spread; scaling is omitted because normalized features
# are invariant to it.
_AUDIO_FAMILY = (
    (CorruptionKind.ADDITIVE_GAUSSIAN, 3.0),
    (CorruptionKind.SHIFT, 3.0),
    (CorruptionKind.DROPOUT, 0.8),
    (CorruptionKind.ADDITIVE_GAUSSIAN, 2.0),
    (CorruptionKind.SHIFT, 5.0),
    (CorruptionKind.DROPOUT, 0.6),
)
_VIDEO_FAMILY = (
    (CorruptionKind.DROPOUT, 0.8),
    (CorruptionKind.ADDITIVE_GAUSSIAN, 3.0),
    (CorruptionKind.SHIFT, 3.0),
    (CorruptionKind.DROPOUT, 0.6),
    (CorruptionKind.ADDITIVE_GAUSSIAN, 2.0),
    (CorruptionKind.SHIFT, 5.0),
)

PRESETS = ("progressive-audio", "progressive-video", "interleaved")


def preset_schedule(
    name: str,
    phase_samples: int = 500,
    batch_size: int | None = None,
    severity_scale: float = 1.0,
    reverse: bool = False,
) -> PhaseSchedule:
    """Named schedules: progressive single-modality or interleaved corruption.

    ``reverse`` flips the phase order (the backward arrow rows).
    Progressive presets default to online batches of one; interleaved to 64.
    """

    def spec(modality, kind, sev):
        if kind is CorruptionKind.SCALE:
            sev = sev ** severity_scale
        elif kind is CorruptionKind.DROPOUT:
            sev = min(sev * severity_scale, 1.0)
        else:
            sev = sev * severity_scale
        return CorruptionSpec(modality, kind, sev)

    if name in ("progressive-audio", "progressive-video"):
        modality = Modality.AUDIO if name.endswith("audio") else Modality.VIDEO
        family = _AUDIO_FAMILY if modality is Modality.AUDIO else _VIDEO_FAMILY
        bs = batch_size or 1
        phases = [Phase(spec(modality, k, s), phase_samples, bs) for k, s in family]
        mode = "progressive_single_modality"
    elif name == "interleaved":
        bs = batch_size or 64
        phases = []
        for i in range(6):
            modality = Modality.AUDIO if i % 2 == 0 else Modality.VIDEO
            family = _AUDIO_FAMILY if modality is Modality.AUDIO else _VIDEO_FAMILY
            k, s = family[i]
            phases.append(Phase(spec(modality, k, s), phase_samples, bs))
        mode = "interleaved"
    else:
        raise InvalidConfig(f"unknown schedule preset {name!r}; choose from {PRESETS}")
    if reverse:
        phases = phases[::-1]
    return PhaseSchedule(tuple(phases), mode)


def clean_schedule(num_phases: int, phase_samples: int = 500, batch_size: int = 64) -> PhaseSchedule:
    return PhaseSchedule(
        tuple(Phase(None, phase_samples, batch_size) for _ in range(num_phases)), "clean"
    )


# -- precomputed embedding files ---------------------------------------------

FEATURE_MAGIC = b"AEXF"
FEATURE_VERSION = 1
_FEATURE_HEAD = struct.Struct("<4sHIIII")


@dataclass
class FeatureFile:
    audio: np.ndarray
    video: np.ndarray
    labels: np.ndarray
    num_classes: int

    def labeled(self) -> LabeledSet:
        return LabeledSet(self.audio, self.video, self.labels)


def write_features(path, data: FeatureFile) -> None:
    n, da = data.audio.shape
    dv = data.video.shape[1]
    rec = np.zeros(
        n, dtype=[("a", "<f4", (da,)), ("v", "<f4", (dv,)), ("y", "<i4")]
    )
    rec["a"], rec["v"], rec["y"] = data.audio, data.video, data.labels
    with open(path, "wb") as fh:
        fh.write(_FEATURE_HEAD.pack(FEATURE_MAGIC, FEATURE_VERSION, n, da, dv, data.num_classes))
        fh.write(rec.tobytes())


def read_features(path) -> FeatureFile:
    """Load a binary ``AEXF`` file, or a CSV with audio_*, video_*, label columns."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] == FEATURE_MAGIC:
        return _parse_binary(raw)
    return _parse_csv(raw.decode("utf-8"))


def _parse_binary(raw: bytes) -> FeatureFile:
    if len(raw) < _FEATURE_HEAD.size:
        raise InvalidConfig("feature file header truncated")
    _, version, n, da, dv, c = _FEATURE_HEAD.unpack_from(raw)
    if version != FEATURE_VERSION:
        raise InvalidConfig(f"unsupported feature file version {version}")
    dtype = np.dtype([("a", "<f4", (da,)), ("v", "<f4", (dv,)), ("y", "<i4")])
    if len(raw) != _FEATURE_HEAD.size + n * dtype.itemsize:
        raise InvalidConfig("feature file size does not match its header")
    rec = np.frombuffer(raw, dtype=dtype, count=n, offset=_FEATURE_HEAD.size)
    return FeatureFile(
        rec["a"].astype(np.float64).reshape(n, da),
        rec["v"].astype(np.float64).reshape(n, dv),
        rec["y"].astype(np.int64),
        int(c),
    )


def _parse_csv(text: str) -> FeatureFile:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    a_cols = [i for i, h in enumerate(header) if h.startswith("audio_")]
    v_cols = [i for i, h in enumerate(header) if h.startswith("video_")]
    if "label" not in header or not a_cols or not v_cols:
        raise InvalidConfig("CSV needs audio_*, video_* and label columns")
    y_col = header.index("label")
    rows = [r for r in reader if r]
    table = np.array(rows, dtype=np.float64).reshape(len(rows), len(header))
    labels = table[:, y_col].astype(np.int64)
    return FeatureFile(
        table[:, a_cols], table[:, v_cols], labels, int(labels.max(initial=-1)) + 1
    )


def write_features_csv(path, data: FeatureFile) -> None:
    da, dv = data.audio.shape[1], data.video.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"audio_{i}" for i in range(da)] + [f"video_{i}" for i in range(dv)] + ["label"])
        for a, v, y in zip(data.audio, data.video, data.labels):
            w.writerow([repr(float(t)) for t in a] + [repr(float(t)) for t in v] + [int(y)])


def with_corruption(schedule: PhaseSchedule, **changes) -> PhaseSchedule:
    """Copy a schedule, replacing fields on every corrupting phase's spec."""
    phases = tuple(
        ph if ph.corruption is None else replace(ph, corruption=replace(ph.corruption, **changes))
        for ph in schedule.phases
    )
    return PhaseSchedule(phases, schedule.mode)
