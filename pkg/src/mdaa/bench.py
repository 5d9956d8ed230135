"""Run configuration and the simulate -> adapt -> score pipeline.

Config files are plain ``key = value`` lines; ``#`` starts a comment. Every
key has a default (see :class:`RunConfig`), and CLI flags override file
values.
"""

import dataclasses
import resource
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .adapter import FusionConfig, MdaaModel, ModalBatch, build_model, default_specs
from .errors import InvalidConfig
from .expansion import Nonlinearity
from .metrics import RunReport, measure_forgetting, score_phase
from .simulate import (
    PRESETS,
    LabeledSet,
    PhaseSchedule,
    TaskConfig,
    clean_schedule,
    generate_task,
    preset_schedule,
    read_features,
    stream,
)

SWEEP_AXES = {"theta": "theta", "n": "top_n", "gamma": "gamma", "lambda": "lam"}


@dataclass
class RunConfig:
    # synthetic task
    seed: int = 0
    num_classes: int = 10
    audio_dim: int = 32
    video_dim: int = 32
    source_samples: int = 2000
    heldout_samples: int = 1000
    within_class_std: float = 1.5
    audio_separation: float = 3.0
    video_separation: float = 3.0
    imbalance: float = 1.0
    intrinsic_dim: int = 0
    noise_floor: float = 0.0
    normalize: bool = True
    # model
    phi: int = 512
    expansion_scale: float = 0.0  # 0 means 1/sqrt(input_dim)
    nonlinearity: str = "relu"
    gamma: float = 1.0
    theta: float = 1e-3
    top_n: int = 2
    lam: float = 0.0
    dynamic: bool = False
    class_balance: bool = True
    # stream
    schedule: str = "interleaved"
    direction: str = "forward"
    phase_samples: int = 500
    batch_size: int = 0  # 0 means the preset's own default
    severity_scale: float = 1.0
    # feature files instead of synthetic data
    source_file: str = ""
    heldout_file: str = ""
    target_file: str = ""
    # output
    out: str = ""
    format: str = "json_lines"

    def validate(self) -> None:
        if not (np.isfinite(self.gamma) and self.gamma > 0):
            raise InvalidConfig(f"gamma must be positive, got {self.gamma}")
        if not (np.isfinite(self.theta) and self.theta >= 0):
            raise InvalidConfig(f"theta must be >= 0, got {self.theta}")
        if not 1 <= self.top_n <= self.num_classes:
            raise InvalidConfig(f"top_n must lie in [1, {self.num_classes}]")
        if self.lam < 0:
            raise InvalidConfig("lambda must be >= 0")
        if self.phi < 1:
            raise InvalidConfig("phi must be >= 1")
        if self.expansion_scale < 0:
            raise InvalidConfig("expansion_scale must be >= 0")
        if self.direction not in ("forward", "backward"):
            raise InvalidConfig("direction is 'forward' or 'backward'")
        if self.schedule not in PRESETS + ("clean", "none"):
            raise InvalidConfig(f"unknown schedule {self.schedule!r}")
        if self.format not in ("json_lines", "table_text", "csv"):
            raise InvalidConfig(f"unknown format {self.format!r}")
        try:
            Nonlinearity.parse(self.nonlinearity)
        except KeyError:
            raise InvalidConfig(f"unknown nonlinearity {self.nonlinearity!r}") from None

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    @property
    def task_config(self) -> TaskConfig:
        return TaskConfig(
            num_classes=self.num_classes,
            audio_dim=self.audio_dim,
            video_dim=self.video_dim,
            source_samples=self.source_samples,
            heldout_samples=self.heldout_samples,
            within_class_std=self.within_class_std,
            audio_separation=self.audio_separation,
            video_separation=self.video_separation,
            imbalance=self.imbalance,
            intrinsic_dim=self.intrinsic_dim,
            noise_floor=self.noise_floor,
            normalize=self.normalize,
            seed=self.seed,
        )

    @property
    def fusion(self) -> FusionConfig:
        return FusionConfig(self.theta, self.top_n, self.dynamic, self.lam)


_ALIASES = {"lambda": "lam", "n": "top_n", "top-n": "top_n", "φ": "phi"}
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(name: str, kind, raw: str):
    raw = raw.strip()
    try:
        if kind in (bool, "bool"):
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        if kind in (int, "int"):
            return int(raw)
        if kind in (float, "float"):
            return float(raw)
        if kind in (tuple, "tuple"):
            return tuple(int(v) for v in raw.split(",") if v.strip())
    except ValueError:
        raise InvalidConfig(f"{name}: cannot parse {raw!r}") from None
    return raw


def parse_key_values(text: str, cls) -> dict:
    """Parse ``key = value`` lines into typed values for dataclass ``cls``."""
    kinds = {f.name: f.type for f in dataclasses.fields(cls)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidConfig(f"line {lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        key = _ALIASES.get(key, key.replace("-", "_"))
        if key not in kinds:
            raise InvalidConfig(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, kinds[key], raw)
    return values


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    cfg = (base or RunConfig()).replace(**parse_key_values(text, RunConfig))
    cfg.validate()
    return cfg


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        key = "lambda" if f.name == "lam" else f.name
        lines.append(f"{key} = {str(value).lower() if isinstance(value, bool) else value}")
    return "\n".join(lines) + "\n"


def load_data(cfg: RunConfig):
    """Return ``(task, source, heldout)``; ``task`` is ``None`` for feature files."""
    if cfg.source_file:
        src = read_features(cfg.source_file).labeled()
        held = read_features(cfg.heldout_file).labeled() if cfg.heldout_file else None
        return None, src, held
    return generate_task(cfg.task_config)


def init_model(cfg: RunConfig, source: LabeledSet, num_classes: int | None = None) -> MdaaModel:
    cfg.validate()
    specs = default_specs(
        source.audio.shape[1],
        source.video.shape[1],
        cfg.phi,
        seed=cfg.seed,
        nonlinearity=Nonlinearity.parse(cfg.nonlinearity),
        scale=cfg.expansion_scale or None,
    )
    return build_model(
        source.audio,
        source.video,
        source.labels,
        num_classes or cfg.num_classes,
        specs,
        cfg.gamma,
        cfg.fusion,
        cfg.class_balance,
    )


def schedule_for(cfg: RunConfig) -> PhaseSchedule:
    if cfg.schedule == "none":
        return PhaseSchedule(())
    if cfg.schedule == "clean":
        return clean_schedule(6, cfg.phase_samples, cfg.batch_size or 64)
    return preset_schedule(
        cfg.schedule,
        cfg.phase_samples,
        cfg.batch_size or None,
        cfg.severity_scale,
        reverse=cfg.direction == "backward",
    )


def run_stream(model: MdaaModel, batches, descriptions, ablation: str | None = None):
    """Feed ``(phase_index, ModalBatch, labels)`` triples through the model.

    Returns per-phase reports and the full event log.
    """
    per_phase: dict = {}
    log = []
    offset = 0
    for phase_index, batch, labels in batches:
        _, events = model.infer_and_adapt(batch, start_index=offset, ablation=ablation)
        offset += len(events)
        log.extend(events)
        evs, truth = per_phase.setdefault(phase_index, ([], []))
        evs.extend(events)
        truth.append(np.asarray(labels))
    reports = []
    for idx in sorted(per_phase):
        evs, truth = per_phase[idx]
        reports.append(score_phase(evs, np.concatenate(truth), idx, descriptions[idx]))
    return reports, log


def _rss_bytes() -> int:
    return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss * 1024


def adapt_run(
    cfg: RunConfig,
    model: MdaaModel,
    task=None,
    heldout: LabeledSet | None = None,
    schedule: PhaseSchedule | None = None,
    ablation: str | None = None,
) -> tuple[RunReport, list]:
    """Stream a schedule (or the configured target file) through ``model``.

    Forgetting is measured on ``heldout`` against the model's state on entry.
    """
    if heldout is not None and model.baseline_accuracy is None:
        model.record_baseline(heldout.batch, heldout.labels)
    rss0, t0 = _rss_bytes(), time.perf_counter()
    if cfg.target_file:
        data = read_features(cfg.target_file)
        bs = cfg.batch_size or 64
        batches = (
            (0, ModalBatch(data.audio[i : i + bs], data.video[i : i + bs]), data.labels[i : i + bs])
            for i in range(0, len(data.labels), bs)
        )
        descriptions = [Path(cfg.target_file).name]
    else:
        schedule = schedule if schedule is not None else schedule_for(cfg)
        if schedule.phases and task is None:
            raise InvalidConfig("synthetic schedules need a synthetic task")
        batches = ((sb.phase_index, sb.batch, sb.labels) for sb in stream(task, schedule))
        descriptions = [ph.describe() for ph in schedule.phases]
    phases, log = run_stream(model, batches, descriptions, ablation)
    report = RunReport(phases)
    report.wall_time = time.perf_counter() - t0
    report.peak_memory = max(_rss_bytes() - rss0, 0)
    if heldout is not None:
        report.forgetting = measure_forgetting(model, heldout)
    return report, log


def run_config(cfg: RunConfig, ablation: str | None = None) -> tuple[RunReport, list, MdaaModel]:
    """Full pipeline from a config: data, source init, stream, report."""
    task, src, held = load_data(cfg)
    model = init_model(cfg, src)
    report, log = adapt_run(cfg, model, task, held, ablation=ablation)
    return report, log, model


def sweep(cfg: RunConfig, axis: str, values) -> list:
    """One full run per value along ``axis``, all sharing the same seeds."""
    if axis not in SWEEP_AXES:
        raise InvalidConfig(f"sweep axis must be one of {sorted(SWEEP_AXES)}")
    field_name = SWEEP_AXES[axis]
    results = []
    for v in values:
        v = int(v) if field_name == "top_n" else float(v)
        run_cfg = cfg.replace(**{field_name: v})
        if field_name == "lam":
            run_cfg = run_cfg.replace(dynamic=True)
        run_cfg.validate()
        report, _, _ = run_config(run_cfg)
        results.append((v, report))
    return results


def sweep_table(axis: str, results) -> str:
    lines = [f"{axis:>10} | {'avg top-1 (%)':>13} | {'forgetting (pts)':>16}"]
    lines.append("-" * len(lines[0]))
    for v, rep in results:
        forget = "" if rep.forgetting is None else f"{100 * rep.forgetting:.2f}"
        lines.append(f"{v:>10g} | {100 * rep.average_top1:>13.2f} | {forget:>16}")
    return "\n".join(lines) + "\n"
