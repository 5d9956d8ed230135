"""Scoring adaptation logs and rendering run reports.

Reports are pure functions of the event log plus ground truth, so re-scoring
a stored log reproduces the same bytes. Wall time and memory are the only
non-deterministic fields; they are left out of emitted reports unless asked
for.
"""

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import LengthMismatch, NotInitialized
from .expansion import BRANCH_PRIORITY, Branch

FORMATS = ("json_lines", "table_text", "csv")
_BRANCH_LABELS = tuple(b.label for b in BRANCH_PRIORITY)


@dataclass
class PhaseReport:
    phase_index: int
    corruption: str
    samples: int
    top1: float
    per_ac_top1: dict
    acceptance_rate: dict
    leader_share: dict

    def to_dict(self) -> dict:
        return {
            "record": "phase",
            "phase_index": self.phase_index,
            "corruption": self.corruption,
            "samples": self.samples,
            "top1": self.top1,
            "per_ac_top1": dict(self.per_ac_top1),
            "acceptance_rate": dict(self.acceptance_rate),
            "leader_share": dict(self.leader_share),
        }


@dataclass
class RunReport:
    phases: list = field(default_factory=list)
    forgetting: float | None = None
    wall_time: float | None = None
    peak_memory: int | None = None

    @property
    def samples(self) -> int:
        return sum(p.samples for p in self.phases)

    @property
    def average_top1(self) -> float:
        total = self.samples
        if total == 0:
            return 0.0
        return sum(p.top1 * p.samples for p in self.phases) / total

    def summary(self, include_timing: bool = False) -> dict:
        out = {
            "record": "summary",
            "phases": len(self.phases),
            "samples": self.samples,
            "average_top1": self.average_top1,
            "forgetting": self.forgetting,
        }
        if include_timing:
            out["wall_time_s"] = self.wall_time
            out["peak_memory_bytes"] = self.peak_memory
        return out


def score_phase(
    events, truth, phase_index: int = 0, corruption: str = "clean"
) -> PhaseReport:
    """Summarize one phase of adaptation events against ground truth.

    Samples labelled ``-1`` count toward acceptance and leader shares but not
    toward accuracy.
    """
    truth = np.asarray(truth, dtype=np.int64).ravel()
    if len(events) != truth.size:
        raise LengthMismatch(f"{len(events)} events but {truth.size} labels")
    n = len(events)
    labeled = truth >= 0
    n_labeled = int(labeled.sum())
    branches = [b for b in BRANCH_PRIORITY if not events or b in events[0].maps]
    preds = np.array([e.prediction for e in events], dtype=np.int64)
    top1 = float(np.mean(preds[labeled] == truth[labeled])) if n_labeled else 0.0
    per_ac, accept, lead = {}, {}, {}
    for b in branches:
        ac_preds = np.array([e.ac_predictions[b] for e in events], dtype=np.int64)
        per_ac[b.label] = (
            float(np.mean(ac_preds[labeled] == truth[labeled])) if n_labeled else 0.0
        )
        accept[b.label] = sum(e.gates[b].accepted for e in events) / n if n else 0.0
        lead[b.label] = sum(e.leader is b for e in events) / n if n else 0.0
    return PhaseReport(phase_index, corruption, n_labeled, top1, per_ac, accept, lead)


def measure_forgetting(model, clean_heldout) -> float:
    """Clean held-out accuracy at source-init time minus accuracy now."""
    if model.baseline_accuracy is None:
        raise NotInitialized("no baseline accuracy recorded for this model")
    preds = model.infer_only(clean_heldout.batch)
    after = float(np.mean(preds == np.asarray(clean_heldout.labels)))
    return model.baseline_accuracy - after


def emit_report(run: RunReport, format: str = "json_lines", include_timing: bool = False) -> bytes:
    if format == "json_lines":
        lines = [json.dumps(p.to_dict(), sort_keys=True) for p in run.phases]
        lines.append(json.dumps(run.summary(include_timing), sort_keys=True))
        return ("\n".join(lines) + "\n").encode()
    if format == "csv":
        return _emit_csv(run, include_timing)
    if format == "table_text":
        return _emit_table(run, include_timing)
    raise ValueError(f"unknown report format {format!r}; choose from {FORMATS}")


def parse_json_lines(blob: bytes) -> RunReport:
    run = RunReport()
    for line in blob.decode().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        if rec["record"] == "phase":
            run.phases.append(
                PhaseReport(
                    rec["phase_index"],
                    rec["corruption"],
                    rec["samples"],
                    rec["top1"],
                    rec["per_ac_top1"],
                    rec["acceptance_rate"],
                    rec["leader_share"],
                )
            )
        else:
            run.forgetting = rec.get("forgetting")
            run.wall_time = rec.get("wall_time_s")
            run.peak_memory = rec.get("peak_memory_bytes")
    return run


def _emit_csv(run: RunReport, include_timing: bool) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["record", "phase_index", "corruption", "samples", "top1"]
    header += [f"top1_{b}" for b in _BRANCH_LABELS]
    header += [f"accept_{b}" for b in _BRANCH_LABELS]
    header += [f"leader_{b}" for b in _BRANCH_LABELS]
    header += ["forgetting"]
    if include_timing:
        header += ["wall_time_s", "peak_memory_bytes"]
    w.writerow(header)
    for p in run.phases:
        row = ["phase", p.phase_index, p.corruption, p.samples, repr(p.top1)]
        for table in (p.per_ac_top1, p.acceptance_rate, p.leader_share):
            row += [repr(table[b]) if b in table else "" for b in _BRANCH_LABELS]
        row += [""]
        if include_timing:
            row += ["", ""]
        w.writerow(row)
    summary = ["summary", "", "", run.samples, repr(run.average_top1)]
    summary += [""] * (3 * len(_BRANCH_LABELS))
    summary += ["" if run.forgetting is None else repr(run.forgetting)]
    if include_timing:
        summary += [run.wall_time, run.peak_memory]
    w.writerow(summary)
    return buf.getvalue().encode()


def _emit_table(run: RunReport, include_timing: bool) -> bytes:
    cols = [p.corruption for p in run.phases] + ["Avg."]
    rows = [("MDAA top-1 (%)", [p.top1 for p in run.phases], run.average_top1)]

    def weighted(key, b):
        total = run.samples
        if not total:
            return 0.0
        return sum(getattr(p, key).get(b, 0.0) * p.samples for p in run.phases) / total

    for key, title in (
        ("per_ac_top1", "AC {} top-1 (%)"),
        ("acceptance_rate", "accept {} (%)"),
        ("leader_share", "leader {} (%)"),
    ):
        for b in _BRANCH_LABELS:
            rows.append(
                (title.format(b), [getattr(p, key).get(b, 0.0) for p in run.phases], weighted(key, b))
            )
    label_w = max(len(r[0]) for r in rows)
    col_w = max([8] + [len(c) for c in cols])
    lines = [" " * label_w + " | " + " ".join(c.rjust(col_w) for c in cols)]
    lines.append("-" * len(lines[0]))
    for title, values, avg in rows:
        cells = [f"{100 * v:.2f}".rjust(col_w) for v in values + [avg]]
        lines.append(title.ljust(label_w) + " | " + " ".join(cells))
    if run.forgetting is not None:
        lines.append(f"forgetting (clean held-out, pts): {100 * run.forgetting:.2f}")
    if include_timing and run.wall_time is not None:
        lines.append(f"wall time: {run.wall_time:.3f} s; peak RSS delta: {run.peak_memory} bytes")
    return ("\n".join(lines) + "\n").encode()


__all__ = [
    "Branch",
    "FORMATS",
    "PhaseReport",
    "RunReport",
    "emit_report",
    "measure_forgetting",
    "parse_json_lines",
    "score_phase",
]
