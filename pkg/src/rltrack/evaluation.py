"""Benchmark protocols (OPE, TRE, SRE), internal baselines, interval sweep and reports."""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .boxes import BoundingBox
from .data.sequences import Sequence as TrackSequence
from .matching import MatchingNet
from .metrics import THRESHOLDS, auc, iou, success_curve
from .policy import PolicyNet
from .tracker import Tracker, TrackerConfig, run_lockstep

PROTOCOLS = ("ope", "tre", "sre")
BASELINE_MODES = ("rl", "ml", "rand", "single")
TRE_SEGMENTS = 20
SRE_SHIFT = 0.1
SRE_SCALES = (0.8, 0.9, 1.1, 1.2)
SRE_CONVENTION = (
    "SRE: 12 initialisations per sequence; 8 shifts of the frame-0 box by 10% of its width/height "
    "(left, right, up, down and the four diagonals) and 4 scalings (0.8, 0.9, 1.1, 1.2) about its centre; "
    "the unperturbed control run is reported separately and excluded from the aggregate"
)


@dataclass
class RunRecord:
    sequence: str
    label: str  # "ope", "tre-05", "sre-shift-l", "control", ...
    start: int
    ious: List[float]
    boxes: List[BoundingBox] = field(repr=False, default_factory=list)

    @property
    def auc(self) -> float:
        return auc(success_curve(self.ious))


@dataclass
class EvalRun:
    protocol: str
    mode: str
    seed: int
    records: List[RunRecord]
    config: Dict[str, object] = field(default_factory=dict)

    @property
    def scored(self) -> List[RunRecord]:
        return [r for r in self.records if r.label != "control"]

    @property
    def frame_weighted(self) -> bool:
        return self.protocol == "tre"

    def _aggregate(self, records: Sequence[RunRecord]) -> float:
        if not records:
            return float("nan")
        aucs = np.array([r.auc for r in records])
        if self.frame_weighted:
            w = np.array([len(r.ious) for r in records], dtype=np.float64)
            return float(np.sum(aucs * w) / np.sum(w))
        return float(np.mean(aucs))

    @property
    def auc(self) -> float:
        return self._aggregate(self.scored)

    def sequence_aucs(self) -> Dict[str, float]:
        names = list(dict.fromkeys(r.sequence for r in self.scored))
        return {n: self._aggregate([r for r in self.scored if r.sequence == n]) for n in names}

    def curve(self) -> np.ndarray:
        """Aggregate success rates per threshold, weighted like the AUC."""
        recs = self.scored
        rates = np.array([success_curve(r.ious).success_rate for r in recs])
        if self.frame_weighted:
            w = np.array([len(r.ious) for r in recs], dtype=np.float64)
            return (rates * w[:, None]).sum(axis=0) / w.sum()
        return rates.mean(axis=0)


# run planning


@dataclass(frozen=True)
class Job:
    sequence: TrackSequence
    label: str
    start: int
    init_box: BoundingBox


def tre_starts(length: int, segments: int = TRE_SEGMENTS) -> List[int]:
    return [(i * length) // segments for i in range(segments)]


def sre_initialisations(box: BoundingBox) -> List[Tuple[str, BoundingBox]]:
    dx, dy = SRE_SHIFT * box.w, SRE_SHIFT * box.h
    shifts = {
        "shift-l": (-dx, 0.0),
        "shift-r": (dx, 0.0),
        "shift-u": (0.0, -dy),
        "shift-d": (0.0, dy),
        "shift-ul": (-dx, -dy),
        "shift-ur": (dx, -dy),
        "shift-dl": (-dx, dy),
        "shift-dr": (dx, dy),
    }
    out = [(k, box.moved_to(box.cx + sx, box.cy + sy)) for k, (sx, sy) in shifts.items()]
    out += [(f"scale-{s}", box.scaled(s)) for s in SRE_SCALES]
    return out


def plan_jobs(protocol: str, sequences: Sequence[TrackSequence]) -> List[Job]:
    if protocol not in PROTOCOLS:
        raise ValueError(f"unknown protocol {protocol!r}")
    jobs: List[Job] = []
    for seq in sequences:
        gt0 = seq.ground_truth[0]
        if protocol == "ope":
            jobs.append(Job(seq, "ope", 0, gt0))
        elif protocol == "tre":
            if len(seq) < TRE_SEGMENTS:
                warnings.warn(f"sequence {seq.name} has {len(seq)} frames; TRE needs {TRE_SEGMENTS}, skipped")
                continue
            for i, s in enumerate(tre_starts(len(seq))):
                jobs.append(Job(seq, f"tre-{i:02d}", s, seq.ground_truth[s]))
        else:
            jobs.append(Job(seq, "control", 0, gt0))
            jobs += [Job(seq, f"sre-{name}", 0, b) for name, b in sre_initialisations(gt0)]
    return jobs


def execute(
    matcher: MatchingNet,
    policy: Optional[PolicyNet],
    config: TrackerConfig,
    jobs: Sequence[Job],
    seed: int = 0,
) -> List[RunRecord]:
    """Track every job (lockstep-batched) and score each frame against ground truth.

    Frame ``start`` is scored with the initialisation box itself.
    """
    trackers = []
    for k, job in enumerate(jobs):
        rng = np.random.default_rng([seed, k]) if config.mode in ("rand", "sample") else None
        t = Tracker(matcher, policy if config.mode in ("rl", "sample") else None, config, rng)
        t.initialize(job.sequence.frames[job.start], job.init_box)
        trackers.append((t, job.sequence.frames[job.start + 1 :]))
    results = run_lockstep(matcher, trackers)
    records = []
    for job, res in zip(jobs, results):
        boxes = [job.init_box] + [r.box for r in res]
        gt = job.sequence.ground_truth[job.start :]
        records.append(RunRecord(job.sequence.name, job.label, job.start, [iou(b, g) for b, g in zip(boxes, gt)], boxes))
    return records


def _config_snapshot(config: TrackerConfig, extra: Optional[dict] = None) -> Dict[str, object]:
    snap = {k: v for k, v in asdict(config).items()}
    if extra:
        snap.update(extra)
    return snap


def run_protocol(
    protocol: str,
    matcher: MatchingNet,
    policy: Optional[PolicyNet],
    config: TrackerConfig,
    sequences: Sequence[TrackSequence],
    seed: int = 0,
) -> EvalRun:
    if not sequences:
        raise ValueError("no sequences to evaluate")
    if config.mode in ("rl", "sample") and policy is None:
        raise ValueError(f"mode {config.mode!r} needs policy weights")
    records = execute(matcher, policy, config, plan_jobs(protocol, sequences), seed)
    return EvalRun(protocol, config.mode, seed, records, _config_snapshot(config))


def run_ope(matcher, policy, config: TrackerConfig, sequences, seed: int = 0) -> EvalRun:
    return run_protocol("ope", matcher, policy, config, sequences, seed)


def run_tre(matcher, policy, config: TrackerConfig, sequences, seed: int = 0) -> EvalRun:
    return run_protocol("tre", matcher, policy, config, sequences, seed)


def run_sre(matcher, policy, config: TrackerConfig, sequences, seed: int = 0) -> EvalRun:
    return run_protocol("sre", matcher, policy, config, sequences, seed)


def run_baselines(
    matcher: MatchingNet,
    policy: Optional[PolicyNet],
    config: TrackerConfig,
    sequences: Sequence[TrackSequence],
    modes: Sequence[str] = BASELINE_MODES,
    seed: int = 0,
    protocol: str = "ope",
) -> Dict[str, EvalRun]:
    """Same tracker and sequences under each template-selection mode."""
    for m in modes:
        if m not in BASELINE_MODES:
            raise ValueError(f"unknown mode {m!r}; expected one of {BASELINE_MODES}")
    jobs = plan_jobs(protocol, sequences)
    out = {}
    for m in modes:
        cfg = replace(config, mode=m)
        out[m] = EvalRun(protocol, m, seed, execute(matcher, policy, cfg, jobs, seed), _config_snapshot(cfg))
    return out


def run_interval_sweep(
    matcher: MatchingNet,
    policy: Optional[PolicyNet],
    config: TrackerConfig,
    sequences: Sequence[TrackSequence],
    intervals: Sequence[int],
    seed: int = 0,
    protocol: str = "ope",
) -> List[Tuple[int, EvalRun]]:
    rows = []
    jobs = plan_jobs(protocol, sequences)
    for k in intervals:
        if int(k) < 1:
            raise ValueError(f"update interval must be positive, got {k}")
        cfg = replace(config, update_interval=int(k))
        rows.append((int(k), EvalRun(protocol, cfg.mode, seed, execute(matcher, policy, cfg, jobs, seed), _config_snapshot(cfg))))
    return rows


# reports


def _fmt(v: float) -> str:
    return f"{v:.6f}"


def report_stem(run: EvalRun) -> str:
    return f"{run.protocol}_{run.mode}_seed{run.seed}"


def _header(run: EvalRun) -> List[str]:
    lines = [f"# protocol={run.protocol}", f"# mode={run.mode}", f"# seed={run.seed}"]
    lines += [f"# config.{k}={v}" for k, v in sorted(run.config.items())]
    if run.protocol == "sre":
        lines.append(f"# {SRE_CONVENTION}")
    if run.protocol == "tre":
        lines.append(f"# TRE: {TRE_SEGMENTS} uniform start frames per sequence; aggregate weighted by frames")
    return lines


def _svg(run: EvalRun, points: List[Tuple[str, str]]) -> str:
    w, h, m = 480, 360, 50
    pw, ph = w - 2 * m, h - 2 * m

    def xy(t: str, r: str) -> str:
        return f"{m + float(t) * pw:.2f},{m + (1 - float(r)) * ph:.2f}"

    poly = " ".join(xy(t, r) for t, r in points)
    title = f"{run.protocol.upper()} success plot, mode {run.mode} [AUC {_fmt(run.auc)}]"
    ticks = []
    for i in range(6):
        v = i / 5
        ticks.append(f'<text x="{m + v * pw:.2f}" y="{h - m + 18}" font-size="11" text-anchor="middle">{v:.1f}</text>')
        ticks.append(f'<text x="{m - 8}" y="{m + (1 - v) * ph + 4:.2f}" font-size="11" text-anchor="end">{v:.1f}</text>')
    dots = "\n".join(
        f'  <circle cx="{xy(t, r).split(",")[0]}" cy="{xy(t, r).split(",")[1]}" r="2.5" data-threshold="{t}" data-rate="{r}"/>'
        for t, r in points
    )
    return "\n".join(
        [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
            f'<rect width="{w}" height="{h}" fill="white"/>',
            f'<rect x="{m}" y="{m}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
            f'<text x="{w / 2}" y="{m - 18}" font-size="14" text-anchor="middle">{title}</text>',
            f'<text x="{w / 2}" y="{h - 10}" font-size="12" text-anchor="middle">overlap threshold</text>',
            f'<text x="14" y="{h / 2}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {h / 2})">success rate</text>',
            *ticks,
            f'<polyline fill="none" stroke="#1f5fa8" stroke-width="2" points="{poly}"/>',
            '<g fill="#1f5fa8">',
            dots,
            "</g>",
            "</svg>",
            "",
        ]
    )


def emit_report(run: EvalRun, out_dir) -> List[Path]:
    """Write per-frame, per-sequence and aggregate tables plus an SVG success plot.

    Returns the four paths. Output depends only on the run, so identical runs
    give byte-identical files.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = report_stem(run)
    header = _header(run)

    frames = header + ["sequence\trun\tframe\tiou"]
    for r in run.records:
        frames += [f"{r.sequence}\t{r.label}\t{r.start + i}\t{_fmt(v)}" for i, v in enumerate(r.ious)]

    seqs = header + ["sequence\truns\tframes\tauc"]
    for name, a in run.sequence_aucs().items():
        recs = [r for r in run.scored if r.sequence == name]
        seqs.append(f"{name}\t{len(recs)}\t{sum(len(r.ious) for r in recs)}\t{_fmt(a)}")

    points = [(_fmt(t), _fmt(v)) for t, v in zip(THRESHOLDS, run.curve())]
    summary = header + ["threshold\tsuccess_rate"] + [f"{t}\t{r}" for t, r in points]
    summary += [f"# auc\t{_fmt(run.auc)}", f"# runs\t{len(run.scored)}"]

    paths = [out / f"{stem}_frames.tsv", out / f"{stem}_sequences.tsv", out / f"{stem}_summary.tsv", out / f"{stem}_success.svg"]
    for p, lines in zip(paths[:3], (frames, seqs, summary)):
        p.write_text("\n".join(lines) + "\n")
    paths[3].write_text(_svg(run, points))
    return paths


def comparison_table(runs: Dict[str, EvalRun]) -> str:
    lines = ["mode\tauc"] + [f"{m}\t{_fmt(r.auc)}" for m, r in runs.items()]
    return "\n".join(lines) + "\n"


def sweep_table(rows: Sequence[Tuple[int, EvalRun]]) -> str:
    return "\n".join(["interval\tauc"] + [f"{k}\t{_fmt(r.auc)}" for k, r in rows]) + "\n"
