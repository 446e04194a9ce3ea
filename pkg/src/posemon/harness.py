"""Experiment driver: run monitors over a dataset, correlate, prune, ablate, time."""
from __future__ import annotations

import logging
import math
import time
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .core import FrameSample, split_dataset
from .metrics import (HIGHER_IS_BETTER as METRIC_HIGHER_IS_BETTER, LOSS_NAMES, LossVector, UndefinedStatistic,
                      compute_targets, pearson, predicted_mask, spearman)
from .monitors import (DEFAULT_CANNY_HIGH, DEFAULT_CANNY_LOW, DEFAULT_HISTORY, HIGHER_IS_BETTER, HIGHER_IS_WORSE,
                       POLARITY, TimeMonitor, canny_m, default_joint_weights, external_mask_m, feature_m)

log = logging.getLogger(__name__)

MONITOR_NAMES = ("featurem", "cannym", "timem", "maskm")
ATOM_SCORES = tuple(f"atom:{m}" for m in LOSS_NAMES)
ABLATION_VARIANTS = ("full", "noAug", "noMask", "noJoint")


class TimeSeriesError(ValueError):
    """TimeM was asked to score frames that are not a per-subject time series."""


@dataclass(frozen=True)
class MonitorConfig:
    ratio: float = 0.75
    pixel_gate: float = 26.0
    canny_low: float = DEFAULT_CANNY_LOW
    canny_high: float = DEFAULT_CANNY_HIGH
    kernel: int = 5
    history: int = DEFAULT_HISTORY
    max_keypoints: int = 500
    feature_mask_mode: str = "canny"
    strict_iou: bool = False
    joint_weights: tuple | None = None

    def to_dict(self) -> dict:
        d = OrderedDict((k, getattr(self, k)) for k in self.__dataclass_fields__)
        if d["joint_weights"] is not None:
            d["joint_weights"] = [float(w) for w in d["joint_weights"]]
        return d


@dataclass
class FrameRecord:
    frame_id: str
    subject_id: str
    timestamp: float
    scores: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)
    times: dict = field(default_factory=dict)
    losses: LossVector | None = None
    corruption_level: float | None = None

    def to_dict(self) -> dict:
        return OrderedDict([
            ("frame_id", self.frame_id),
            ("subject_id", self.subject_id),
            ("timestamp", self.timestamp),
            ("scores", OrderedDict((k, self.scores[k]) for k in sorted(self.scores))),
            ("flags", sorted(f"{k}:{f}" for k, fs in self.flags.items() for f in fs)),
            ("times", OrderedDict((k, self.times[k]) for k in sorted(self.times))),
            ("losses", None if self.losses is None else OrderedDict(
                (n, getattr(self.losses, n)) for n in LOSS_NAMES)),
            ("corruption_level", self.corruption_level),
        ])

    @classmethod
    def from_dict(cls, d: dict) -> "FrameRecord":
        flags: dict = {}
        for item in d.get("flags", []):
            name, _, flag = item.partition(":")
            flags.setdefault(name, []).append(flag)
        losses = d.get("losses")
        return cls(
            frame_id=str(d["frame_id"]),
            subject_id=str(d.get("subject_id", "")),
            timestamp=float(d.get("timestamp", 0.0)),
            scores={k: (None if v is None else float(v)) for k, v in d.get("scores", {}).items()},
            flags={k: tuple(v) for k, v in flags.items()},
            times={k: float(v) for k, v in d.get("times", {}).items()},
            losses=None if losses is None else LossVector(*(float(losses[n]) for n in LOSS_NAMES)),
            corruption_level=d.get("corruption_level"),
        )


@dataclass
class MonitorReport:
    records: list = field(default_factory=list)
    polarity: dict = field(default_factory=dict)
    dataset: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.records)

    @property
    def monitors(self) -> list[str]:
        return list(self.polarity)

    def scores(self, name: str) -> np.ndarray:
        """Scores of one monitor, NaN where it produced none."""
        return np.array([np.nan if r.scores.get(name) is None else r.scores[name] for r in self.records])

    def losses(self) -> np.ndarray:
        """``(n, 4)`` true losses, NaN rows where ground truth is missing."""
        return np.array([r.losses.as_array() if r.losses is not None else np.full(4, np.nan)
                         for r in self.records]).reshape(-1, 4)

    def add_scores(self, name: str, values, polarity: str) -> None:
        """Attach an externally computed score column (e.g. an oracle)."""
        if polarity not in (HIGHER_IS_BETTER, HIGHER_IS_WORSE):
            raise ValueError(f"unknown polarity {polarity!r}")
        values = list(values)
        if len(values) != len(self.records):
            raise ValueError(f"{len(values)} scores for {len(self.records)} records")
        for r, v in zip(self.records, values):
            r.scores[name] = None if v is None or not np.isfinite(v) else float(v)
        self.polarity[name] = polarity

    def mean_times(self) -> dict:
        names = sorted({k for r in self.records for k in r.times})
        return OrderedDict((k, float(np.mean([r.times[k] for r in self.records if k in r.times])))
                           for k in names)

    def to_dict(self) -> dict:
        return OrderedDict([
            ("dataset", self.dataset),
            ("config", self.config),
            ("polarity", OrderedDict((k, self.polarity[k]) for k in sorted(self.polarity))),
            ("records", [r.to_dict() for r in self.records]),
        ])

    @classmethod
    def from_dict(cls, d: dict) -> "MonitorReport":
        return cls([FrameRecord.from_dict(r) for r in d.get("records", [])], dict(d.get("polarity", {})),
                   dict(d.get("dataset", {})), dict(d.get("config", {})))


def check_time_series(samples) -> None:
    """Refuse data whose timestamps do not increase strictly within each subject."""
    last: dict = {}
    for s in samples:
        sid, ts = s.subject_id, s.estimate.timestamp
        if sid in last and not ts > last[sid]:
            raise TimeSeriesError(
                f"frame {s.frame_id}: timestamp {ts} does not follow {last[sid]} for {sid}; "
                "TimeM needs each subject's frames in increasing time order")
        last[sid] = ts


def run_monitors(samples, monitors=MONITOR_NAMES, config: MonitorConfig | None = None, model=None,
                 threads: int = 1, template=None) -> MonitorReport:
    """Score every frame with every requested monitor and attach its true losses.

    ``model`` (an ``AtomModel``) adds the four ``atom:<metric>`` scores.
    Stateless monitors run on a pool of ``threads`` workers; TimeM streams
    serially in dataset order.  Per-frame failures become flags.
    """
    config = config or MonitorConfig()
    samples = list(samples)
    monitors = tuple(monitors)
    unknown = set(monitors) - set(MONITOR_NAMES)
    if unknown:
        raise ValueError(f"unknown monitors: {sorted(unknown)}")
    if "timem" in monitors:
        check_time_series(samples)

    polarity = OrderedDict((m, POLARITY[m]) for m in monitors)
    if model is not None:
        polarity.update((k, POLARITY[k]) for k in ATOM_SCORES)
    report = MonitorReport(polarity=polarity, config=config.to_dict(),
                           dataset={"frames": len(samples), "subjects": len({s.subject_id for s in samples})})
    if not samples:
        return report

    def stateless(s: FrameSample):
        rec = FrameRecord(s.frame_id, s.subject_id, float(s.estimate.timestamp),
                          corruption_level=s.corruption_level)
        t0 = time.perf_counter()
        mask = predicted_mask(s)
        t_mask = time.perf_counter() - t0
        checks = [
            ("featurem", lambda: feature_m(s.image, mask, config.ratio, config.pixel_gate, config.canny_low,
                                           config.canny_high, config.max_keypoints, config.feature_mask_mode)),
            ("cannym", lambda: canny_m(s.image, mask, config.kernel, config.canny_low, config.canny_high)),
            ("maskm", lambda: _mask_score(s, mask, config.strict_iou)),
        ]
        for name, fn in checks:
            if name not in monitors:
                continue
            t0 = time.perf_counter()
            try:
                sc = fn()
                rec.scores[name] = float(sc.value)
                if sc.flags:
                    rec.flags[name] = tuple(sc.flags)
            except ValueError as exc:
                rec.scores[name] = None
                rec.flags[name] = (f"error={exc}",)
            rec.times[name] = time.perf_counter() - t0 + t_mask
        if model is not None:
            from .learner.atom import atom_forward
            t0 = time.perf_counter()
            pred = atom_forward(model, s.image, mask, s.estimate.joints, s.estimate.camera)
            rec.times["atom"] = time.perf_counter() - t0 + t_mask
            for name in LOSS_NAMES:
                rec.scores[f"atom:{name}"] = float(getattr(pred, name))
        if s.has_ground_truth:
            rec.losses = compute_targets(s, raster=lambda _s: mask)
        return rec

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            records = list(pool.map(stateless, samples))
    else:
        records = [stateless(s) for s in samples]

    if "timem" in monitors:
        weights = config.joint_weights
        if weights is None:
            from .synth import default_template
            tpl = template or default_template(len(samples[0].estimate.theta), len(samples[0].estimate.beta))
            weights = default_joint_weights(tpl.depths())
        tm = TimeMonitor(weights, config.history)
        for s, rec in zip(samples, records):
            t0 = time.perf_counter()
            sc = tm.observe(s.estimate)
            rec.times["timem"] = time.perf_counter() - t0
            rec.scores["timem"] = float(sc.value)
            if sc.flags:
                rec.flags["timem"] = tuple(sc.flags)

    report.records = records
    return report


def _mask_score(sample: FrameSample, mask, strict_iou: bool):
    if not sample.pseudo_masks:
        raise ValueError("no pseudo masks")
    return external_mask_m(sample.pseudo_masks, mask, strict_iou)


# ---------------------------------------------------------------- correlation

@dataclass(frozen=True)
class CorrelationEntry:
    monitor: str
    metric: str
    pearson: float | None
    spearman: float | None
    n: int
    sign: int

    def to_dict(self) -> dict:
        return OrderedDict([("monitor", self.monitor), ("metric", self.metric), ("pearson", self.pearson),
                            ("spearman", self.spearman), ("n", self.n), ("sign", self.sign)])


def polarity_sign(polarity: str, metric: str) -> int:
    """+1 when a monitor's "better" direction agrees with the metric's, else -1."""
    mon_up = polarity == HIGHER_IS_BETTER
    return 1 if mon_up == METRIC_HIGHER_IS_BETTER[metric] else -1


def correlation_table(report: MonitorReport, metrics=LOSS_NAMES) -> list[CorrelationEntry]:
    """Sign-adjusted Pearson and Spearman of each monitor against each true metric.

    Positive always means "the monitor agrees with the truth".  Entries whose
    statistic is undefined (constant column, fewer than 2 frames) hold None.
    """
    losses = report.losses()
    out = []
    for mon, pol in report.polarity.items():
        x = report.scores(mon)
        for metric in metrics:
            y = losses[:, LOSS_NAMES.index(metric)]
            ok = np.isfinite(x) & np.isfinite(y)
            sign = polarity_sign(pol, metric)
            vals = []
            for stat in (pearson, spearman):
                try:
                    vals.append(sign * stat(x[ok], y[ok]))
                except UndefinedStatistic:
                    vals.append(None)
            out.append(CorrelationEntry(mon, metric, vals[0], vals[1], int(ok.sum()), sign))
    return out


def lookup(table, monitor: str, metric: str, stat: str = "pearson"):
    for e in table:
        if e.monitor == monitor and e.metric == metric:
            return getattr(e, stat)
    raise KeyError((monitor, metric))


# -------------------------------------------------------------------- pruning

@dataclass(frozen=True)
class PruneResult:
    monitor: str
    metric: str
    fraction: float
    n: int
    full_avg: float
    kept_avg: float
    full_worst: float
    kept_worst: float
    avg_improvement: float
    worst_improvement: float
    removed: tuple

    def to_dict(self) -> dict:
        d = OrderedDict((k, getattr(self, k)) for k in self.__dataclass_fields__)
        d["removed"] = list(self.removed)
        for k in ("avg_improvement", "worst_improvement"):
            if not math.isfinite(d[k]):
                d[k] = None
        return d


def percent_improvement(before: float, after: float, higher_is_better: bool) -> float:
    delta = after - before if higher_is_better else before - after
    if delta == 0:
        return 0.0
    if before == 0:
        return math.copysign(math.inf, delta)
    return delta / abs(before) * 100.0


def worst_order(scores, frame_ids, polarity: str) -> list[int]:
    """Indices sorted worst-first; ties go to the smaller frame id."""
    key = (lambda i: (scores[i], frame_ids[i])) if polarity == HIGHER_IS_BETTER else \
        (lambda i: (-scores[i], frame_ids[i]))
    return sorted(range(len(scores)), key=key)


def prune_worst(report: MonitorReport, monitor: str, fraction: float = 0.2, metrics=LOSS_NAMES) -> list[PruneResult]:
    """Drop the ``floor(fraction * n)`` worst-scored frames and measure each metric on the rest.

    Frames lacking the monitor's score or ground truth are not ranked.
    """
    if not 0.0 <= fraction < 1.0:
        raise ValueError(f"fraction must be in [0, 1), got {fraction}")
    if monitor not in report.polarity:
        raise KeyError(f"monitor {monitor!r} not in report")
    scores = report.scores(monitor)
    losses = report.losses()
    ok = np.nonzero(np.isfinite(scores) & np.all(np.isfinite(losses), axis=1))[0]
    ids = [report.records[i].frame_id for i in ok]
    n = len(ok)
    n_drop = int(math.floor(fraction * n))
    order = worst_order(scores[ok].tolist(), ids, report.polarity[monitor])
    drop = set(order[:n_drop])
    kept = np.array([i for i in range(n) if i not in drop], dtype=np.int64)
    removed = tuple(ids[i] for i in order[:n_drop])

    out = []
    for metric in metrics:
        y = losses[ok, LOSS_NAMES.index(metric)]
        up = METRIC_HIGHER_IS_BETTER[metric]
        if n == 0:
            out.append(PruneResult(monitor, metric, fraction, 0, math.nan, math.nan, math.nan, math.nan,
                                   0.0, 0.0, ()))
            continue
        worst = np.min if up else np.max
        full_avg, kept_avg = float(y.mean()), float(y[kept].mean())
        full_w, kept_w = float(worst(y)), float(worst(y[kept]))
        out.append(PruneResult(monitor, metric, fraction, n, full_avg, kept_avg, full_w, kept_w,
                               percent_improvement(full_avg, kept_avg, up),
                               percent_improvement(full_w, kept_w, up), removed))
    return out


# ------------------------------------------------------------------- ablation

def variant_config(base, variant: str, seed: int | None = None):
    changes = {"full": {}, "noAug": {"augment": False}, "noMask": {"use_mask": False},
               "noJoint": {"use_joints": False}}
    if variant not in changes:
        raise ValueError(f"unknown ablation variant {variant!r}")
    cfg = replace(base, **changes[variant])
    return cfg if seed is None else replace(cfg, seed=seed)


def prediction_correlations(model, samples, predictions=None) -> dict:
    """Pearson of each ATOM head against the truth on ``samples``; None if undefined."""
    from .learner.atom import predict_samples
    from .learner.train import target_matrix

    samples = list(samples)
    p = predict_samples(model, samples) if predictions is None else predictions
    y = target_matrix(samples)
    out = OrderedDict()
    for j, name in enumerate(LOSS_NAMES):
        try:
            out[name] = pearson(p[:, j], y[:, j])
        except UndefinedStatistic:
            out[name] = None
    return out


def ablation_run(train_set, val_set, eval_sets: dict, base_config, seeds=(0,), variants=ABLATION_VARIANTS,
                 template=None) -> list[dict]:
    """Train each variant once per seed on identical splits; correlate on every eval set.

    Returns rows ``{variant, seed, eval_set, correlations, best_epoch, train_seconds}``.
    """
    from .learner import init_model, train

    rows = []
    for seed in seeds:
        for variant in variants:
            cfg = variant_config(base_config, variant, seed)
            t0 = time.perf_counter()
            model, hist = train(init_model(cfg), train_set, val_set, cfg, template)
            elapsed = time.perf_counter() - t0
            log.info("ablation %s seed %d trained in %.1fs", variant, seed, elapsed)
            for name, samples in eval_sets.items():
                rows.append(OrderedDict([
                    ("variant", variant), ("seed", int(seed)), ("eval_set", name),
                    ("correlations", prediction_correlations(model, samples)),
                    ("best_epoch", hist.best_epoch), ("train_seconds", elapsed),
                ]))
    return rows


def ablation_means(rows) -> list[dict]:
    """Average each (variant, eval set, metric) correlation over seeds, skipping undefined ones."""
    groups: dict = OrderedDict()
    for r in rows:
        groups.setdefault((r["variant"], r["eval_set"]), []).append(r["correlations"])
    out = []
    for (variant, eval_set), cors in groups.items():
        means = OrderedDict()
        for m in LOSS_NAMES:
            vals = [c[m] for c in cors if c.get(m) is not None]
            means[m] = float(np.mean(vals)) if vals else None
        out.append(OrderedDict([("variant", variant), ("eval_set", eval_set), ("seeds", len(cors)),
                                ("correlations", means)]))
    return out


# ------------------------------------------------------------------ benchmark

@dataclass(frozen=True)
class BenchmarkConfig:
    """The synthetic directional benchmark: mixed-corruption sequences plus a harder shard."""

    subjects: int = 3
    frames: int = 200
    clutter: float = 0.5
    levels: tuple = (0.0, 0.1, 0.2, 0.3)
    shard_levels: tuple = (0.3, 0.4, 0.5)
    shard_subjects: int = 2
    shard_frames: int = 60
    size: int = 128


def benchmark_data(seed: int, bench: BenchmarkConfig | None = None, threads: int = 1, template=None):
    """``(train, val, test, shard)`` for one seed; the shard uses unseen subjects and larger noise."""
    from .synth import SceneConfig, generate_sequences, mixed_specs

    b = bench or BenchmarkConfig()
    scene = SceneConfig(width=b.size, height=b.size, clutter_density=b.clutter, clutter_seed=seed)
    data = generate_sequences(template, scene, b.subjects, b.frames, mixed_specs(b.levels), seed=seed,
                              threads=threads)
    shard_seed = seed + 1000
    shard_scene = replace(scene, clutter_seed=shard_seed)
    shard = generate_sequences(template, shard_scene, b.shard_subjects, b.shard_frames,
                               mixed_specs(b.shard_levels), seed=shard_seed, threads=threads)
    train, val, test = split_dataset(data)
    return train, val, test, shard


def level_trend(samples) -> tuple[float, dict]:
    """Spearman between corruption level and the per-level mean MPJPE, plus those means."""
    from .metrics import mpjpe

    groups: dict = {}
    for s in samples:
        groups.setdefault(float(s.corruption_level or 0.0), []).append(mpjpe(s.estimate.joints, s.gt_joints))
    levels = sorted(groups)
    means = OrderedDict((lv, float(np.mean(groups[lv]))) for lv in levels)
    return spearman(levels, list(means.values())), means


def timing_summary(report: MonitorReport) -> dict:
    t = report.mean_times()
    suite = sum(t.get(m, 0.0) for m in MONITOR_NAMES)
    out = OrderedDict((f"{k}_s", v) for k, v in t.items())
    out["model_based_suite_s"] = suite
    return out


def bench_monitors(samples, config: MonitorConfig | None = None, warmup: int = 3) -> dict:
    """Single-threaded mean seconds per frame for each model-based monitor, warm-up excluded."""
    samples = list(samples)
    if len(samples) <= warmup:
        raise ValueError(f"need more than {warmup} frames to time")
    run_monitors(samples[:warmup], config=config)
    rep = run_monitors(samples[warmup:], config=config)
    return timing_summary(rep)
