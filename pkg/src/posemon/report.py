"""Write harness results as JSON, Markdown and CSV, with optional matplotlib figures."""
from __future__ import annotations

import csv
import json
import math
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .harness import CorrelationEntry, MonitorReport, PruneResult, polarity_sign
from .metrics import LOSS_NAMES

SCHEMA_VERSION = 1
# top-level keys, always present and always in this order
REPORT_KEYS = ("schema", "dataset", "config", "correlations", "pruning", "ablation", "timing", "extra", "figures")


def _clean(v):
    """JSON-safe copy: non-finite floats become null, numpy scalars become Python ones."""
    if isinstance(v, dict):
        return OrderedDict((str(k), _clean(x)) for k, x in v.items())
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else None
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    if isinstance(v, np.ndarray):
        return _clean(v.tolist())
    return v


def build_payload(report: MonitorReport | None = None, correlations=(), pruning=(), ablation=(), timing=None,
                  extra=None, figures=()) -> OrderedDict:
    out = OrderedDict((k, None) for k in REPORT_KEYS)
    out["schema"] = SCHEMA_VERSION
    out["dataset"] = dict(report.dataset) if report is not None else {}
    out["config"] = dict(report.config) if report is not None else {}
    out["correlations"] = [c.to_dict() if isinstance(c, CorrelationEntry) else c for c in correlations]
    out["pruning"] = [p.to_dict() if isinstance(p, PruneResult) else p for p in pruning]
    out["ablation"] = list(ablation)
    out["timing"] = dict(timing or {})
    out["extra"] = dict(extra or {})
    out["figures"] = list(figures)
    return _clean(out)


def _fmt(v, digits=3):
    if v is None:
        return "undef"
    if isinstance(v, float):
        return "inf" if math.isinf(v) else f"{v:.{digits}f}"
    return str(v)


def correlation_markdown(entries, stat: str = "pearson") -> str:
    entries = [c.to_dict() if isinstance(c, CorrelationEntry) else c for c in entries]
    monitors = list(OrderedDict.fromkeys(e["monitor"] for e in entries))
    metrics = [m for m in LOSS_NAMES if any(e["metric"] == m for e in entries)]
    cell = {(e["monitor"], e["metric"]): e[stat] for e in entries}
    lines = [f"| monitor | {' | '.join(metrics)} |", "|---" * (len(metrics) + 1) + "|"]
    for mon in monitors:
        lines.append(f"| {mon} | " + " | ".join(_fmt(cell.get((mon, m))) for m in metrics) + " |")
    return "\n".join(lines)


def pruning_markdown(results) -> str:
    rows = [p.to_dict() if isinstance(p, PruneResult) else p for p in results]
    lines = ["| monitor | metric | n | removed | avg before | avg after | avg impr. % | worst before | "
             "worst after | worst impr. % |", "|---" * 10 + "|"]
    for r in rows:
        lines.append("| " + " | ".join([
            r["monitor"], r["metric"], str(r["n"]), str(len(r["removed"])), _fmt(r["full_avg"], 4),
            _fmt(r["kept_avg"], 4), _fmt(r["avg_improvement"], 1), _fmt(r["full_worst"], 4),
            _fmt(r["kept_worst"], 4), _fmt(r["worst_improvement"], 1)]) + " |")
    return "\n".join(lines)


def ablation_markdown(rows) -> str:
    lines = [f"| variant | eval set | seeds | {' | '.join(LOSS_NAMES)} |", "|---" * (len(LOSS_NAMES) + 3) + "|"]
    for r in rows:
        seeds = r.get("seeds", r.get("seed", ""))
        lines.append(f"| {r['variant']} | {r['eval_set']} | {seeds} | "
                     + " | ".join(_fmt(r["correlations"].get(m)) for m in LOSS_NAMES) + " |")
    return "\n".join(lines)


def timing_markdown(timing: dict) -> str:
    lines = ["| stage | seconds / frame |", "|---|---|"]
    lines += [f"| {k} | {_fmt(v, 4)} |" for k, v in timing.items()]
    return "\n".join(lines)


def markdown(payload: dict) -> str:
    parts = ["# Monitor report", ""]
    if payload["dataset"]:
        parts += ["Dataset: " + ", ".join(f"{k}={v}" for k, v in payload["dataset"].items()), ""]
    if payload["correlations"]:
        parts += ["## Loss correlation (Pearson, positive = agrees with truth)", "",
                  correlation_markdown(payload["correlations"]), "",
                  "## Loss correlation (Spearman)", "", correlation_markdown(payload["correlations"], "spearman"), ""]
    if payload["ablation"]:
        parts += ["## Ablation (Pearson of each head)", "", ablation_markdown(payload["ablation"]), ""]
    if payload["pruning"]:
        parts += ["## Pruning the worst-scored frames", "", pruning_markdown(payload["pruning"]), ""]
    if payload["timing"]:
        parts += ["## Timing", "", timing_markdown(payload["timing"]), ""]
    if payload["figures"]:
        parts += ["## Figures", ""] + [f"![{Path(f).stem}]({f})" for f in payload["figures"]] + [""]
    return "\n".join(parts)


def write_records_csv(report: MonitorReport, path) -> None:
    monitors = list(report.polarity)
    header = ["frame_id", "subject_id", "timestamp", "corruption_level"] + [f"score:{m}" for m in monitors] \
        + [f"true:{m}" for m in LOSS_NAMES] + [f"time:{m}" for m in sorted({k for r in report.records for k in r.times})]
    time_keys = [h[5:] for h in header if h.startswith("time:")]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in report.records:
            losses = [getattr(r.losses, m) for m in LOSS_NAMES] if r.losses is not None else [None] * 4
            row = [r.frame_id, r.subject_id, r.timestamp, r.corruption_level] + \
                [r.scores.get(m) for m in monitors] + losses + [r.times.get(k) for k in time_keys]
            w.writerow(["" if v is None else (repr(float(v)) if isinstance(v, (float, np.floating)) else v)
                        for v in row])


def write_records_jsonl(report: MonitorReport, path) -> None:
    with open(path, "w") as fh:
        for r in report.records:
            fh.write(json.dumps(_clean(r.to_dict())) + "\n")


def read_records_jsonl(path, polarity: dict | None = None) -> MonitorReport:
    """Rebuild a report from per-frame JSON lines; polarity defaults to the fixed table."""
    from .harness import FrameRecord
    from .monitors import POLARITY

    records = []
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                records.append(FrameRecord.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{n}: bad record ({exc})") from exc
    names = list(OrderedDict.fromkeys(k for r in records for k in r.scores))
    pol = OrderedDict()
    for k in names:
        p = (polarity or {}).get(k, POLARITY.get(k))
        if p is None:
            raise ValueError(f"no polarity known for score {k!r}")
        pol[k] = p
    return MonitorReport(records, pol, {"frames": len(records)}, {})


def emit_report(out_dir, report: MonitorReport | None = None, correlations=(), pruning=(), ablation=(),
                timing=None, extra=None, figures: bool = True, formats=("svg",)) -> dict:
    """Write ``report.json``, ``report.md`` and (given a report) ``records.csv`` / ``records.jsonl``.

    With ``figures`` set, scatter plots of each monitor against each true
    metric are rendered into ``out_dir/figures``.  Returns the payload.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fig_paths = []
    if figures and report is not None and len(report):
        from .plots import scatter_figures
        fig_paths = scatter_figures(report, out / "figures", formats)
        if ablation:
            from .plots import ablation_figure
            fig_paths += ablation_figure(ablation, out / "figures", formats)
    rel = [str(Path(p).relative_to(out)) for p in fig_paths]
    payload = build_payload(report, correlations, pruning, ablation, timing, extra, rel)
    (out / "report.json").write_text(json.dumps(payload, indent=2) + "\n")
    (out / "report.md").write_text(markdown(payload))
    if report is not None:
        write_records_csv(report, out / "records.csv")
        write_records_jsonl(report, out / "records.jsonl")
    return payload


def adjusted_scores(report: MonitorReport, monitor: str, metric: str) -> np.ndarray:
    """Monitor scores flipped so that larger always means "agrees with this metric's good direction"."""
    return polarity_sign(report.polarity[monitor], metric) * report.scores(monitor)
