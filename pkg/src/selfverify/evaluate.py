"""Detection-rate summaries computed only from emitted report records.

Nothing here touches a model: every number can be recomputed by an external
script from the report file.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptySetError

PRIMARY_METRIC = {"image": "d_semantic", "audio-mfcc": "d_activation"}


@dataclass
class GridPoint:
    threshold: float
    fpr: float
    success: dict          # attack kind -> detection success rate
    overall: float         # over all counted adversarial items


@dataclass
class EvaluationSummary:
    metric: str
    thresholds: dict
    counts: dict                  # naturals, adversarial (counted), per kind, excluded
    success: dict                 # attack kind -> detection success rate at the run thresholds
    overall_success: float
    fpr: float
    auc: dict                     # attack kind -> AUC of the metric, adversarial vs natural
    histograms: dict              # "natural" / kind -> {"edges": [...], "counts": [...]}
    grid: list = field(default_factory=list)
    best: GridPoint | None = None
    max_fpr: float | None = None

    def to_record(self):
        rec = {
            "metric": self.metric, "thresholds": self.thresholds, "counts": self.counts,
            "success": self.success, "overall_success": self.overall_success, "fpr": self.fpr,
            "auc": self.auc, "histograms": self.histograms,
        }
        if self.grid:
            rec["grid"] = [vars(p) for p in self.grid]
            rec["max_fpr"] = self.max_fpr
            rec["best"] = vars(self.best) if self.best is not None else None
        return rec

    def table(self):
        rows = [f"metric {self.metric}  thresholds {self.thresholds}",
                f"{'set':<14}{'n':>6}{'flagged':>10}{'AUC':>8}"]
        rows.append(f"{'natural':<14}{self.counts['natural']:>6}{self.fpr:>10.3f}{'-':>8}")
        for kind, rate in self.success.items():
            auc = self.auc.get(kind)
            auc_s = "-" if auc is None else f"{auc:.3f}"
            rows.append(f"{kind:<14}{self.counts['per_kind'][kind]:>6}{rate:>10.3f}{auc_s:>8}")
        rows.append(f"{'all attacks':<14}{self.counts['adversarial']:>6}{self.overall_success:>10.3f}")
        if self.counts.get("excluded"):
            rows.append(f"excluded (attack did not fool the model): {self.counts['excluded']}")
        if self.best is not None:
            rows.append(f"best threshold {self.best.threshold:.4g}: success {self.best.overall:.3f} "
                        f"at FPR {self.best.fpr:.3f} (max {self.max_fpr})")
        elif self.grid:
            rows.append(f"no grid threshold keeps FPR <= {self.max_fpr}")
        return "\n".join(rows)


def mann_whitney_auc(pos, neg):
    """P(score_pos > score_neg) + 0.5 P(tie), via midranks."""
    pos, neg = np.asarray(pos, float), np.asarray(neg, float)
    if len(pos) == 0 or len(neg) == 0:
        return None
    allv = np.concatenate([pos, neg])
    order = np.argsort(allv, kind="mergesort")
    ranks = np.empty(len(allv))
    sorted_v = allv[order]
    i = 0
    while i < len(allv):
        j = i
        while j + 1 < len(allv) and sorted_v[j + 1] == sorted_v[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2 + 1
        i = j + 1
    r_pos = ranks[:len(pos)].sum()
    return float((r_pos - len(pos) * (len(pos) + 1) / 2) / (len(pos) * len(neg)))


def parse_grid(text):
    """``start:stop:step`` (inclusive stop) or a comma list."""
    if ":" in text:
        start, stop, step = (float(v) for v in text.split(":"))
        if step <= 0:
            raise ValueError("grid step must be > 0")
        n = int(np.floor((stop - start) / step + 1e-9)) + 1
        return [round(start + k * step, 12) for k in range(n)]
    return [float(v) for v in text.split(",") if v.strip()]


def _score(report, metric):
    v = getattr(report, metric)
    return None if v is None else float(v)


def _flagged_at(report, metric, threshold):
    if report.verdict == "suspicious":
        return True
    s = _score(report, metric)
    return s is not None and s > threshold


def _histogram(values, bins, value_range):
    counts, edges = np.histogram(values, bins=bins, range=value_range)
    return {"edges": [float(e) for e in edges], "counts": [int(c) for c in counts]}


def split_reports(reports, successful_only=True):
    """(naturals, adversarial by kind, excluded count)."""
    naturals, by_kind, excluded = [], {}, 0
    for r in reports:
        if r.truth == "adversarial":
            if successful_only and r.fooled is False:
                excluded += 1
                continue
            by_kind.setdefault(r.attack or "unknown", []).append(r)
        else:
            naturals.append(r)
    return naturals, by_kind, excluded


def summarize(reports, modality, grid=None, max_fpr=0.1, successful_only=True, bins=20):
    """Evaluation summary from report records.

    Detection success is the flagged fraction of adversarial items (by default
    only those whose attack fooled the model); FPR is the flagged fraction of
    naturals. With a grid, the verdicts are recomputed per threshold on the
    modality's primary metric; suspicious items count as flagged everywhere.
    """
    metric = PRIMARY_METRIC[modality]
    naturals, by_kind, excluded = split_reports(reports, successful_only)
    if not naturals:
        raise EmptySetError("no natural reports")
    if not by_kind:
        raise EmptySetError("no adversarial reports")
    adv_all = [r for rs in by_kind.values() for r in rs]
    fpr = float(np.mean([r.flagged for r in naturals]))
    success = {k: float(np.mean([r.flagged for r in rs])) for k, rs in sorted(by_kind.items())}
    overall = float(np.mean([r.flagged for r in adv_all]))

    def scores(rs):
        return [s for s in (_score(r, metric) for r in rs) if s is not None]

    nat_scores = scores(naturals)
    auc = {k: mann_whitney_auc(scores(rs), nat_scores) for k, rs in sorted(by_kind.items())}
    value_range = (0.0, 1.0) if metric == "d_semantic" else (0.0, 2.0)
    hist = {"natural": _histogram(nat_scores, bins, value_range)}
    for k, rs in sorted(by_kind.items()):
        hist[k] = _histogram(scores(rs), bins, value_range)

    thresholds = {}
    for r in reports:
        if r.thresholds:
            thresholds = dict(r.thresholds)
            break
    counts = {"natural": len(naturals), "adversarial": len(adv_all),
              "per_kind": {k: len(rs) for k, rs in sorted(by_kind.items())}, "excluded": excluded}
    summary = EvaluationSummary(metric, thresholds, counts, success, overall, fpr, auc, hist)

    if grid:
        points = []
        for t in sorted(grid):
            nat_fpr = float(np.mean([_flagged_at(r, metric, t) for r in naturals]))
            per = {k: float(np.mean([_flagged_at(r, metric, t) for r in rs]))
                   for k, rs in sorted(by_kind.items())}
            tot = float(np.mean([_flagged_at(r, metric, t) for r in adv_all]))
            points.append(GridPoint(t, nat_fpr, per, tot))
        feasible = [p for p in points if p.fpr <= max_fpr]
        best = None
        if feasible:
            # highest success, then lowest FPR, then the larger threshold
            best = max(feasible, key=lambda p: (p.overall, -p.fpr, p.threshold))
        summary.grid, summary.best, summary.max_fpr = points, best, max_fpr
    return summary
