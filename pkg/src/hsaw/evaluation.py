"""Frame-level ROC / AUC / EER and the single-GAN vs hierarchy comparison."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass

import numpy as np

from hsaw.errors import DomainError


@dataclass
class RocCurve:
    thresholds: np.ndarray  # descending, starts at +inf, ends at -inf
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float
    eer: float
    eer_threshold: float

    def points(self) -> list[tuple[float, float, float]]:
        return list(zip(self.thresholds.tolist(), self.fpr.tolist(), self.tpr.tolist()))


def roc(scores, labels) -> RocCurve:
    """ROC for the rule ``abnormal := score > threshold``.

    Thresholds are every distinct score plus the two sentinels +-inf. AUC is
    the trapezoid area; EER is interpolated where FPR crosses 1 - TPR.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    if s.shape != y.shape or s.ndim != 1:
        raise DomainError(f"scores and labels must be equal-length 1-d, got {s.shape} and {y.shape}")
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise DomainError("roc needs both normal and abnormal labels; got a single class")
    thr = np.concatenate([[math.inf], np.unique(s)[::-1], [-math.inf]])
    tp = np.array([(s[y] > t).sum() for t in thr], dtype=np.float64)
    fp = np.array([(s[~y] > t).sum() for t in thr], dtype=np.float64)
    tpr, fpr = tp / n_pos, fp / n_neg
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    eer, eer_thr = _equal_error(thr, fpr, tpr)
    return RocCurve(thr, fpr, tpr, auc, eer, eer_thr)


def _equal_error(thr, fpr, tpr) -> tuple[float, float]:
    g = fpr - (1.0 - tpr)  # -1 at the first point, +1 at the last, non-decreasing
    i = int(np.flatnonzero(g >= 0)[0])
    if g[i] == 0 or i == 0:
        return float(fpr[i]), float(thr[i])
    a, b = g[i - 1], g[i]
    w = -a / (b - a)
    eer = float(fpr[i - 1] + w * (fpr[i] - fpr[i - 1]))
    # nearest finite vertex for the operating threshold
    cand = [j for j in (i - 1, i) if math.isfinite(thr[j])] or [i]
    j = min(cand, key=lambda k: abs(g[k]))
    return eer, float(thr[j])


def auc_concordance(scores, labels) -> float:
    """Wilcoxon-Mann-Whitney statistic by brute force (ties count one half)."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    pos, neg = s[y], s[~y]
    total = 0.0
    for p in pos:
        total += float((p > neg).sum()) + 0.5 * float((p == neg).sum())
    return total / (len(pos) * len(neg))


def false_positives(scores, labels, threshold: float, mask=None) -> int:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    sel = ~y if mask is None else (~y & np.asarray(mask, dtype=bool))
    return int((s[sel] > threshold).sum())


# output formats ---------------------------------------------------------------

def roc_csv(curve: RocCurve) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["threshold", "fpr", "tpr"])
    for t, f, p in curve.points():
        w.writerow([repr(t) if math.isfinite(t) else ("inf" if t > 0 else "-inf"), repr(f), repr(p)])
    return buf.getvalue()


def metrics_dict(curve: RocCurve) -> dict:
    return {"auc": curve.auc, "eer": curve.eer, "eer_threshold": curve.eer_threshold}


def metrics_json(obj: dict) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


_COLORS = ("#d62728", "#1f77b4", "#2ca02c", "#9467bd")


def roc_svg(curves: dict, size: int = 360) -> str:
    """Self-contained SVG with one polyline per named curve and the chance diagonal."""
    m = 50
    span = size - 2 * m

    def xy(f, t):
        return m + f * span, size - m - t * span

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        f'<rect x="0" y="0" width="{size}" height="{size}" fill="white"/>',
        f'<rect x="{m}" y="{m}" width="{span}" height="{span}" fill="none" stroke="black"/>',
    ]
    x0, y0 = xy(0, 0)
    x1, y1 = xy(1, 1)
    parts.append(f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y1}" stroke="gray" stroke-dasharray="4 4"/>')
    for k in range(0, 11, 2):
        v = k / 10
        tx, ty = xy(v, 0)
        parts.append(f'<text x="{tx:.1f}" y="{ty + 16:.1f}" font-size="10" text-anchor="middle">{v:.1f}</text>')
        lx, ly = xy(0, v)
        parts.append(f'<text x="{lx - 6:.1f}" y="{ly + 3:.1f}" font-size="10" text-anchor="end">{v:.1f}</text>')
    parts.append(f'<text x="{size / 2}" y="{size - 12}" font-size="12" text-anchor="middle">False positive rate</text>')
    parts.append(
        f'<text x="14" y="{size / 2}" font-size="12" text-anchor="middle" '
        f'transform="rotate(-90 14 {size / 2})">True positive rate</text>'
    )
    for i, (name, curve) in enumerate(curves.items()):
        color = _COLORS[i % len(_COLORS)]
        pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in (xy(f, t) for f, t in zip(curve.fpr, curve.tpr)))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>')
        parts.append(
            f'<text x="{m + span - 4}" y="{m + span - 10 - 16 * i}" font-size="11" text-anchor="end" '
            f'fill="{color}">{name} (AUC {curve.auc:.3f}, EER {curve.eer:.3f})</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
