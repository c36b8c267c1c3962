"""Depth evaluation metrics with optional median scaling."""

from dataclasses import dataclass, asdict

import numpy as np

DELTA_BASE = 1.25
COLUMNS = ("frame", "rmse", "abs_rel", "sq_rel", "si_rmse",
           "delta1", "delta2", "delta3", "scale", "n_pixels", "n_excluded")


@dataclass
class MetricReport:
    rmse: float
    abs_rel: float
    sq_rel: float
    si_rmse: float
    delta_acc: tuple
    scale: float
    n_pixels: int
    n_excluded: int = 0

    def row(self):
        d = asdict(self)
        d1, d2, d3 = d.pop("delta_acc")
        d.update(delta1=d1, delta2=d2, delta3=d3)
        return d


def _overlap(d_pred, d_gt):
    overlap = d_pred.valid & d_gt.valid & (d_gt.d > 0)
    positive = overlap & (d_pred.d > 0)
    if not positive.any():
        raise ValueError("no valid overlap between prediction and ground truth")
    return positive, int(np.count_nonzero(overlap & ~positive))


def median_scale(d_pred, d_gt):
    m, _ = _overlap(d_pred, d_gt)
    return float(np.median(d_gt.d[m] / d_pred.d[m]))


def evaluate(d_pred, d_gt, apply_median_scale=False) -> MetricReport:
    """Standard metrics on the valid overlap; non-positive predictions are excluded and counted.

    si_rmse = sqrt(mean(r^2) - mean(r)^2) with r = log(pred) - log(gt).
    """
    m, excluded = _overlap(d_pred, d_gt)
    s = median_scale(d_pred, d_gt) if apply_median_scale else 1.0
    p = d_pred.d[m] * s
    g = d_gt.d[m]
    diff = p - g
    r = np.log(p) - np.log(g)
    ratio = np.maximum(p / g, g / p)
    return MetricReport(
        rmse=float(np.sqrt(np.mean(diff * diff))),
        abs_rel=float(np.mean(np.abs(diff) / g)),
        sq_rel=float(np.mean(diff * diff / g)),
        si_rmse=float(np.sqrt(np.var(r))),
        delta_acc=tuple(float(np.mean(ratio < DELTA_BASE ** k)) for k in (1, 2, 3)),
        scale=s,
        n_pixels=int(m.sum()),
        n_excluded=excluded,
    )


def mean_report(reports):
    """Per-frame metrics averaged over frames (not pixel-pooled)."""
    reports = list(reports)
    if not reports:
        raise ValueError("no reports to average")
    rows = [r.row() for r in reports]
    avg = {k: float(np.mean([row[k] for row in rows])) for k in rows[0]}
    return MetricReport(avg["rmse"], avg["abs_rel"], avg["sq_rel"], avg["si_rmse"],
                        (avg["delta1"], avg["delta2"], avg["delta3"]), avg["scale"],
                        int(sum(r.n_pixels for r in reports)),
                        int(sum(r.n_excluded for r in reports)))
