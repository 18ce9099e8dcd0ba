"""Evaluation metrics, baseline predictors and compute-cost estimates."""

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import geometry as geo
from .errors import EmptyRecords, MismatchedCohorts, NonPositiveInput
from .seqmodel import forward


def mae(records):
    """Mean angular error (radians)."""
    if not records:
        raise EmptyRecords("no records")
    return float(np.mean([r.gamma for r in records]))


def mspr(records, alpha=None):
    """Mean fraction of the actual viewport covered by the prefetch.

    Uses the stored per-tick ratios; with ``alpha`` given the ratios are
    recomputed from the raw (u, v, beta) fields instead.
    """
    if not records:
        raise EmptyRecords("no records")
    if alpha is None:
        return float(np.mean([r.overlap_ratio for r in records]))
    a_alpha = geo.solid_angle(alpha)
    ratios = [
        min(1.0, geo.lens_area(alpha, r.beta, geo.angular_distance(r.actual, r.predicted)) / a_alpha)
        for r in records
    ]
    return float(np.mean(ratios))


@dataclass(frozen=True)
class RunMetrics:
    user_id: str
    mae: float
    mspr: float
    total_prefetched_area: float
    n_ticks: int
    missing_tiles: int | None = None


def run_metrics(user_id, records):
    tiles = [r.missing_tiles for r in records]
    return RunMetrics(
        user_id=str(user_id),
        mae=mae(records),
        mspr=mspr(records),
        total_prefetched_area=float(sum(r.prefetched_area for r in records)),
        n_ticks=len(records),
        missing_tiles=None if any(t is None for t in tiles) else int(sum(tiles)),
    )


def id_sort_key(user_id):
    s = str(user_id)
    try:
        return (0, int(s), s)
    except ValueError:
        return (1, 0, s)


def match_cohorts(baseline, ours):
    if not baseline or not ours:
        raise MismatchedCohorts("empty cohort")
    b = {m.user_id: m for m in baseline}
    o = {m.user_id: m for m in ours}
    if len(b) != len(baseline) or len(o) != len(ours) or b.keys() != o.keys():
        raise MismatchedCohorts("baseline and method cover different users")
    ids = sorted(b, key=id_sort_key)
    return ids, b, o


def iwp(baseline, ours):
    """MSPR change for the user whose baseline MSPR is lowest (ties: lowest id)."""
    ids, b, o = match_cohorts(baseline, ours)
    worst = min(ids, key=lambda i: (b[i].mspr, id_sort_key(i)))
    return o[worst].mspr - b[worst].mspr


@dataclass
class CohortReport:
    video_id: str
    baseline_name: str
    method_name: str
    baseline: list
    ours: list
    delta_mae: dict = field(default_factory=dict)
    delta_mspr: dict = field(default_factory=dict)
    iwp: float = 0.0
    equal_bandwidth: dict | None = None
    extra: dict = field(default_factory=dict)

    def summary_rows(self):
        """Rows mirroring the published table: min-max range and mean change."""
        dm = np.degrees(list(self.delta_mae.values()))
        ds = 100.0 * np.asarray(list(self.delta_mspr.values()))
        rows = [
            _row(self.video_id, "delta_mae_deg", dm),
            _row(self.video_id, "delta_mspr_pct", ds),
            _row(self.video_id, "iwp_pct", [100 * self.iwp]),
        ]
        if self.equal_bandwidth:
            eq = self.equal_bandwidth
            rows.append(_row(self.video_id, "delta_mspr_equal_bw_pct", 100.0 * np.asarray(list(eq["delta_mspr"].values()))))
            rows.append(_row(self.video_id, "iwp_equal_bw_pct", [100 * eq["iwp"]]))
        return rows

    def to_json(self):
        doc = {
            "video": self.video_id,
            "baseline": self.baseline_name,
            "method": self.method_name,
            "users": [
                {
                    "user": b.user_id,
                    "baseline": asdict(b),
                    "method": asdict(self._ours_by_id()[b.user_id]),
                    "delta_mae": self.delta_mae[b.user_id],
                    "delta_mspr": self.delta_mspr[b.user_id],
                }
                for b in self.baseline
            ],
            "iwp": self.iwp,
            "summary": self.summary_rows(),
        }
        if self.equal_bandwidth:
            doc["equal_bandwidth"] = self.equal_bandwidth
        doc.update(self.extra)
        return json.dumps(doc, indent=2, sort_keys=True, default=float) + "\n"

    def to_csv(self):
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=["video", "metric", "min", "max", "mean"], lineterminator="\n")
        w.writeheader()
        for row in self.summary_rows():
            w.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in row.items()})
        return buf.getvalue()

    def _ours_by_id(self):
        return {m.user_id: m for m in self.ours}


def _row(video, metric, values):
    v = np.asarray(values, dtype=float)
    return {"video": video, "metric": metric, "min": float(v.min()), "max": float(v.max()), "mean": float(v.mean())}


def equal_bandwidth_section(baseline_at_beta, ours, betas):
    """MSPR comparison against a baseline re-scored at each user's equal-bandwidth angle.

    ``baseline_at_beta`` holds RunMetrics of the baseline with every prefetch
    angle set to ``betas[user]``.
    """
    ids, b, o = match_cohorts(baseline_at_beta, ours)
    return {
        "beta": {i: float(betas[i]) for i in ids},
        "baseline_mspr": {i: b[i].mspr for i in ids},
        "delta_mspr": {i: o[i].mspr - b[i].mspr for i in ids},
        "iwp": iwp(baseline_at_beta, ours),
    }


def cohort_report(video_id, baseline, ours, baseline_name="global", method_name="adaptive",
                  equal_bandwidth=None):
    ids, b, o = match_cohorts(baseline, ours)
    return CohortReport(
        video_id=str(video_id),
        baseline_name=baseline_name,
        method_name=method_name,
        baseline=[b[i] for i in ids],
        ours=[o[i] for i in ids],
        delta_mae={i: o[i].mae - b[i].mae for i in ids},
        delta_mspr={i: o[i].mspr - b[i].mspr for i in ids},
        iwp=iwp(baseline, ours),
        equal_bandwidth=equal_bandwidth,
    )


# --- baselines --------------------------------------------------------------

def ecls_oracle_predict(per_user_models, window, truth):
    """Prediction of whichever model lands closest to the true next direction.

    This uses the future direction, so it is an upper bound for any
    model-selection ensemble.
    """
    if not per_user_models:
        raise EmptyRecords("no models")
    preds = [_unit(forward(m, window)) for m in per_user_models]
    errs = [geo.angular_distance(p, truth) for p in preds]
    return preds[int(np.argmin(errs))]


def _unit(raw):
    n = np.linalg.norm(raw)
    return raw / n if n > geo.ZERO_TOL else np.array(geo.DEFAULT_FORWARD)


def cub360_knn_predict(neighbor_predictions, k, eps=1e-6):
    """Inverse-distance weighted average of the ``k`` nearest neighbours' predictions.

    ``neighbor_predictions`` is a sequence of ``(direction, distance)``.
    """
    if not neighbor_predictions:
        raise EmptyRecords("no neighbours")
    if k < 1:
        raise ValueError("k must be >= 1")
    order = sorted(range(len(neighbor_predictions)), key=lambda i: (neighbor_predictions[i][1], i))[:k]
    dirs = np.array([neighbor_predictions[i][0] for i in order], dtype=float)
    w = np.array([1.0 / (neighbor_predictions[i][1] + eps) for i in order])
    w /= w.sum()
    return geo.normalize(w @ dirs)


def window_distance(a, b):
    """Mean angular distance between two equally long direction windows."""
    return float(np.mean(geo.angular_distance(a, b)))


# --- compute cost -------------------------------------------------------------

def flops_per_training_cycle(arch):
    """Forward plus backward FLOPs of one LSTM pass: ``3 * 2 * S * (I + D) * D * 4``."""
    if arch.cell != "lstm":
        raise ValueError("FLOPs formula applies to LSTM architectures")
    S, I, D = arch.sequence_length, arch.input_dim, arch.hidden_dim
    return 3 * 2 * S * (I + D) * D * 4


def flops_with_sequence_length(arch, sequence_length):
    S, I, D = sequence_length, arch.input_dim, arch.hidden_dim
    return 3 * 2 * S * (I + D) * D * 4


def linear_flops(n, n_in, n_out):
    """``(forward, forward + backward)`` FLOPs of ``y = x @ w`` for ``n`` rows."""
    fwd = 2 * n * n_in * n_out
    return fwd, fwd + 2 * fwd


def battery_steps(battery_joules, joules_per_flop, flops_per_step):
    """Number of whole steps a battery can pay for."""
    if battery_joules < 0 or joules_per_flop <= 0 or flops_per_step <= 0:
        raise NonPositiveInput("battery must be >= 0 and per-step costs > 0")
    return int(math.floor(battery_joules / (joules_per_flop * flops_per_step)))
