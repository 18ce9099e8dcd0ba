"""Discrete-time 360-degree streaming simulator.

At every tick ``t`` after the warm-up the loop

1. scores the current viewport against the prefetch decided at ``t - 1``,
2. predicts ``v(t+1)`` and the angular error ``gamma_hat(t+1)`` and sets
   ``beta(t+1) = clip(gamma_hat + alpha, alpha, pi/2)``,
3. records the request,
4. in adaptive modes, takes one SGD step on the direction model with the
   realised direction and one on the prefetch-angle model with the realised
   error.

The first ``sequence_length`` ticks are the locally stored warm-up: no
records, and their angular error counts as zero in the error history fed to
the prefetch-angle model.
"""

import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from . import geometry as geo
from .errors import EmptyRecords, TraceTooShort
from .meta import MetaConfig, adapt_online, normalize_predictions
from .seqmodel import Batch, forward

FULL = "full"
PARTIAL = "partial"
FROZEN = "frozen"
MODES = (FULL, PARTIAL, FROZEN)
DEFAULT_PARTIAL_WINDOW = 1200


@dataclass(frozen=True)
class ViewportConfig:
    alpha: float = math.pi / 8
    beta_max: float = math.pi / 2

    def __post_init__(self):
        if not (0.0 < self.alpha <= self.beta_max <= math.pi / 2):
            raise ValueError("need 0 < alpha <= beta_max <= pi/2")

    @property
    def beta_min(self):
        return self.alpha

    def beta_for(self, gamma_hat):
        g = min(max(float(gamma_hat), 0.0), math.pi)
        return min(max(g + self.alpha, self.alpha), self.beta_max)


class PrefetchDecision(NamedTuple):
    direction: np.ndarray
    beta: float
    gamma_hat: float


@dataclass(frozen=True, eq=False)
class StepRecord:
    tick: int
    actual: np.ndarray
    predicted: np.ndarray
    gamma: float
    gamma_hat: float
    beta: float
    overlap_ratio: float
    prefetched_area: float
    missing_area: float
    prefetched_tiles: int | None = None
    missing_tiles: int | None = None

    def __eq__(self, other):
        if not isinstance(other, StepRecord):
            return NotImplemented
        return (
            self.tick == other.tick
            and np.array_equal(self.actual, other.actual)
            and np.array_equal(self.predicted, other.predicted)
            and (self.gamma, self.gamma_hat, self.beta, self.overlap_ratio,
                 self.prefetched_area, self.missing_area,
                 self.prefetched_tiles, self.missing_tiles)
            == (other.gamma, other.gamma_hat, other.beta, other.overlap_ratio,
                other.prefetched_area, other.missing_area,
                other.prefetched_tiles, other.missing_tiles)
        )


def score_tick(tick, u, decision, alpha, grid=None):
    """Record for tick ``tick`` given the actual direction and the prior decision."""
    gamma = geo.angular_distance(u, decision.direction)
    a_alpha = geo.solid_angle(alpha)
    inter = geo.lens_area(alpha, decision.beta, gamma)
    tiles = (None, None)
    if grid is not None:
        tiles = tile_mode_step(u, decision, grid, alpha)
    return StepRecord(
        tick=tick,
        actual=np.asarray(u, dtype=float),
        predicted=np.asarray(decision.direction, dtype=float),
        gamma=gamma,
        gamma_hat=float(decision.gamma_hat),
        beta=float(decision.beta),
        overlap_ratio=min(1.0, inter / a_alpha),
        prefetched_area=geo.solid_angle(decision.beta),
        missing_area=max(0.0, a_alpha - inter),
        prefetched_tiles=tiles[0],
        missing_tiles=tiles[1],
    )


def _adapting(mode, steps_done, window):
    if mode == FULL:
        return True
    if mode == PARTIAL:
        return steps_done < window
    return False


def simulate_user(trace, vd, pa, cfg=ViewportConfig(), mode=FULL, meta_cfg=MetaConfig(),
                  partial_window=DEFAULT_PARTIAL_WINDOW, grid=None, batched_tail=True,
                  return_models=False):
    """Run the streaming loop for one user.

    ``mode`` is ``"full"`` (adapt every tick), ``"partial"`` (adapt for the
    first ``partial_window`` simulated ticks) or ``"frozen"`` (never adapt).
    Once adaptation has stopped, the remaining predictions are computed in
    batches, which matches tick-by-tick evaluation up to BLAS rounding; pass
    ``batched_tail=False`` to force the sequential path.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    U = np.asarray(trace.directions, dtype=float)
    T = len(U)
    S = vd.arch.sequence_length
    P = pa.arch.sequence_length
    if T <= S:
        raise TraceTooShort(f"trace {trace.key} has {T} ticks, needs more than {S}")
    mu = meta_cfg.adapt_lr
    alpha = cfg.alpha

    # gbuf[P + t] = gamma(t); warm-up ticks and the left padding stay zero
    gbuf = np.zeros(P + T)
    dirs = np.empty((T, 3))
    ghat = np.zeros(T)
    prev = [U[S - 1]]

    def decide(t, vd_m, pa_m):
        raw = forward(vd_m, U[t - S + 1:t + 1])
        v = normalize_predictions(raw[None], fallback=prev[0])[0]
        prev[0] = v
        dirs[t + 1] = v
        ghat[t + 1] = float(forward(pa_m, gbuf[t + 1:t + 1 + P, None])[0])

    decide(S - 1, vd, pa)
    steps = 0
    t = S
    while t < T:
        if batched_tail and not _adapting(mode, steps, partial_window):
            _batched_decisions(t, U, S, P, vd, pa, gbuf, dirs, ghat)
            break
        gbuf[P + t] = geo.angular_distance(U[t], dirs[t])
        if t + 1 < T:
            decide(t, vd, pa)
        if _adapting(mode, steps, partial_window):
            vd = adapt_online(vd, Batch(U[None, t - S:t], U[None, t]), mu)
            pa = adapt_online(pa, Batch(gbuf[None, t:t + P, None], gbuf[None, P + t, None]), mu)
            steps += 1
        t += 1

    records = []
    for t in range(S, T):
        d = PrefetchDecision(dirs[t], cfg.beta_for(ghat[t]), min(max(ghat[t], 0.0), math.pi))
        records.append(score_tick(t, U[t], d, alpha, grid))
    if return_models:
        return records, vd, pa
    return records


def _batched_decisions(t0, U, S, P, vd, pa, gbuf, dirs, ghat):
    """Fill decisions for ticks ``t0+1 .. T-1`` with frozen models."""
    T = len(U)
    gbuf[P + t0] = geo.angular_distance(U[t0], dirs[t0])
    if t0 + 1 >= T:
        return
    ts = np.arange(t0, T - 1)
    raw = np.empty((len(ts), 3))
    chunk = 512
    for lo in range(0, len(ts), chunk):
        tt = ts[lo:lo + chunk]
        raw[lo:lo + chunk] = forward(vd, U[tt[:, None] - S + 1 + np.arange(S)])
    dirs[t0 + 1:] = normalize_predictions(raw, fallback=dirs[t0])
    gbuf[P + t0 + 1:] = geo.angular_distance(U[t0 + 1:], dirs[t0 + 1:])
    for lo in range(0, len(ts), chunk):
        tt = ts[lo:lo + chunk]
        win = gbuf[tt[:, None] + 1 + np.arange(P)][..., None]
        ghat[tt + 1] = forward(pa, win)[:, 0]


def with_constant_beta(records, beta, alpha):
    """Re-score a record stream with every prefetch angle set to ``beta``."""
    out = []
    for r in records:
        d = PrefetchDecision(r.predicted, beta, r.gamma_hat)
        rec = score_tick(r.tick, r.actual, d, alpha)
        out.append(replace(rec, prefetched_tiles=r.prefetched_tiles, missing_tiles=r.missing_tiles))
    return out


def equal_bandwidth_beta(records, alpha=None):
    """Constant angle whose cap area equals the run's mean prefetched area.

    ``arccos(1 - mean(1 - cos beta_t))``, clamped to ``[alpha, pi/2]`` when
    ``alpha`` is given.
    """
    if not records:
        raise EmptyRecords("no records")
    m = float(np.mean([1.0 - math.cos(r.beta) for r in records]))
    beta = math.acos(min(1.0, max(-1.0, 1.0 - m)))
    if alpha is not None:
        beta = min(max(beta, alpha), math.pi / 2)
    return beta


# --- discrete tile mode ----------------------------------------------------

@dataclass(frozen=True)
class TileGrid:
    """Equirectangular ``rows x cols`` grid; row 0 touches the north pole (+y)."""

    rows: int = 16
    cols: int = 16
    block: int = 3

    @property
    def lat_step(self):
        return math.pi / self.rows

    @property
    def lon_step(self):
        return 2.0 * math.pi / self.cols

    def cell_of(self, v):
        lon, lat = geo.lonlat_from_direction(v)
        r = int(math.floor((math.pi / 2 - float(lat)) / self.lat_step))
        c = int(math.floor((float(lon) + math.pi) / self.lon_step)) % self.cols
        return min(max(r, 0), self.rows - 1), c

    def center_lonlat(self, r, c):
        return -math.pi + (c + 0.5) * self.lon_step, math.pi / 2 - (r + 0.5) * self.lat_step

    def centers(self):
        """``(rows, cols, 3)`` array of unit cell-center directions."""
        r = np.arange(self.rows)[:, None]
        c = np.arange(self.cols)[None, :]
        lon = -math.pi + (c + 0.5) * self.lon_step
        lat = math.pi / 2 - (r + 0.5) * self.lat_step
        return geo.direction_from_lonlat(np.broadcast_to(lon, (self.rows, self.cols)),
                                         np.broadcast_to(lat, (self.rows, self.cols)))

    def block_around(self, v):
        """``block x block`` cells around ``v``'s cell; longitude wraps, latitude clamps."""
        r0, c0 = self.cell_of(v)
        h = self.block // 2
        rows = {min(max(r0 + dr, 0), self.rows - 1) for dr in range(-h, h + 1)}
        cols = {(c0 + dc) % self.cols for dc in range(-h, h + 1)}
        return {(r, c) for r in rows for c in cols}

    def viewport_tiles(self, u, alpha):
        """Cells whose center lies within ``alpha`` of ``u``.

        Candidate rows and columns are pruned with latitude / longitude bounds
        before the exact center test.
        """
        u = np.asarray(u, dtype=float)
        lon_u, lat_u = (float(x) for x in geo.lonlat_from_direction(u))
        centers = self._centers_cache()
        cos_a = math.cos(alpha)
        out = set()
        margin = 1e-9
        for r in range(self.rows):
            lat_c = math.pi / 2 - (r + 0.5) * self.lat_step
            if abs(lat_c - lat_u) > alpha + margin:
                continue
            denom = math.cos(lat_u) * math.cos(lat_c)
            if denom <= 1e-12:
                cols = range(self.cols)
            else:
                x = (cos_a - math.sin(lat_u) * math.sin(lat_c)) / denom
                if x <= -1.0:
                    cols = range(self.cols)
                else:
                    dlon = math.acos(min(1.0, x)) + margin
                    lo = int(math.floor((lon_u - dlon + math.pi) / self.lon_step))
                    hi = int(math.floor((lon_u + dlon + math.pi) / self.lon_step))
                    cols = sorted({c % self.cols for c in range(lo, hi + 1)})
            for c in cols:
                if geo.angular_distance(u, centers[r, c]) <= alpha:
                    out.add((r, c))
        return out

    def _centers_cache(self):
        cache = self.__dict__.get("_centers")
        if cache is None:
            cache = self.centers()
            object.__setattr__(self, "_centers", cache)
        return cache


def tile_mode_step(u, decision, grid, alpha):
    """``(prefetched_tiles, missing_tiles)`` for one tick in tile mode."""
    view = grid.viewport_tiles(u, alpha)
    fetched = grid.block_around(decision.direction)
    return len(fetched), len(view - fetched)


# --- baselines ---------------------------------------------------------------

def _frozen_predictions(model, U):
    """Normalised predictions for ticks ``S .. T-1`` (windows ending one tick earlier)."""
    from .meta import replay_predictions

    return replay_predictions(model, U)


def simulate_ecls(trace, per_user_models, beta, cfg=ViewportConfig()):
    """Oracle ensemble: each tick uses whichever model best matches the truth.

    All prefetches use the constant angle ``beta``.
    """
    if not per_user_models:
        raise EmptyRecords("no models")
    U = np.asarray(trace.directions, dtype=float)
    S = per_user_models[0].arch.sequence_length
    preds = np.stack([_frozen_predictions(m, U) for m in per_user_models])  # (M, T-S, 3)
    errs = geo.angular_distance(U[None, S:], preds)
    best = np.argmin(errs, axis=0)
    chosen = preds[best, np.arange(preds.shape[1])]
    return [
        score_tick(t, U[t], PrefetchDecision(chosen[t - S], beta, 0.0), cfg.alpha)
        for t in range(S, len(U))
    ]


def simulate_cub360(trace, neighbors, neighbor_models, beta, k=3, cfg=ViewportConfig()):
    """Cross-user kNN: weight neighbours' own predictions by trajectory similarity.

    ``neighbors`` are other users' traces of the same video, time-aligned with
    ``trace``; ``neighbor_models[j]`` predicts for ``neighbors[j]``.  Distance
    is the mean angular distance between the user's and a neighbour's last
    ``sequence_length`` directions.
    """
    if not neighbors:
        raise EmptyRecords("no neighbours")
    U = np.asarray(trace.directions, dtype=float)
    S = neighbor_models[0].arch.sequence_length
    T = min([len(U)] + [len(n) for n in neighbors])
    preds = [_frozen_predictions(m, np.asarray(n.directions)[:T]) for m, n in zip(neighbor_models, neighbors)]
    # per-tick angular gaps between the user and each neighbour, then window means
    gaps = np.stack([geo.angular_distance(U[:T], np.asarray(n.directions)[:T]) for n in neighbors])
    csum = np.concatenate([np.zeros((len(neighbors), 1)), np.cumsum(gaps, axis=1)], axis=1)
    from .metrics import cub360_knn_predict

    records = []
    for t in range(S, T):
        # decision for t made at t-1 from the window U[t-S .. t-1]
        dist = (csum[:, t] - csum[:, t - S]) / S
        cand = [(preds[j][t - S], float(dist[j])) for j in range(len(neighbors))]
        v = cub360_knn_predict(cand, k)
        records.append(score_tick(t, U[t], PrefetchDecision(v, beta, 0.0), cfg.alpha))
    return records


# --- record streams on disk ----------------------------------------------------

RECORD_COLUMNS = ("t", "ux", "uy", "uz", "vx", "vy", "vz", "gamma", "gamma_hat", "beta",
                  "overlap_ratio", "prefetched_area", "missing_area")
TILE_COLUMNS = ("prefetched_tiles", "missing_tiles")


def format_records_csv(records):
    """CSV text with one row per tick; floats are written round-trippably."""
    tiles = bool(records) and records[0].prefetched_tiles is not None
    header = RECORD_COLUMNS + (TILE_COLUMNS if tiles else ())
    lines = [",".join(header)]
    for r in records:
        scalars = (r.gamma, r.gamma_hat, r.beta, r.overlap_ratio, r.prefetched_area, r.missing_area)
        vals = [str(r.tick), *(repr(float(x)) for x in (*r.actual, *r.predicted, *scalars))]
        if tiles:
            vals += [str(r.prefetched_tiles), str(r.missing_tiles)]
        lines.append(",".join(vals))
    return "\n".join(lines) + "\n"


def parse_records_csv(text):
    from .errors import MalformedRow, MissingColumn

    rows = text.strip().splitlines()
    if not rows:
        raise EmptyRecords("empty record file")
    header = rows[0].split(",")
    for name in RECORD_COLUMNS:
        if name not in header:
            raise MissingColumn(name)
    col = {h: i for i, h in enumerate(header)}
    tiles = all(c in col for c in TILE_COLUMNS)
    out = []
    for index, line in enumerate(rows[1:]):
        cells = line.split(",")
        try:
            f = {name: float(cells[col[name]]) for name in RECORD_COLUMNS[1:]}
            out.append(StepRecord(
                tick=int(cells[col["t"]]),
                actual=np.array([f["ux"], f["uy"], f["uz"]]),
                predicted=np.array([f["vx"], f["vy"], f["vz"]]),
                gamma=f["gamma"], gamma_hat=f["gamma_hat"], beta=f["beta"],
                overlap_ratio=f["overlap_ratio"], prefetched_area=f["prefetched_area"],
                missing_area=f["missing_area"],
                prefetched_tiles=int(cells[col["prefetched_tiles"]]) if tiles else None,
                missing_tiles=int(cells[col["missing_tiles"]]) if tiles else None,
            ))
        except (ValueError, IndexError) as exc:
            raise MalformedRow(index, str(exc)) from None
    return out
