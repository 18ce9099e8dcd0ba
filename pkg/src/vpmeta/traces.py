"""Head-tracking traces: CSV ingestion, fixed-tick resampling, synthetic users."""

import csv
import io
import math
import re
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import geometry as geo
from .errors import EmptyTrace, LeadingGap, MalformedRow, MissingColumn
from .iofmt import atomic_write_text

QUAT_COLUMNS = ("qw", "qx", "qy", "qz")
DIR_COLUMNS = ("x", "y", "z")
POSITION_COLUMNS = ("px", "py", "pz")

# Column names used by the public 48-user head-tracking dataset; pass as
# ``column_map`` to read its per-user CSV files directly.
DATASET_COLUMN_MAP = {
    "PlaybackTime": "t",
    "UnitQuaternion.w": "qw",
    "UnitQuaternion.x": "qx",
    "UnitQuaternion.y": "qy",
    "UnitQuaternion.z": "qz",
    "HmdPosition.x": "px",
    "HmdPosition.y": "py",
    "HmdPosition.z": "pz",
}

_TICK_EPS = 1e-9


class TraceSample(NamedTuple):
    timestamp: float
    direction: np.ndarray
    quaternion: geo.Quaternion | None = None


@dataclass(eq=False)
class Trace:
    user_id: str
    video_id: str
    tick_seconds: float
    directions: np.ndarray  # (T, 3), unit rows

    def __post_init__(self):
        d = np.asarray(self.directions, dtype=float)
        if d.ndim != 2 or d.shape[1] != 3:
            raise ValueError(f"directions must be (T, 3), got {d.shape}")
        self.directions = d
        self.user_id = str(self.user_id)
        self.video_id = str(self.video_id)

    def __len__(self):
        return len(self.directions)

    @property
    def key(self):
        return (self.user_id, self.video_id)

    def times(self):
        return np.arange(len(self)) * self.tick_seconds

    def to_samples(self):
        return [TraceSample(float(t), d) for t, d in zip(self.times(), self.directions)]

    def __eq__(self, other):
        if not isinstance(other, Trace):
            return NotImplemented
        return (
            self.key == other.key
            and self.tick_seconds == other.tick_seconds
            and np.array_equal(self.directions, other.directions)
        )


def parse_trace_csv(stream, user_id=None, video_id=None, column_map=None,
                    forward=geo.DEFAULT_FORWARD):
    """Parse a head-tracking CSV into ``(user_id, video_id, TraceSample)`` rows.

    Accepted headers are ``t,qw,qx,qy,qz[,px,py,pz]`` (quaternions, converted by
    rotating ``forward``) and ``t,x,y,z`` (directions).  Optional ``user`` and
    ``video`` columns override the ``user_id`` / ``video_id`` arguments.
    Position columns are ignored.  ``column_map`` renames source columns to
    these canonical names first.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    reader = csv.reader(stream)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise MissingColumn("t") from None
    if column_map:
        header = [column_map.get(h, h) for h in header]
    col = {name: i for i, name in enumerate(header)}
    if "t" not in col:
        raise MissingColumn("t")
    if all(c in col for c in QUAT_COLUMNS):
        value_cols = QUAT_COLUMNS
    elif all(c in col for c in DIR_COLUMNS):
        value_cols = DIR_COLUMNS
    else:
        missing = next(c for c in QUAT_COLUMNS if c not in col)
        raise MissingColumn(missing)

    out = []
    last_t = -math.inf
    for index, row in enumerate(reader):
        if not row or all(not cell.strip() for cell in row):
            continue
        try:
            t = float(row[col["t"]])
            vals = [float(row[col[c]]) for c in value_cols]
        except (ValueError, IndexError) as exc:
            raise MalformedRow(index, str(exc)) from None
        if not all(math.isfinite(x) for x in (t, *vals)):
            raise MalformedRow(index, "non-finite value")
        if t <= last_t:
            raise MalformedRow(index, "timestamps must be strictly increasing")
        last_t = t
        try:
            if value_cols is QUAT_COLUMNS:
                q = geo.Quaternion(*vals)
                sample = TraceSample(t, geo.quat_to_direction(q, forward), q)
            else:
                sample = TraceSample(t, geo.normalize(vals))
        except ValueError as exc:
            raise MalformedRow(index, str(exc)) from None
        uid = row[col["user"]] if "user" in col else user_id
        vid = row[col["video"]] if "video" in col else video_id
        out.append((uid, vid, sample))
    return out


def resample(samples, tick_seconds, start=None, user_id="", video_id=""):
    """Average samples into fixed ticks.

    A sample at time ``t`` falls into tick ``floor((t - start) / tick_seconds)``;
    ``start`` defaults to the first timestamp.  Each tick's direction is the
    normalised mean of its samples (the last raw sample if the mean vanishes).
    Empty ticks repeat the previous tick.  The result has
    ``floor(span / tick_seconds) + 1`` ticks, ``span`` being last minus start.
    """
    samples = list(samples)
    if not samples:
        raise EmptyTrace("no samples to resample")
    if tick_seconds <= 0:
        raise ValueError("tick_seconds must be positive")
    times = np.array([s.timestamp for s in samples], dtype=float)
    dirs = np.array([s.direction for s in samples], dtype=float)
    t0 = times[0] if start is None else float(start)
    idx = np.floor((times - t0) / tick_seconds + _TICK_EPS).astype(np.int64)
    if idx[0] < 0:
        raise ValueError("samples precede the requested start time")
    if idx[0] != 0:
        raise LeadingGap(f"first sample lands in tick {idx[0]}, tick 0 is empty")
    n = int(idx[-1]) + 1
    sums = np.zeros((n, 3))
    np.add.at(sums, idx, dirs)
    counts = np.bincount(idx, minlength=n)
    last_raw = np.zeros((n, 3))
    last_raw[idx] = dirs  # later samples overwrite earlier ones
    out = np.empty((n, 3))
    for k in range(n):
        if counts[k] == 0:
            out[k] = out[k - 1]
            continue
        norm = np.linalg.norm(sums[k])
        out[k] = sums[k] / norm if norm > geo.ZERO_TOL else last_raw[k]
    return Trace(user_id, video_id, tick_seconds, out)


def load_trace_file(path, tick_seconds, column_map=None, user_id=None, video_id=None):
    """Read one CSV file and resample it; ids default to the file name."""
    path = Path(path)
    uid, vid = parse_trace_filename(path.name)
    uid = user_id if user_id is not None else uid
    vid = video_id if video_id is not None else vid
    with open(path, newline="", encoding="utf-8") as fh:
        rows = parse_trace_csv(fh, uid, vid, column_map=column_map)
    return resample([r[2] for r in rows], tick_seconds, user_id=uid, video_id=vid)


def trace_filename(user_id, video_id):
    return f"user-{user_id}_video-{video_id}.csv"


def parse_trace_filename(name):
    m = re.fullmatch(r"user-(.+?)_video-(.+?)\.csv", name)
    if m:
        return m.group(1), m.group(2)
    return Path(name).stem, "0"


def format_trace_csv(trace):
    lines = ["t,x,y,z"]
    for t, d in zip(trace.times().tolist(), trace.directions.tolist()):
        lines.append(f"{t!r},{d[0]!r},{d[1]!r},{d[2]!r}")
    return "\n".join(lines) + "\n"


def write_trace_csv(trace, directory):
    path = Path(directory) / trace_filename(trace.user_id, trace.video_id)
    atomic_write_text(path, format_trace_csv(trace))
    return path


def load_trace_dir(directory, tick_seconds, column_map=None):
    paths = sorted(Path(directory).glob("*.csv"))
    return [load_trace_file(p, tick_seconds, column_map=column_map) for p in paths]


# --- synthetic users -------------------------------------------------------

PATTERNS = ("fixate", "smooth-scan", "random-walk", "regime-switching")


@dataclass(frozen=True)
class SyntheticUserProfile:
    """Parameters of a synthetic viewer.

    ``velocity`` is an angular speed (rad/s) and ``noise`` the radius (rad) of
    the per-tick jitter disc.  ``anchor`` is the (longitude, latitude) where the
    viewer starts or fixates.  ``turn_concentration`` is the von Mises
    concentration of heading changes per random-walk tick, ``scan_amplitude``
    the yaw half-range of a smooth scan, and ``phase_seconds`` the mean length
    of each regime-switching phase.
    """

    pattern: str
    velocity: float = 0.0
    noise: float = 0.0
    seed: int = 0
    anchor: tuple = (0.0, 0.0)
    turn_concentration: float = 8.0
    scan_amplitude: float = 0.6
    phase_seconds: float = 8.0

    def __post_init__(self):
        if self.pattern not in PATTERNS:
            raise ValueError(f"unknown pattern {self.pattern!r}; expected one of {PATTERNS}")
        if self.velocity < 0 or self.noise < 0:
            raise ValueError("velocity and noise must be non-negative")
        if self.phase_seconds <= 0 or self.scan_amplitude <= 0:
            raise ValueError("phase_seconds and scan_amplitude must be positive")


def _jitter(rng, base, noise):
    if noise == 0.0:
        return base
    r = noise * math.sqrt(rng.uniform())
    phi = rng.uniform(0.0, 2.0 * math.pi)
    return geo.offset_direction(base, r * math.cos(phi), r * math.sin(phi))


def _random_heading(rng, u):
    e1, e2 = geo.tangent_basis(u)
    phi = rng.uniform(0.0, 2.0 * math.pi)
    return math.cos(phi) * e1 + math.sin(phi) * e2


def _turn(heading, u, angle):
    # rotate the tangent heading about u
    return math.cos(angle) * heading + math.sin(angle) * np.cross(u, heading)


def generate_synthetic(profile, duration, tick_seconds, user_id="0", video_id="0"):
    """Deterministic synthetic trace of ``round(duration / tick_seconds)`` ticks."""
    if duration < tick_seconds:
        raise ValueError("duration must be at least one tick")
    n = int(round(duration / tick_seconds))
    rng = np.random.default_rng(profile.seed)
    anchor = geo.direction_from_lonlat(*profile.anchor)
    step = profile.velocity * tick_seconds
    out = np.empty((n, 3))

    if profile.pattern == "fixate":
        for k in range(n):
            out[k] = _jitter(rng, anchor, profile.noise)

    elif profile.pattern == "smooth-scan":
        lon0, lat0 = profile.anchor
        amp = profile.scan_amplitude
        omega = profile.velocity / amp
        phase = rng.uniform(0.0, 2.0 * math.pi)
        for k in range(n):
            lon = lon0 + amp * math.sin(omega * k * tick_seconds + phase)
            out[k] = _jitter(rng, geo.direction_from_lonlat(lon, lat0), profile.noise)

    else:
        switching = profile.pattern == "regime-switching"
        pos = anchor
        heading = _random_heading(rng, pos)
        walking = not switching
        phase_left = rng.exponential(profile.phase_seconds) if switching else math.inf
        for k in range(n):
            if switching:
                phase_left -= tick_seconds
                if phase_left <= 0.0:
                    walking = not walking
                    phase_left = rng.exponential(profile.phase_seconds)
                    heading = _random_heading(rng, pos)
            if walking and step > 0.0:
                heading = _turn(heading, pos, rng.vonmises(0.0, profile.turn_concentration))
                pos, heading = geo.geodesic_step(pos, heading, step)
            out[k] = _jitter(rng, pos, profile.noise)
    return Trace(user_id, video_id, tick_seconds, out)


def synthetic_cohort(counts, duration, tick_seconds, seed, video_id="1", noise=0.02,
                     scan_velocity=0.3, walk_velocity=0.6, anchor_spread=0.3):
    """Profiles and traces for a mixed synthetic cohort watching one video.

    ``counts`` maps pattern name to number of users; users are numbered
    consecutively in ``PATTERNS`` order.  Anchors scatter around a common
    region of interest whose position depends on ``video_id``.
    """
    unknown = set(counts) - set(PATTERNS)
    if unknown:
        raise ValueError(f"unknown patterns {sorted(unknown)}")
    rng = np.random.default_rng([seed, zlib.crc32(str(video_id).encode("utf-8"))])
    roi = (rng.uniform(-math.pi, math.pi), rng.uniform(-0.3, 0.3))
    profiles = []
    for pattern in PATTERNS:
        velocity = {"fixate": 0.0, "smooth-scan": scan_velocity}.get(pattern, walk_velocity)
        for _ in range(int(counts.get(pattern, 0))):
            anchor = (roi[0] + rng.uniform(-anchor_spread, anchor_spread),
                      roi[1] + rng.uniform(-anchor_spread, anchor_spread) * 2 / 3)
            profiles.append(SyntheticUserProfile(
                pattern, velocity=velocity, noise=noise,
                seed=int(rng.integers(2**31)), anchor=anchor,
            ))
    return [
        (p, generate_synthetic(p, duration, tick_seconds, user_id=str(i), video_id=str(video_id)))
        for i, p in enumerate(profiles)
    ]
