"""Unit-sphere primitives.

Directions are plain float64 arrays of shape ``(3,)`` (or ``(..., 3)`` for the
vectorised helpers).  Spherical caps are described by a center direction and
an angular radius ("half angle") in ``[0, pi/2]``.
"""

import math
from typing import NamedTuple

import numpy as np

from .errors import ZeroVector

ZERO_TOL = 1e-12
HALF_PI = 0.5 * math.pi
DEFAULT_FORWARD = np.array([0.0, 0.0, -1.0])


class Quaternion(NamedTuple):
    w: float
    x: float
    y: float
    z: float

    def normalized(self):
        n = math.sqrt(self.w**2 + self.x**2 + self.y**2 + self.z**2)
        if n <= ZERO_TOL:
            raise ZeroVector("degenerate quaternion")
        return Quaternion(self.w / n, self.x / n, self.y / n, self.z / n)


class SphericalCap(NamedTuple):
    center: np.ndarray
    half_angle: float


def normalize(v):
    """Return ``v / |v|``; raises :class:`ZeroVector` for ``|v| <= 1e-12``."""
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(n <= ZERO_TOL):
        raise ZeroVector("cannot normalize a zero-length vector")
    return v / n


def angular_distance(u, v):
    """Great-circle angle between unit vectors, in ``[0, pi]``.

    Evaluated as ``atan2(|u x v|, u . v)``, which equals the clamped
    ``arccos(u . v)`` but keeps full precision for nearly parallel vectors.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    dot = np.clip(np.sum(u * v, axis=-1), -1.0, 1.0)
    cross = np.linalg.norm(np.cross(u, v), axis=-1)
    out = np.arctan2(cross, dot)
    return float(out) if out.ndim == 0 else out


def quat_to_direction(q, forward=DEFAULT_FORWARD):
    """Rotate ``forward`` by quaternion ``q`` (``q * f * q^-1``)."""
    w, x, y, z = Quaternion(*q).normalized()
    f = np.asarray(forward, dtype=float)
    qv = np.array([x, y, z])
    t = 2.0 * np.cross(qv, f)
    return normalize(f + w * t + np.cross(qv, t))


def quats_to_directions(quats, forward=DEFAULT_FORWARD):
    """Vectorised :func:`quat_to_direction` for an ``(n, 4)`` array (w, x, y, z)."""
    q = np.asarray(quats, dtype=float)
    n = np.linalg.norm(q, axis=1, keepdims=True)
    if np.any(n <= ZERO_TOL):
        raise ZeroVector("degenerate quaternion")
    q = q / n
    w, qv = q[:, :1], q[:, 1:]
    f = np.broadcast_to(np.asarray(forward, dtype=float), qv.shape)
    t = 2.0 * np.cross(qv, f)
    return normalize(f + w * t + np.cross(qv, t))


def cap_area(cap):
    """Solid angle of a cap: ``2 pi (1 - cos(half_angle))``."""
    return solid_angle(_check_half_angle(cap.half_angle))


def solid_angle(half_angle):
    """``2 pi (1 - cos a)`` evaluated as ``4 pi sin^2(a/2)`` (no cancellation for small ``a``)."""
    return 4.0 * math.pi * math.sin(0.5 * half_angle) ** 2


def _check_half_angle(a):
    if not (-1e-12 <= a <= HALF_PI + 1e-12):
        raise ValueError(f"cap half angle {a!r} outside [0, pi/2]")
    return min(max(a, 0.0), HALF_PI)


SMALL_CAP = 1e-6


def lens_area(r1, r2, d):
    """Intersection area of two caps with half angles ``r1``, ``r2`` whose
    centers are ``d`` radians apart.

    Closed form for two overlapping small circles on the unit sphere::

        A = 2 [pi - a0 - cos r1 a1 - cos r2 a2]

    where ``a1``, ``a2`` are the angles at the two centers and ``a0`` the
    angle at a crossing point of the triangle with sides ``(r1, r2, d)``.  It
    is evaluated as ``4 [sin^2(r1/2) a1 + sin^2(r2/2) a2] - 2 E`` with ``E``
    the triangle's spherical excess (L'Huilier) and half-angle formulas for
    the angles.  This keeps near full relative precision for narrow caps;
    the absolute error stays of order machine epsilon times the narrower
    radius even when the radii differ by many orders of magnitude.
    Containment and disjoint cases are handled separately; caps narrower
    than ``SMALL_CAP`` use the flat circle-circle lens.
    """
    r1 = _check_half_angle(r1)
    r2 = _check_half_angle(r2)
    small, large = (r1, r2) if r1 <= r2 else (r2, r1)
    if small <= 0.0 or d >= r1 + r2:
        return 0.0
    if d + small <= large:
        return solid_angle(small)
    if large < SMALL_CAP:
        return _planar_lens(r1, r2, d)
    # semi-perimeter and its differences, each formed from exact input differences
    s = 0.5 * (r1 + r2 + d)
    s1 = 0.5 * ((d - r1) + r2)
    s2 = 0.5 * ((d - r2) + r1)
    sd = 0.5 * ((r1 - d) + r2)
    a1 = _triangle_angle(s, s2, s1, sd)
    a2 = _triangle_angle(s, s1, s2, sd)
    excess = 4.0 * math.atan(math.sqrt(max(0.0, math.tan(0.5 * s) * math.tan(0.5 * s1)
                                            * math.tan(0.5 * s2) * math.tan(0.5 * sd))))
    area = 4.0 * (math.sin(0.5 * r1) ** 2 * a1 + math.sin(0.5 * r2) ** 2 * a2) - 2.0 * excess
    return min(max(area, 0.0), solid_angle(small))


def _triangle_angle(s, s_opp, s_b, s_c):
    """Spherical triangle angle from the semi-perimeter ``s`` and ``s`` minus each side
    (``s_opp`` for the side facing the angle)."""
    num = math.sin(s_b) * math.sin(s_c)
    den = math.sin(s) * math.sin(s_opp)
    return 2.0 * math.atan2(math.sqrt(max(num, 0.0)), math.sqrt(max(den, 0.0)))


def _planar_lens(r1, r2, d):
    # scale to unit size first so subnormal radii do not underflow
    scale = max(r1, r2)
    return scale * scale * _unit_planar_lens(r1 / scale, r2 / scale, d / scale)


def _unit_planar_lens(r1, r2, d):
    k = 0.5 * math.sqrt(max(0.0, (-d + r1 + r2) * (d + r1 - r2) * (d - r1 + r2) * (d + r1 + r2)))
    return (r1 * r1 * _acos((d * d + r1 * r1 - r2 * r2) / (2 * d * r1))
            + r2 * r2 * _acos((d * d + r2 * r2 - r1 * r1) / (2 * d * r2)) - k)


def _acos(x):
    return math.acos(min(1.0, max(-1.0, x)))


def cap_intersection_area(a, b):
    """Area of ``a`` intersected with ``b`` (both :class:`SphericalCap`)."""
    d = angular_distance(a.center, b.center)
    return lens_area(a.half_angle, b.half_angle, d)


def direction_from_lonlat(lon, lat):
    """Longitude 0 / latitude 0 is the default forward axis ``(0, 0, -1)``;
    latitude increases toward ``+y``, longitude toward ``+x``."""
    lon = np.asarray(lon, dtype=float)
    lat = np.asarray(lat, dtype=float)
    cl = np.cos(lat)
    return np.stack([cl * np.sin(lon), np.sin(lat), -cl * np.cos(lon)], axis=-1)


def lonlat_from_direction(v):
    v = np.asarray(v, dtype=float)
    lon = np.arctan2(v[..., 0], -v[..., 2])
    lat = np.arcsin(np.clip(v[..., 1], -1.0, 1.0))
    return lon, lat


def random_directions(rng, n):
    return normalize(rng.standard_normal((n, 3)))


def tangent_basis(u):
    """Two unit vectors spanning the tangent plane at ``u``."""
    u = np.asarray(u, dtype=float)
    helper = np.array([0.0, 1.0, 0.0]) if abs(u[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = normalize(np.cross(helper, u))
    e2 = np.cross(u, e1)
    return e1, e2


def geodesic_step(u, heading, angle):
    """Move ``angle`` radians from ``u`` along unit tangent ``heading``.

    Returns the new point and the parallel-transported heading.
    """
    c, s = math.cos(angle), math.sin(angle)
    p = c * u + s * heading
    h = c * heading - s * u
    p = normalize(p)
    h = h - np.dot(h, p) * p
    return p, normalize(h)


def offset_direction(u, dx, dy):
    """Point reached by the tangent offset ``(dx, dy)`` (radians) from ``u``."""
    e1, e2 = tangent_basis(u)
    r = math.hypot(dx, dy)
    if r == 0.0:
        return np.array(u, dtype=float)
    heading = (dx * e1 + dy * e2) / r
    return geodesic_step(u, heading, r)[0]
