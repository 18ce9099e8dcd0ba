import math

import numpy as np
import pytest
import warnings

from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from vpmeta import geometry as geo
from vpmeta.errors import ZeroVector

HALF_PI = math.pi / 2


def ring_integral_area(r1, r2, d):
    """Intersection area by integrating, ring by ring around the smaller cap, the arc inside the other."""
    r1, r2 = min(r1, r2), max(r1, r2)

    def arc(theta):
        denom = math.sin(theta) * math.sin(d)
        if denom == 0.0:
            # ring or centre offset vanishes: the whole ring is in or out
            return 2 * math.pi if abs(theta - d) <= r2 else 0.0
        # cos r2 - cos t cos d, written as a product to avoid cancellation
        diff = -2 * math.sin(0.5 * (r2 + theta - d)) * math.sin(0.5 * (r2 - theta + d))
        c = diff / denom + 1.0
        return 2 * math.acos(min(1.0, max(-1.0, c)))

    breaks = [x for x in (abs(d - r2), d + r2) if 0 < x < r1]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        val, _ = quad(lambda t: math.sin(t) * arc(t), 0.0, r1, points=breaks or None, limit=200,
                      epsabs=0.0, epsrel=1e-12)
    return val


def test_normalize_examples():
    assert np.allclose(geo.normalize([2, 0, 0]), [1, 0, 0])
    assert np.allclose(geo.normalize([0, 0, -5]), [0, 0, -1])
    assert np.allclose(geo.normalize([1, 1, 1]), [0.57735] * 3, atol=1e-5)


def test_normalize_rejects_zero():
    with pytest.raises(ZeroVector):
        geo.normalize([0, 0, 1e-13])


def test_angular_distance_examples():
    assert geo.angular_distance([1, 0, 0], [1, 0, 0]) == 0.0
    assert geo.angular_distance([1, 0, 0], [0, 1, 0]) == pytest.approx(HALF_PI)
    assert geo.angular_distance([1, 0, 0], [math.cos(0.3), math.sin(0.3), 0]) == pytest.approx(0.3, abs=1e-14)


def test_angular_distance_tiny_angles_are_resolved():
    # arccos of a rounded dot product cannot resolve 1e-9 rad
    v = [math.cos(1e-9), math.sin(1e-9), 0.0]
    assert geo.angular_distance([1, 0, 0], v) == pytest.approx(1e-9, rel=1e-6)


def test_angular_distance_antipodal():
    assert geo.angular_distance([0, 0, 1], [0, 0, -1]) == pytest.approx(math.pi)


unit_vectors = st.tuples(*[st.floats(-1, 1, allow_nan=False)] * 3).filter(
    lambda v: sum(x * x for x in v) > 1e-4).map(geo.normalize)


@given(unit_vectors, unit_vectors, unit_vectors)
def test_angular_distance_metric_properties(u, v, w):
    duv = geo.angular_distance(u, v)
    assert 0.0 <= duv <= math.pi
    assert duv == pytest.approx(geo.angular_distance(v, u), abs=1e-12)
    assert geo.angular_distance(u, w) <= duv + geo.angular_distance(v, w) + 1e-9


def test_angular_distance_vectorized_matches_scalar():
    rng = np.random.default_rng(3)
    a = geo.random_directions(rng, 50)
    b = geo.random_directions(rng, 50)
    batch = geo.angular_distance(a, b)
    assert np.array_equal(batch, [geo.angular_distance(x, y) for x, y in zip(a, b)])


def test_quat_to_direction_examples():
    fwd = (0, 0, -1)
    assert np.allclose(geo.quat_to_direction(geo.Quaternion(1, 0, 0, 0), fwd), [0, 0, -1])
    assert np.allclose(geo.quat_to_direction(geo.Quaternion(0, 0, 1, 0), fwd), [0, 0, 1], atol=1e-15)
    c = math.cos(math.pi / 4)
    assert np.allclose(geo.quat_to_direction(geo.Quaternion(c, 0, c, 0), fwd), [-1, 0, 0], atol=1e-15)


def test_quat_to_direction_rejects_degenerate():
    with pytest.raises(ZeroVector):
        geo.quat_to_direction(geo.Quaternion(0, 0, 0, 0))


def _rotation_matrix(q):
    # independent oracle: textbook rotation matrix of a unit quaternion
    w, x, y, z = np.asarray(q) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


@given(st.tuples(*[st.floats(-1, 1, allow_nan=False)] * 4).filter(lambda q: sum(x * x for x in q) > 1e-3))
def test_quat_to_direction_matches_rotation_matrix(q):
    d = geo.quat_to_direction(geo.Quaternion(*q))
    assert np.linalg.norm(d) == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(d, _rotation_matrix(q) @ [0, 0, -1], atol=1e-12)


def test_quats_to_directions_batch():
    rng = np.random.default_rng(0)
    qs = rng.normal(size=(20, 4))
    out = geo.quats_to_directions(qs)
    for q, d in zip(qs, out):
        assert np.allclose(d, geo.quat_to_direction(geo.Quaternion(*q)), atol=1e-14)


def test_cap_area_examples():
    assert geo.cap_area(geo.SphericalCap((0, 0, 1), 0.0)) == 0.0
    assert geo.cap_area(geo.SphericalCap((0, 0, 1), HALF_PI)) == pytest.approx(2 * math.pi)
    # 2 pi (1 - 0.9238795325) = 0.4782790029
    assert geo.cap_area(geo.SphericalCap((0, 0, 1), math.pi / 8)) == pytest.approx(0.4782790029, abs=1e-10)


def test_half_angle_domain():
    with pytest.raises(ValueError):
        geo.lens_area(HALF_PI + 0.01, 0.1, 0.1)
    with pytest.raises(ValueError):
        geo.lens_area(-0.01, 0.1, 0.1)


def test_cap_intersection_containment_and_tangent():
    a = math.pi / 8
    for b in (a, 0.5, 1.0, HALF_PI):
        got = geo.cap_intersection_area(geo.SphericalCap((0, 0, 1), a), geo.SphericalCap((0, 0, 1), b))
        assert got == pytest.approx(2 * math.pi * (1 - math.cos(a)), rel=1e-14)
    assert geo.lens_area(0.3, 0.4, 0.7) == 0.0
    assert geo.lens_area(0.3, 0.4, 2.0) == 0.0


def test_tiny_caps_use_flat_lens():
    r = 1e-6
    # two equal discs with centres one radius apart: (2 pi / 3 - sqrt(3) / 2) r^2
    assert geo.lens_area(r, r, r) == pytest.approx((2 * math.pi / 3 - math.sqrt(3) / 2) * r * r, rel=1e-9)
    assert geo.lens_area(1e-308, 1e-308, 1e-308) >= 0.0


def test_lens_area_matches_ring_integral_pi_over_8():
    a = math.pi / 8
    assert geo.lens_area(a, a, a) == pytest.approx(ring_integral_area(a, a, a), rel=1e-9)


@settings(max_examples=300, deadline=None)
@given(st.floats(0.0, HALF_PI), st.floats(0.0, HALF_PI), st.floats(0.0, math.pi))
def test_lens_area_matches_ring_integral(r1, r2, d):
    got = geo.lens_area(r1, r2, d)
    # absolute floor: rounding of order eps times the narrower radius
    assert got == pytest.approx(ring_integral_area(r1, r2, d), rel=1e-7, abs=1e-15 * min(r1, r2))


@given(st.floats(0.0, HALF_PI), st.floats(0.0, HALF_PI), st.floats(0.0, math.pi))
def test_lens_area_symmetric_and_bounded(r1, r2, d):
    a = geo.lens_area(r1, r2, d)
    assert a == pytest.approx(geo.lens_area(r2, r1, d), abs=1e-12)
    small = 2 * math.pi * (1 - math.cos(min(r1, r2)))
    assert -1e-15 <= a <= small + 1e-12


@given(st.floats(0.0, HALF_PI), st.floats(0.0, HALF_PI),
       st.lists(st.floats(0.0, math.pi), min_size=2, max_size=20))
def test_lens_area_non_increasing_in_separation(r1, r2, seps):
    seps = sorted(seps)
    areas = [geo.lens_area(r1, r2, d) for d in seps]
    assert all(later <= earlier + 1e-12 for earlier, later in zip(areas, areas[1:]))


def test_cap_intersection_uses_actual_centres():
    rng = np.random.default_rng(11)
    for _ in range(20):
        u, v = geo.random_directions(rng, 2)
        a = geo.SphericalCap(u, 0.4)
        b = geo.SphericalCap(v, 0.9)
        assert geo.cap_intersection_area(a, b) == pytest.approx(
            geo.lens_area(0.4, 0.9, geo.angular_distance(u, v)), abs=1e-15)


def test_lonlat_roundtrip_and_convention():
    assert np.allclose(geo.direction_from_lonlat(0.0, 0.0), [0, 0, -1])
    assert np.allclose(geo.direction_from_lonlat(0.0, HALF_PI), [0, 1, 0], atol=1e-15)
    rng = np.random.default_rng(5)
    for d in geo.random_directions(rng, 100):
        lon, lat = geo.lonlat_from_direction(d)
        assert np.allclose(geo.direction_from_lonlat(lon, lat), d, atol=1e-12)


def test_geodesic_step_moves_by_angle_and_keeps_heading_tangent():
    rng = np.random.default_rng(8)
    for u in geo.random_directions(rng, 30):
        e1, _ = geo.tangent_basis(u)
        p, h = geo.geodesic_step(u, e1, 0.05)
        assert geo.angular_distance(u, p) == pytest.approx(0.05, abs=1e-12)
        assert abs(np.dot(p, h)) < 1e-12
        assert np.linalg.norm(h) == pytest.approx(1.0, abs=1e-12)
