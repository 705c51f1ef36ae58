import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cleavekit.core import MaskRegion
from cleavekit.errors import DegenerateCohort, ZeroArea
from cleavekit.symmetry import (
    cohort_reports,
    contour_symmetry,
    contour_symmetry_from_distances,
    hu_distance,
    hu_invariants,
    shape_distance,
    size_symmetry,
    symmetry_table,
)
from cleavekit.tracking import Track, track_sequence

from conftest import disc, frame, square

QUAD = np.array([[200, 200], [320, 230], [240, 330], [230, 260]], dtype=float)


def blob(angle=0.0, dx=0.0, dy=0.0, scale=1.0):
    c, s = math.cos(angle), math.sin(angle)
    p = (QUAD - 250.0) * scale
    p = np.c_[c * p[:, 0] - s * p[:, 1], s * p[:, 0] + c * p[:, 1]] + 250.0 + (dx, dy)
    return MaskRegion.from_contour(p)


def test_size_symmetry_values():
    assert size_symmetry([500, 500, 500]) == 100.0
    assert size_symmetry([100, 300]) == pytest.approx(100 / 1.5)
    assert size_symmetry([75, 125]) == pytest.approx(80.0)
    with pytest.raises(DegenerateCohort):
        size_symmetry([10])
    with pytest.raises(ZeroArea):
        size_symmetry([10, 0])


@given(st.lists(st.floats(1, 1e5), min_size=2, max_size=8), st.floats(0.01, 100), st.randoms())
def test_size_symmetry_invariances(areas, k, rnd):
    s = size_symmetry(areas)
    assert 0 < s <= 100
    assert size_symmetry([a * k for a in areas]) == pytest.approx(s, rel=1e-9)
    shuffled = list(areas)
    rnd.shuffle(shuffled)
    assert size_symmetry(shuffled) == pytest.approx(s, rel=1e-12)


def test_hu_matches_exact_polygon_moments():
    cv2 = pytest.importorskip("cv2")
    h = hu_invariants(blob())
    ref = cv2.HuMoments(cv2.moments(QUAD.astype(np.float32))).ravel()
    assert h[0] > 0
    np.testing.assert_allclose(h, ref, rtol=5e-3)


def test_hu_translation_and_scale():
    h = hu_invariants(blob())
    assert np.abs(hu_invariants(blob(dx=17, dy=-9)) - h).max() < 1e-6
    h15 = hu_invariants(blob(scale=1.5))
    np.testing.assert_allclose(h15[:6], h[:6], rtol=0.01)


def test_hu_zero_area():
    sliver = MaskRegion(np.array([[10.0, 10.0], [10.01, 10.0], [10.01, 10.01]]), (10.005, 10.003), 5e-5)
    with pytest.raises(ZeroArea):
        hu_invariants(sliver)


def test_shape_distance_identity_symmetry():
    a, b = blob(), disc(250, 250, 50, aspect=1.4)
    assert shape_distance(a, a) == 0.0
    assert shape_distance(a, b) == pytest.approx(shape_distance(b, a), abs=1e-12)


@pytest.mark.parametrize("angle, dx, dy", [(0.0, 0.37, -0.81), (0.3, 0.0, 0.0), (1.0, 3.5, 2.25), (math.pi / 2, 0.0, 0.0), (math.pi, 12.0, -40.0)])
def test_shape_distance_rigid_motion(angle, dx, dy):
    assert shape_distance(blob(), blob(angle, dx, dy)) < 1e-3


def test_mirror_flips_only_h7_sign():
    a = blob()
    mirrored = MaskRegion.from_contour(np.c_[500 - QUAD[:, 0], QUAD[:, 1]][::-1])
    ha, hm = hu_invariants(a), hu_invariants(mirrored)
    np.testing.assert_allclose(hm[:6], ha[:6], rtol=5e-3)
    assert hm[6] == pytest.approx(-ha[6], rel=5e-3)
    m7 = math.log10(abs(ha[6]))
    assert shape_distance(a, mirrored) == pytest.approx(2 / abs(m7), rel=1e-2)
    # a mirror-symmetric shape has h7 = 0, so its reflection is at distance 0
    e = disc(250, 250, 50, aspect=1.5)
    assert shape_distance(e, MaskRegion.from_contour(np.c_[500 - e.contour[:, 0], e.contour[:, 1]][::-1])) < 1e-6


def test_circle_vs_square():
    d = shape_distance(disc(250, 250, 100 / math.sqrt(math.pi), n=256), square(200, 200, 100))
    assert d > 0
    assert d == pytest.approx(0.0321, abs=5e-4)


def test_contour_symmetry_values():
    a = blob()
    assert contour_symmetry([a, a, a]) == 100.0
    assert contour_symmetry([a, a.translated(40, 0), a.translated(0, 40)]) == pytest.approx(100.0, abs=1e-9)
    assert contour_symmetry_from_distances([1.4, 0.0, 0.0]) == pytest.approx(100 * (1 - 1 / 3))
    assert contour_symmetry_from_distances([0.27]) == pytest.approx(73.0)
    with pytest.raises(DegenerateCohort):
        contour_symmetry([a])


@given(st.lists(st.floats(0, 10), min_size=1, max_size=10), st.integers(0, 9), st.floats(0, 5))
def test_contour_symmetry_range_and_monotone(ds, i, bump):
    s = contour_symmetry_from_distances(ds)
    assert 0.0 <= s <= 100.0
    i %= len(ds)
    bigger = list(ds)
    bigger[i] += bump
    assert contour_symmetry_from_distances(bigger) <= s


def make_track(code, x, area):
    t = Track(tuple(code))
    t.observe(0, disc(x, 250, math.sqrt(area / math.pi)))
    return t


def test_cohorts_two_blastomeres():
    (rep,) = cohort_reports([make_track((0, 0), 200, 5000), make_track((0, 1), 320, 4000)])
    assert rep.n == 2 and rep.members == ("A", "B")
    assert rep.size_s == pytest.approx(size_symmetry([5000, 4000]), rel=1e-3)


def test_cohorts_four_blastomeres():
    tracks = [make_track(c, x, 2500) for c, x in [((0, 0, 0), 100), ((0, 0, 1), 200), ((0, 1, 0), 300), ((0, 1, 1), 400)]]
    (rep,) = cohort_reports(tracks)
    assert rep.n == 3
    assert [(p.a, p.b) for p in rep.pairs] == [("A0", "A1"), ("B0", "B1")]
    assert rep.cont_s == pytest.approx(100.0, abs=0.5)


def test_single_zygote_has_no_report():
    assert cohort_reports([make_track((0,), 250, 10000)]) == []


def test_reports_invariant_to_track_order():
    tracks = [make_track((0, 0), 200, 5000), make_track((0, 1), 320, 4000)]
    assert cohort_reports(tracks) == cohort_reports(tracks[::-1])


def test_symmetry_table_over_sequence():
    frames = [frame(0, [(250, 250)], [10000]), frame(1, [(200, 250), (300, 250)], [5200, 4800])]
    table = symmetry_table(track_sequence(frames).tracks)
    assert [(r.frame_index, r.n) for r in table] == [(1, 2)]
