import numpy as np
import pytest

from nshsvi import geometry as geo
from nshsvi.errors import DegeneratePolytope, DimensionMismatch, EmptyPolytope, NoRegion


def same_set(p, q, rng, n=2000, tol=1e-9):
    lo = np.minimum(*[geo.bounding_box(x)[0] for x in (p, q)]) - 0.5
    hi = np.maximum(*[geo.bounding_box(x)[1] for x in (p, q)]) + 0.5
    X = rng.uniform(lo, hi, size=(n, p.dim))
    a = np.all(X @ p.A.T <= p.b + tol, axis=1)
    b = np.all(X @ q.A.T <= q.b + tol, axis=1)
    return bool(np.all(a == b))


def unit_box():
    return geo.box([0, 0], [1, 1])


class TestIntersect:
    def test_overlapping_boxes(self, rng):
        q = geo.intersect(unit_box(), geo.box([0.5, 0.5], [1.5, 1.5]))
        assert same_set(q, geo.box([0.5, 0.5], [1, 1]), rng)
        assert geo.volume(q) == pytest.approx(0.25)

    def test_disjoint_boxes(self):
        assert geo.intersect(unit_box(), geo.box([2, 2], [3, 3])) is None

    def test_idempotent(self, rng):
        p = unit_box()
        assert same_set(geo.intersect(p, p), p, rng)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            geo.intersect(unit_box(), geo.box([0], [1]))

    def test_redundant_rows_removed(self):
        p = geo.Polytope(np.array([[1.0, 0], [1.0, 0], [0, 1.0], [-1.0, 0], [0, -1.0], [1, 1.0]]),
                         np.array([1.0, 2.0, 1.0, 0.0, 0.0, 5.0]))
        assert geo.remove_redundant(p).n_halfspaces == 4


class TestRefine:
    def test_grid_product(self, rng):
        v = geo.Fcp(((0, geo.box([0, 0], [0.5, 1])), (0, geo.box([0.5, 0], [1, 1]))))
        h = geo.Fcp(((0, geo.box([0, 0], [1, 0.5])), (0, geo.box([0, 0.5], [1, 1]))))
        r = geo.refine(v, h)
        assert len(r) == 4
        vols = sorted(geo.volume(c) for _, c in r)
        assert vols == pytest.approx([0.25] * 4)

    def test_idempotent(self):
        v = geo.Fcp(((0, geo.box([0, 0], [0.5, 1])), (0, geo.box([0.5, 0], [1, 1]))))
        r = geo.refine(v, v)
        assert len(r) == 2
        assert sorted(geo.volume(c) for _, c in r) == pytest.approx([0.5, 0.5])

    def test_whole_space_is_identity(self, rng):
        v = geo.Fcp(((0, geo.box([0, 0], [0.5, 1])), (0, geo.box([0.5, 0], [1, 1]))))
        r = geo.refine(v, geo.Fcp(((0, geo.whole_space(2)),)))
        assert len(r) == 2
        for (_, a), (_, b) in zip(v.regions, r.regions):
            assert same_set(a, b, rng)

    def test_partition_check(self):
        good = geo.Fcp(((0, geo.box([0, 0], [0.5, 1])), (0, geo.box([0.5, 0], [1, 1]))))
        assert geo.check_partition(good, {0: unit_box()}) == []
        gap = geo.Fcp(((0, geo.box([0, 0], [0.4, 1])), (0, geo.box([0.5, 0], [1, 1]))))
        assert geo.check_partition(gap, {0: unit_box()})


class TestContains:
    def test_inside(self):
        assert geo.contains(unit_box(), [0.5, 0.5], 0.0)

    def test_tolerance_band(self):
        assert geo.contains(unit_box(), [1 + 1e-12, 0.5], 1e-9)

    def test_outside(self):
        assert not geo.contains(unit_box(), [2, 0], 1e-9)

    def test_negative_tolerance_rejected(self):
        with pytest.raises(ValueError):
            geo.contains(unit_box(), [0.5, 0.5], -1.0)


class TestInteriorPoint:
    def test_box_centre(self):
        assert geo.interior_point(unit_box()) == pytest.approx([0.5, 0.5])

    def test_triangle_incenter_against_grid(self):
        tri = geo.Polytope(np.array([[-1.0, 0], [0, -1.0], [1.0, 1.0]]), np.array([0.0, 0.0, 1.0]))
        c, r = tri.chebyshev()
        # brute force: maximise the distance to the nearest side on a fine grid
        g = np.linspace(0, 1, 801)
        X, Y = np.meshgrid(g, g)
        d = np.minimum(np.minimum(X, Y), (1 - X - Y) / np.sqrt(2))
        k = np.unravel_index(np.argmax(d), d.shape)
        assert r == pytest.approx(d[k], abs=2e-3)
        assert c == pytest.approx([X[k], Y[k]], abs=3e-3)
        assert c == pytest.approx([1 - 1 / np.sqrt(2)] * 2, abs=1e-9)

    def test_empty(self):
        p = geo.Polytope(np.array([[1.0], [-1.0]]), np.array([0.0, -1.0]))
        with pytest.raises(EmptyPolytope):
            geo.interior_point(p)

    def test_flat(self):
        p = geo.Polytope(np.array([[1.0, 0], [-1.0, 0], [0, 1.0], [0, -1.0]]),
                         np.array([1.0, 0.0, 0.0, 0.0]))
        with pytest.raises(DegeneratePolytope):
            geo.interior_point(p)


class TestAffine:
    def test_identity_image(self, rng):
        p = unit_box()
        assert same_set(geo.affine_image(p, np.eye(2), np.zeros(2)), p, rng)

    def test_translation(self, rng):
        img = geo.affine_image(unit_box(), np.eye(2), np.array([1.0, 0.0]))
        assert same_set(img, geo.box([1, 0], [2, 1]), rng)

    def test_projection_is_degenerate_segment(self):
        img = geo.affine_image(unit_box(), np.array([[1.0, 0], [0, 0]]), np.zeros(2))
        assert img.degenerate
        # map the vertices by hand: the image is the segment y = 0, 0 <= x <= 1
        V = geo.vertices(unit_box()) @ np.array([[1.0, 0], [0, 0]]).T
        for v in V:
            assert geo.contains(img, v, 1e-9)
        assert geo.contains(img, [0.3, 0.0], 1e-9)
        assert not geo.contains(img, [0.3, 0.01], 1e-9)
        assert not geo.contains(img, [1.01, 0.0], 1e-9)
        assert geo.volume(img) == 0.0

    def test_identity_preimage(self, rng):
        p = unit_box()
        assert same_set(geo.affine_preimage(p, np.eye(2), np.zeros(2)), p, rng)

    def test_preimage_of_shift(self):
        half = geo.Polytope(np.array([[1.0]]), np.array([1.0]))
        pre = geo.affine_preimage(half, np.eye(1), np.array([2.0]))
        assert geo.contains(pre, [-1.0], 1e-12)
        assert not geo.contains(pre, [-0.99], 1e-12)

    def test_preimage_under_zero_map(self):
        pre = geo.affine_preimage(unit_box(), np.zeros((2, 2)), np.array([0.5, 0.5]))
        assert pre.n_halfspaces == 0

    def test_preimage_under_zero_map_outside(self):
        assert geo.affine_preimage(unit_box(), np.zeros((2, 2)), np.array([2.0, 0.5])) is None

    def test_preimage_matches_pointwise_map(self, rng):
        M = np.array([[0.5, 0.2], [-0.3, 1.1]])
        c = np.array([0.1, -0.2])
        pre = geo.affine_preimage(unit_box(), M, c)
        X = rng.uniform(-2, 2, size=(3000, 2))
        Y = X @ M.T + c
        inside = np.all((Y >= -1e-9) & (Y <= 1 + 1e-9), axis=1)
        got = np.all(X @ pre.A.T <= pre.b + 1e-9, axis=1)
        assert np.all(inside == got)


class TestPwc:
    def test_locate_and_value(self):
        fcp = geo.Fcp(((0, geo.box([0], [0.5])), (0, geo.box([0.5], [1])), (1, geo.box([0], [1]))))
        f = geo.PwcFunction(fcp, (4.0, 8.0, -1.0))
        assert f(0, [0.25]) == 4.0
        assert f(0, [0.75]) == 8.0
        assert f(0, [0.5]) == 4.0          # shared face: first region wins
        assert f(1, [0.5]) == -1.0
        with pytest.raises(NoRegion):
            f(0, [3.0])

    def test_json_round_trip(self):
        fcp = geo.Fcp(((0, geo.box([0, 0], [0.5, 1])), (0, geo.box([0.5, 0], [1, 1]))))
        back, vals = geo.fcp_from_json(geo.fcp_to_json(fcp, [1.5, 2.5]), 2)
        assert vals == [1.5, 2.5]
        f = geo.PwcFunction(back, vals)
        assert f(0, [0.2, 0.2]) == 1.5 and f(0, [0.8, 0.2]) == 2.5

    def test_difference_covers_remainder(self, rng):
        p, q = unit_box(), geo.box([0.25, 0.25], [0.75, 0.75])
        pieces = geo.difference(p, q)
        assert sum(geo.volume(c) for c in pieces) == pytest.approx(0.75)
        X = rng.uniform(0, 1, size=(2000, 2))
        in_q = np.all((X > 0.25) & (X < 0.75), axis=1)
        in_pieces = np.zeros(len(X), bool)
        for c in pieces:
            in_pieces |= np.all(X @ c.A.T <= c.b - 1e-12, axis=1)
        assert not np.any(in_q & in_pieces)


class TestMerge:
    def test_adjacent_equal_values_merge(self, rng):
        out = geo.merge_cells([(geo.box([0, 0], [0.5, 1]), 2.0), (geo.box([0.5, 0], [1, 1]), 2.0)])
        assert len(out) == 1
        assert same_set(out[0][0], unit_box(), rng)
        assert out[0][1] == 2.0

    def test_different_values_kept(self):
        out = geo.merge_cells([(geo.box([0, 0], [0.5, 1]), 2.0), (geo.box([0.5, 0], [1, 1]), 3.0)])
        assert [v for _, v in out] == [2.0, 3.0]

    def test_nonconvex_union_kept(self):
        # an L shape: hull volume exceeds the sum
        cells = [(geo.box([0, 0], [1, 0.5]), 1.0), (geo.box([0, 0.5], [0.5, 1]), 1.0)]
        assert len(geo.merge_cells(cells)) == 2

    def test_pointwise_values_unchanged(self, rng):
        cells = [(geo.box([i / 4, 0], [(i + 1) / 4, 1]), float(i // 2)) for i in range(4)]
        out = geo.merge_cells(cells)
        assert len(out) == 2
        for x in rng.uniform(0, 1, size=(500, 2)):
            want = float(int(x[0] * 4) // 2)
            got = [v for c, v in out if geo.contains(c, x, 1e-12)]
            assert got[0] == want


class TestFacetSeparated:
    def test_disjoint_boxes(self):
        assert geo.facet_separated(unit_box(), geo.box([2, 0], [3, 1]))

    def test_touching_boxes(self):
        assert geo.facet_separated(unit_box(), geo.box([1, 0], [2, 1]))

    def test_overlap_not_separated(self):
        assert not geo.facet_separated(unit_box(), geo.box([0.5, 0.5], [2, 2]))

    def test_agrees_with_intersection(self, rng):
        for _ in range(50):
            lo = rng.uniform(-1, 1, 2)
            q = geo.box(lo, lo + rng.uniform(0.1, 1, 2))
            if geo.facet_separated(unit_box(), q):
                assert geo.intersect(unit_box(), q) is None or geo.volume(geo.intersect(unit_box(), q)) < 1e-12
