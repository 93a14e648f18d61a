import math

import numpy as np
import pytest

from spectral_embed.manifold import Circle, make_sphere
from spectral_embed.spectrum import GeometryBounds, compute_spectrum
from spectral_embed.heat import (HeatEvaluator, decay_check, decay_value_bound,
                                 heat_trace, varadhan_check,
                                 varadhan_time_grid)


CIRCLE = Circle(2 * np.pi)

CALIBRATED = GeometryBounds(dim=1, iota=np.pi, volume=2 * np.pi,
                            a=2 * math.e * np.pi ** 2, C=1.0, r_h=1.0)


def circle_kernel_oracle(d, t, images=30):
    """Image-sum (Poisson) representation of the circle heat kernel."""
    ms = np.arange(-images, images + 1)
    return np.sum(np.exp(-(d + 2 * np.pi * ms) ** 2 / (4 * t))) \
        / np.sqrt(4 * np.pi * t)


@pytest.fixture(scope="module")
def circle_spec():
    return compute_spectrum(CIRCLE, 300)


@pytest.fixture(scope="module")
def circle_ev(circle_spec):
    return HeatEvaluator(circle_spec, circle_spec.count - 1)


class TestKernel:
    def test_constant_mode_only(self, circle_spec):
        ev = HeatEvaluator(circle_spec, 0)
        for t in (0.1, 1.0, 10.0):
            val = ev.kernel(np.array([0.3]), t, np.array([2.0]))
            assert val == pytest.approx(1 / (2 * np.pi), rel=1e-14)

    def test_diagonal_against_image_sum(self, circle_ev):
        val = circle_ev.kernel(np.array([0.4]), 1.0, np.array([0.4]))
        assert val == pytest.approx(circle_kernel_oracle(0.0, 1.0), rel=1e-10)

    def test_off_diagonal_against_image_sum(self, circle_ev):
        for d in (0.5, 1.5, np.pi):
            val = circle_ev.kernel(np.array([0.2]), 0.3, np.array([0.2 + d]))
            assert val == pytest.approx(circle_kernel_oracle(d, 0.3),
                                        rel=1e-9)

    def test_long_time_limit(self, circle_spec):
        ev = HeatEvaluator(circle_spec, 50)
        lam1 = circle_spec.eigenvalues[1]
        sup_sq = circle_spec.sup_norms()[1:51].max() ** 2
        t = 30.0
        val = ev.kernel(np.array([1.0]), t, np.array([4.0]))
        assert abs(val - 1 / (2 * np.pi)) <= np.exp(-lam1 * t) * 50 * sup_sq

    def test_exact_symmetry(self, circle_ev):
        p, q = np.array([0.7]), np.array([2.9])
        assert circle_ev.kernel(p, 0.37, q) == circle_ev.kernel(q, 0.37, p)

    def test_truncation_bounds_index(self, circle_spec):
        with pytest.raises(ValueError):
            HeatEvaluator(circle_spec, circle_spec.count)

    def test_unit_mass(self, circle_ev):
        assert circle_ev.integrate_from(np.array([0.7]), 0.4) \
            == pytest.approx(1.0, abs=1e-8)

    def test_unit_mass_on_mesh(self):
        spec = compute_spectrum(make_sphere(1.0, 2), 10)
        ev = HeatEvaluator(spec, 9)
        # only the constant mode integrates to a nonzero value, exactly in
        # the mesh quadrature
        assert ev.integrate_from(3, 0.2) == pytest.approx(1.0, abs=1e-12)

    def test_positivity_up_to_tail(self, circle_spec):
        from spectral_embed.spectrum import truncation_tail_bound
        ev = HeatEvaluator(circle_spec, 40)
        eps = truncation_tail_bound(circle_spec, 0.05, CALIBRATED, start=40)
        P = CIRCLE.sample_points(256)
        vals = ev.kernel_matrix(P, 0.05, P)
        assert vals.min() >= -eps

    def test_semigroup_in_coefficient_space(self, circle_spec):
        ev = HeatEvaluator(circle_spec, 60)
        P = CIRCLE.sample_points(1024)
        w = CIRCLE.sample_weights(P)
        t, s = 0.3, 0.5
        lhs = ev.kernel_matrix(P[:8], t + s, P[:8])
        mid_a = ev.kernel_matrix(P[:8], t, P)
        mid_b = ev.kernel_matrix(P, s, P[:8])
        rhs = (mid_a * w) @ mid_b
        assert np.abs(lhs - rhs).max() < 1e-6


class TestGradient:
    def test_zero_at_coincident_points(self, circle_ev):
        g = circle_ev.gradient(np.array([1.3]), 0.5, np.array([1.3]))
        assert np.abs(g).max() < 1e-10

    def test_zero_for_constant_mode(self, circle_spec):
        ev = HeatEvaluator(circle_spec, 0)
        g = ev.gradient(np.array([1.0]), 0.5, np.array([2.0]))
        assert np.all(g == 0.0)

    def test_matches_finite_differences(self, circle_ev):
        t, h = 0.2, 1e-5
        for theta in (0.3, 1.1, 2.5):
            g = circle_ev.gradient(np.array([theta]), t, np.array([0.0]))[0]
            up = circle_ev.kernel(np.array([theta + h]), t, np.array([0.0]))
            dn = circle_ev.kernel(np.array([theta - h]), t, np.array([0.0]))
            assert g == pytest.approx((up - dn) / (2 * h), abs=1e-6)

    def test_mesh_gradient_matches_analytic_backend(self):
        # K_N is basis independent once a degenerate band is complete, so
        # the mesh kernel gradient must match the closed-form backend
        mesh = make_sphere(1.0, 3)
        spec = compute_spectrum(mesh, 9)       # bands l <= 2 complete
        ev = HeatEvaluator(spec, 8)
        sphere = mesh.reference
        exact = HeatEvaluator(compute_spectrum(sphere, 9), 8)
        P = sphere.mesh_points(mesh)
        t = 0.5
        for p, q in ((17, 400), (3, 77)):
            g_mesh = ev.gradient(p, t, q)
            g_true = exact.gradient(P[p], t, P[q])
            scale = max(np.linalg.norm(g_true), 0.05)
            assert np.linalg.norm(g_mesh - g_true) < 0.08 * scale


class TestTrace:
    def test_long_time(self, circle_spec):
        val, _ = heat_trace(circle_spec, 50.0)
        assert val == pytest.approx(1.0, abs=1e-12)

    def test_circle_t1_value(self, circle_spec):
        val, _ = heat_trace(circle_spec, 1.0)
        oracle = 1 + 2 * sum(np.exp(-k ** 2) for k in range(1, 40))
        assert val == pytest.approx(oracle, rel=1e-12)

    def test_strictly_decreasing(self, circle_spec):
        ts = np.linspace(0.05, 3.0, 24)
        vals, _ = heat_trace(circle_spec, ts)
        assert np.all(np.diff(vals) < 0)

    def test_bound_comparison(self, circle_spec):
        # with the valid generous defaults the trace bound dominates
        bounds = GeometryBounds(dim=1, iota=np.pi, volume=2 * np.pi, r_h=1.0)
        for t in (0.2, 1.0, 3.0):
            val, bound = heat_trace(circle_spec, t, bounds)
            assert val <= bound


class TestDecay:
    def test_circle_flags_pass(self, circle_ev):
        bounds = GeometryBounds(dim=1, iota=np.pi, volume=2 * np.pi, r_h=1.0)
        pairs = [(np.array([0.0]), np.array([0.5])),
                 (np.array([0.0]), np.array([np.pi]))]
        ts = [0.01, 0.05, 0.1, 0.5, 1.0]
        rep = decay_check(circle_ev, bounds, pairs, ts)
        assert rep.all_pass()
        assert all(r.grad_flag == "pass" for r in rep.rows)

    def test_bound_at_zero_distance(self):
        bounds = GeometryBounds(dim=1, iota=np.pi, volume=2 * np.pi, r_h=1.0)
        t = 0.3
        expected = bounds.C / (bounds.a * min(t, 1.0)) ** 0.5
        assert decay_value_bound(0.0, t, bounds) == pytest.approx(expected)

    def test_inflated_kernel_fails(self, circle_spec):
        class Inflated(HeatEvaluator):
            def kernel(self, p, t, q):
                return super().kernel(p, t, q) * 1e6

        ev = Inflated(circle_spec, circle_spec.count - 1)
        bounds = GeometryBounds(dim=1, iota=np.pi, volume=2 * np.pi, r_h=1.0)
        rep = decay_check(ev, bounds, [(np.array([0.0]), np.array([0.5]))],
                          [0.1])
        assert not rep.all_pass()
        assert not rep.rows[0].value_pass

    def test_outside_gradient_regime_marked(self, circle_ev):
        bounds = GeometryBounds(dim=1, iota=np.pi, volume=2 * np.pi, r_h=0.1)
        rep = decay_check(circle_ev, bounds,
                          [(np.array([0.0]), np.array([1.0]))], [0.005, 1.0])
        flags = {r.t: r.grad_flag for r in rep.rows}
        assert flags[0.005] in ("pass", "fail")
        assert flags[1.0] == "outside_range"


@pytest.fixture(scope="module")
def big_ev():
    spec = compute_spectrum(CIRCLE, 700)
    return HeatEvaluator(spec, 699)


class TestVaradhan:

    def test_unit_distance(self, big_ev):
        pairs = [(np.array([0.0]), np.array([1.0]))]
        rep = varadhan_check(big_ev, pairs, [(0.05, 0.02, 0.01)],
                             bounds=CALIBRATED)
        assert rep.rows[0].rel_error < 0.05

    def test_antipodal(self, big_ev):
        pairs = [(np.array([0.0]), np.array([np.pi]))]
        rep = varadhan_check(big_ev, pairs,
                             [varadhan_time_grid(np.pi)], bounds=CALIBRATED)
        assert rep.rows[0].extrapolated == pytest.approx(np.pi ** 2, rel=0.05)

    def test_coincident_pair_limit(self, big_ev):
        spec = compute_spectrum(CIRCLE, 4200)
        ev = HeatEvaluator(spec, 4199)
        rep = varadhan_check(ev, [(np.array([1.0]), np.array([1.0]))])
        assert abs(rep.rows[0].extrapolated) < 1e-3

    def test_underflow_dropped_with_warning(self, big_ev):
        # at t = 0.005 the antipodal kernel is ~1e-215, far below the
        # floating-point resolution of the spectral sum
        pairs = [(np.array([0.0]), np.array([np.pi]))]
        with pytest.warns(RuntimeWarning, match="underflow"):
            rep = varadhan_check(big_ev, pairs, [(0.15, 0.1, 0.005)])
        assert rep.rows[0].dropped == (0.005,)
        assert rep.rows[0].used_ts == (0.15, 0.1)

    def test_truncation_precondition(self, circle_spec):
        ev = HeatEvaluator(circle_spec, 10)
        with pytest.raises(ValueError, match="truncation"):
            varadhan_check(ev, [(np.array([0.0]), np.array([1.0]))],
                           [(0.05, 0.02, 0.01)], bounds=CALIBRATED)

    def test_default_grid_scales_with_distance(self):
        g1 = varadhan_time_grid(0.5)
        g2 = varadhan_time_grid(1.0)
        assert np.allclose(np.asarray(g2) / np.asarray(g1), 4.0)
        assert varadhan_time_grid(0.0) == (1e-4, 3e-5, 1e-5)


def test_semigroup_exact_on_mesh():
    # mass-orthonormality makes the composition exact in coefficient space
    mesh = make_sphere(1.0, 2)
    spec = compute_spectrum(mesh, 12)
    ev = HeatEvaluator(spec, 11)
    verts = np.arange(len(mesh.vertices))
    lhs = ev.kernel_matrix(verts[:6], 0.7, verts[:6])
    mid_a = ev.kernel_matrix(verts[:6], 0.3, verts)
    mid_b = ev.kernel_matrix(verts, 0.4, verts[:6])
    rhs = (mid_a * mesh.masses) @ mid_b
    assert np.abs(lhs - rhs).max() < 1e-8
