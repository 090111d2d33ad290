"""Decomposition evaluators: tight optimization, closed forms, audits."""
from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmreach import (ExtendedBox, OptimizerConfig, OrderViolation,
                     SpecialCaseError, SystemConfigError, TightDecomposition,
                     UserDecomposition, backward_special_case,
                     brute_force_decomp_oracle, check_condition1, check_kamke,
                     closed_form_decomp, eval_field, loose_decomposition,
                     make_decomposition, negate_system,
                     negative_control_decomposition, parse_system,
                     tight_decomp_eval)
from mmreach.decomposition import classify_orientation

from conftest import sample_ordered_tuple

Z = np.zeros(0)


class TestOrientation:
    def test_forward(self):
        assert classify_orientation(np.array([0.0]), Z, np.array([1.0]), Z) == "forward"

    def test_reversed(self):
        assert classify_orientation(np.array([1.0]), Z, np.array([0.0]), Z) == "reversed"

    def test_diagonal(self):
        assert classify_orientation(np.array([1.0]), Z, np.array([1.0]), Z) == "diagonal"

    def test_mixed_rejected(self):
        with pytest.raises(OrderViolation):
            classify_orientation(np.array([0.0, 1.0]), Z, np.array([1.0, 0.0]), Z)

    def test_disturbance_must_match_orientation(self):
        x, xh = np.array([0.0]), np.array([1.0])
        w, wh = np.array([0.5]), np.array([0.0])
        with pytest.raises(OrderViolation):
            classify_orientation(x, w, xh, wh)


class TestClosedFormAbs2d:
    """Hand-derived values for d = (nearest |x1 - y2| over y2 in the x2
    interval with the sign pattern of the orientation, -xh1)."""

    def test_inside_interval(self, abs2d_closed):
        # x1 = 0.5 lies in [0, 1]: some y2 equals x1, so the minimum is 0.
        got = abs2d_closed([0.5, 0.0], Z, [1.0, 1.0], Z)
        assert np.allclose(got, [0.0, -1.0])

    def test_left_of_interval(self, abs2d_closed):
        # x1 = -1 below [0, 1]: nearest point is y2 = 0, distance 1.
        got = abs2d_closed([-1.0, 0.0], Z, [0.0, 1.0], Z)
        assert np.allclose(got, [1.0, 0.0])

    def test_right_of_interval(self, abs2d_closed):
        # x1 = 2 above [0, 1]: nearest point is y2 = 1, distance 1.
        got = abs2d_closed([2.0, 0.0], Z, [2.0, 1.0], Z)
        assert np.allclose(got, [1.0, -2.0])

    def test_reversed_orientation(self, abs2d_closed):
        # Upper-face value: farthest |x1 - y2| over y2 in [0, 1] from x1 = 1.
        got = abs2d_closed([1.0, 1.0], Z, [0.5, 0.0], Z)
        assert np.allclose(got, [1.0, -0.5])

    def test_diagonal_returns_field(self, abs2d_closed, abs2d):
        x = np.array([0.3, -0.8])
        assert np.allclose(abs2d_closed(x, Z, x, Z), eval_field(abs2d, x))


class TestClosedFormPoly3d:
    def test_known_point_three_routes(self, poly3d, poly3d_closed, poly3d_tight):
        # Frozen agreement point: hand formula, optimizer, and dense grid
        # all give the same vector.
        x, xh = np.array([0.0, -1.0, 0.0]), np.array([0.0, 1.0, 0.0])
        w = wh = np.array([-0.25, 0.0])
        want = np.array([-1.25, 2.0, -0.984375])
        assert np.allclose(poly3d_closed(x, w, xh, wh), want, atol=1e-12)
        assert np.allclose(poly3d_tight(x, w, xh, wh), want, atol=1e-6)
        assert np.allclose(brute_force_decomp_oracle(poly3d, x, w, xh, wh), want,
                           atol=1e-6)

    def test_concave_endpoint_cases(self, poly3d_closed):
        # With w1 < 0 the quadratic w1*y^2 - y is concave, so its minimum
        # over [x2, xh2] is at an endpoint; both hand values below come from
        # evaluating the endpoints directly.
        w = wh = np.array([-0.25, 0.1])
        # Right endpoint wins: -0.25*9 - 3 + 0.1.
        got = poly3d_closed([0.0, -3.0, 0.0], w, [0.0, 3.0, 0.0], wh)
        assert got[0] == pytest.approx(-5.15)
        # Left endpoint wins: -0.25*36 + 6 + 0.1.
        got = poly3d_closed([0.0, -6.0, 0.0], w, [0.0, 1.0, 0.0], wh)
        assert got[0] == pytest.approx(-2.9)

    def test_convex_vertex_case(self, poly3d_closed):
        # The interior-vertex branch needs w1 > 0, outside this system's
        # disturbance range, so drive the formula directly: minimum of
        # 0.25*y^2 - y + 0.1 over [0, 4] is at the vertex y = 2.
        x = np.array([0.0, 0.0, 0.0])
        xh = np.array([0.0, 4.0, 0.0])
        got = poly3d_closed.eval_unchecked(x, [0.25, 0.1], xh, [0.25, 0.1],
                                           "forward")
        assert got[0] == pytest.approx(0.25 * 4 - 2 + 0.1)

    def test_second_component_is_linear(self, poly3d_closed):
        got = poly3d_closed([0.1, 0.0, -0.5], [-0.2, 0.0],
                            [0.4, 1.0, 2.0], [-0.1, 0.2])
        assert got[1] == pytest.approx(-0.5 + 2.0)

    def test_third_component_by_hand(self, poly3d_closed):
        # x1 - y2 - z1^3 minimized at y2 = xh2, z1 = wh1 for the lower face.
        got = poly3d_closed([0.1, 0.0, -0.5], [-0.2, 0.0],
                            [0.4, 1.0, 2.0], [-0.1, 0.2])
        assert got[2] == pytest.approx(0.1 - 1.0 - (-0.1) ** 3)


class TestTightAgainstOracles:
    N_POINTS = 30

    def test_abs2d_matches_dense_grid(self, abs2d, abs2d_tight, abs2d_closed):
        # Narrow intervals keep the dense grid's kink resolution below the
        # comparison tolerance.
        rng = np.random.default_rng(11)
        for _ in range(self.N_POINTS):
            x, w, xh, wh = sample_ordered_tuple(abs2d, rng,
                                                width_range=(0.005, 0.04))
            got = abs2d_tight(x, w, xh, wh)
            ref = brute_force_decomp_oracle(abs2d, x, w, xh, wh, points=201)
            hand = abs2d_closed(x, w, xh, wh)
            assert np.max(np.abs(got - ref)) < 1e-4
            assert np.max(np.abs(got - hand)) < 1e-4

    def test_abs2d_wide_boxes_match_closed(self, abs2d, abs2d_tight, abs2d_closed):
        rng = np.random.default_rng(12)
        for _ in range(self.N_POINTS):
            x, w, xh, wh = sample_ordered_tuple(abs2d, rng)
            got = abs2d_tight(x, w, xh, wh)
            hand = abs2d_closed(x, w, xh, wh)
            assert np.max(np.abs(got - hand)) < 1e-4

    def test_poly3d_matches_dense_grid(self, poly3d, poly3d_tight, poly3d_closed):
        rng = np.random.default_rng(13)
        for _ in range(self.N_POINTS):
            x, w, xh, wh = sample_ordered_tuple(poly3d, rng)
            got = poly3d_tight(x, w, xh, wh)
            ref = brute_force_decomp_oracle(poly3d, x, w, xh, wh, points=101)
            hand = poly3d_closed(x, w, xh, wh)
            assert np.max(np.abs(got - ref)) < 1e-4
            assert np.max(np.abs(got - hand)) < 1e-4

    def test_reversed_orientation_agreement(self, poly3d, poly3d_tight,
                                            poly3d_closed):
        rng = np.random.default_rng(14)
        for _ in range(self.N_POINTS):
            x, w, xh, wh = sample_ordered_tuple(poly3d, rng)
            got = poly3d_tight(xh, wh, x, w)
            ref = brute_force_decomp_oracle(poly3d, xh, wh, x, w, points=101)
            hand = poly3d_closed(xh, wh, x, w)
            assert np.max(np.abs(got - ref)) < 1e-4
            assert np.max(np.abs(got - hand)) < 1e-4

    def test_diagonal_shortcut_and_formula_agree(self, abs2d, abs2d_tight):
        rng = np.random.default_rng(15)
        for _ in range(200):
            x = rng.uniform(-2, 2, 2)
            got = abs2d_tight(x, Z, x, Z)
            assert np.max(np.abs(got - eval_field(abs2d, x))) < 1e-9


class TestDefiningExtremum:
    """The tight value is the extremum of the pinned field over the box."""

    @settings(max_examples=25, deadline=None)
    @given(st.data())
    def test_lower_face_bounds_sampled_field(self, poly3d, poly3d_tight, data):
        rng = np.random.default_rng(data.draw(st.integers(0, 2**31)))
        x, w, xh, wh = sample_ordered_tuple(poly3d, rng)
        d = poly3d_tight(x, w, xh, wh)
        for _ in range(16):
            y = rng.uniform(x, xh)
            z = rng.uniform(w, wh)
            for i in range(poly3d.n):
                yi = y.copy()
                yi[i] = x[i]
                assert d[i] <= eval_field(poly3d, yi, z)[i] + 1e-4

    @settings(max_examples=25, deadline=None)
    @given(st.data())
    def test_upper_face_bounds_sampled_field(self, poly3d, poly3d_tight, data):
        rng = np.random.default_rng(data.draw(st.integers(0, 2**31)))
        x, w, xh, wh = sample_ordered_tuple(poly3d, rng)
        d = poly3d_tight(xh, wh, x, w)
        for _ in range(16):
            y = rng.uniform(x, xh)
            z = rng.uniform(w, wh)
            for i in range(poly3d.n):
                yi = y.copy()
                yi[i] = xh[i]
                assert d[i] >= eval_field(poly3d, yi, z)[i] - 1e-4


class TestValidation:
    def test_mixed_tuple_rejected(self, abs2d_closed):
        with pytest.raises(OrderViolation):
            abs2d_closed([0.0, 1.0], Z, [1.0, 0.0], Z)

    def test_disturbance_outside_range_rejected(self, poly3d_closed):
        x, xh = np.zeros(3), np.ones(3)
        with pytest.raises(OrderViolation):
            poly3d_closed(x, [0.5, 0.0], xh, [0.5, 0.0])

    def test_nonfinite_rejected(self, abs2d_closed):
        with pytest.raises(ValueError):
            abs2d_closed([np.nan, 0.0], Z, [1.0, 1.0], Z)

    def test_unbounded_domain_is_fine_for_closed(self, abs2d_closed):
        # abs2d lives on all of R^2; evaluation anywhere is legal.
        got = abs2d_closed([-100.0, -100.0], Z, [100.0, 100.0], Z)
        assert np.all(np.isfinite(got))


class TestAudits:
    BOX2 = ExtendedBox([-2.0, -2.0], [2.0, 2.0])
    BOX3 = ExtendedBox([-2.0] * 3, [2.0] * 3)

    def test_condition1_closed(self, abs2d_closed, poly3d_closed):
        assert check_condition1(abs2d_closed, self.BOX2, samples=200).ok
        assert check_condition1(poly3d_closed, self.BOX3, samples=200).ok

    def test_condition1_catches_broken_formula(self, abs2d):
        shifted = UserDecomposition(abs2d, tuple(
            __import__("mmreach").parse_expr(t, 2, 0, allow_hat=True)
            for t in ("abs(x1 - x2) + 0.01", "-xh1")))
        rep = check_condition1(shifted, self.BOX2, samples=100)
        assert not rep.ok
        assert rep.max_error == pytest.approx(0.01, abs=1e-9)

    def test_kamke_closed_passes(self, abs2d_closed, poly3d_closed):
        assert check_kamke(abs2d_closed, self.BOX2, samples=400).violations == 0
        assert check_kamke(poly3d_closed, self.BOX3, samples=400).violations == 0

    def test_kamke_loose_passes(self, abs2d):
        loose = loose_decomposition(abs2d)
        assert check_kamke(loose, self.BOX2, samples=400).violations == 0

    def test_negative_control_fails_kamke_but_not_condition1(self, abs2d):
        bad = negative_control_decomposition(abs2d)
        assert check_condition1(bad, self.BOX2, samples=100).ok
        rep = check_kamke(bad, self.BOX2, samples=400)
        assert not rep.ok and rep.violations >= 1


class TestLoose:
    def test_loose_is_never_tighter(self, abs2d, abs2d_closed):
        loose = loose_decomposition(abs2d)
        rng = np.random.default_rng(21)
        for _ in range(100):
            x, w, xh, wh = sample_ordered_tuple(abs2d, rng)
            assert np.all(loose(x, w, xh, wh) <= abs2d_closed(x, w, xh, wh) + 1e-12)
            assert np.all(loose(xh, wh, x, w) >= abs2d_closed(xh, wh, x, w) - 1e-12)

    def test_loose_strictly_looser_somewhere(self, abs2d, abs2d_closed):
        loose = loose_decomposition(abs2d)
        x, xh = np.array([0.5, 0.0]), np.array([0.5, 1.0])
        assert loose(x, Z, xh, Z)[0] < abs2d_closed(x, Z, xh, Z)[0] - 0.1

    def test_unregistered_system(self, poly3d):
        with pytest.raises(SystemConfigError):
            loose_decomposition(poly3d)


class TestBackward:
    def test_gate_rejects_abs2d(self, abs2d_closed):
        with pytest.raises(SpecialCaseError):
            backward_special_case(abs2d_closed)

    def test_force_overrides_gate(self, abs2d_closed):
        D = backward_special_case(abs2d_closed, force=True)
        assert D.kind == "backward"

    def test_matches_tight_of_negated_system(self, poly3d, poly3d_closed):
        D = backward_special_case(poly3d_closed)
        neg_tight = TightDecomposition(negate_system(poly3d))
        rng = np.random.default_rng(22)
        for _ in range(30):
            x, w, xh, wh = sample_ordered_tuple(poly3d, rng)
            assert np.max(np.abs(D(x, w, xh, wh) - neg_tight(x, w, xh, wh))) < 1e-4
            assert np.max(np.abs(D(xh, wh, x, w) - neg_tight(xh, wh, x, w))) < 1e-4

    def test_diagonal_is_negated_field(self, poly3d, poly3d_closed):
        D = backward_special_case(poly3d_closed)
        x, w = np.array([0.2, -0.4, 1.0]), np.array([-0.1, 0.2])
        assert np.allclose(D(x, w, x, w), -eval_field(poly3d, x, w))

    def test_validates_tuple(self, poly3d_closed):
        D = backward_special_case(poly3d_closed)
        with pytest.raises(OrderViolation):
            D([0.0, 1.0, 0.0], [-0.1, 0.1], [1.0, 0.0, 1.0], [-0.1, 0.1])

    def test_kamke_for_backward(self, poly3d_closed):
        D = backward_special_case(poly3d_closed)
        assert check_kamke(D, ExtendedBox([-2.0] * 3, [2.0] * 3),
                           samples=300).violations == 0


class TestBruteOracle:
    def test_diagonal_returns_field(self, poly3d):
        x, w = np.array([0.1, 0.2, 0.3]), np.array([-0.2, 0.1])
        assert np.allclose(brute_force_decomp_oracle(poly3d, x, w, x, w),
                           eval_field(poly3d, x, w))

    def test_grid_density_converges(self, abs2d):
        x, xh = np.array([0.3, 0.0]), np.array([0.3, 1.0])
        coarse = brute_force_decomp_oracle(abs2d, x, Z, xh, Z, points=11)
        fine = brute_force_decomp_oracle(abs2d, x, Z, xh, Z, points=2001)
        # True minimum of |0.3 - y2| over [0, 1] is 0.
        assert abs(fine[0]) < abs(coarse[0]) + 1e-12
        assert abs(fine[0]) < 2e-4

    def test_unordered_rejected(self, abs2d):
        with pytest.raises(OrderViolation):
            brute_force_decomp_oracle(abs2d, [1.0, 0.0], Z, [0.0, 1.0], Z)


class TestConfigAndFactory:
    def test_optimizer_config_validation(self):
        with pytest.raises(ValueError):
            OptimizerConfig(grid_points=1)
        with pytest.raises(ValueError):
            OptimizerConfig(shrink=1.5)
        with pytest.raises(ValueError):
            OptimizerConfig(tolerance=0.0)
        with pytest.raises(ValueError):
            OptimizerConfig(refine_iterations=-1)
        # Zero refine rounds is legal; the tolerance continuation still runs.
        assert OptimizerConfig(refine_iterations=0).refine_iterations == 0

    def test_optimizer_config_json_roundtrip(self):
        cfg = OptimizerConfig(grid_points=7, refine_iterations=4,
                              shrink=0.5, tolerance=1e-8)
        again = OptimizerConfig.from_json(cfg.to_json())
        assert again == cfg

    def test_make_decomposition_kinds(self, abs2d):
        assert make_decomposition(abs2d, "tight").kind == "tight"
        assert make_decomposition(abs2d, "closed").kind == "closed"
        with pytest.raises(ValueError):
            make_decomposition(abs2d, "magic")

    def test_user_kind_requires_config_exprs(self, abs2d):
        with pytest.raises(SystemConfigError):
            make_decomposition(abs2d, "user")
        sys = parse_system('{"name": "s", "n": 1, "m": 0, '
                           '"field": ["-x1"], "decomposition": ["-x1"]}')
        assert make_decomposition(sys, "user").kind == "user"

    def test_closed_unregistered(self):
        sys = parse_system('{"name": "s", "n": 1, "m": 0, "field": ["-x1"]}')
        with pytest.raises(SystemConfigError):
            closed_form_decomp(sys)

    def test_value_tolerance(self, abs2d, abs2d_closed, poly3d_closed):
        assert abs2d_closed.value_tolerance == 0.0
        tight = TightDecomposition(abs2d, OptimizerConfig(tolerance=1e-8))
        assert tight.value_tolerance == 1e-8
        D = backward_special_case(poly3d_closed)
        assert D.value_tolerance == 0.0

    def test_one_shot_wrapper(self, poly3d):
        x, xh = np.array([0.0, -1.0, 0.0]), np.array([0.0, 1.0, 0.0])
        w = wh = np.array([-0.25, 0.0])
        got = tight_decomp_eval(poly3d, x, w, xh, wh)
        assert np.allclose(got, [-1.25, 2.0, -0.984375], atol=1e-6)

    def test_tighter_tolerance_improves_optimum(self, abs2d):
        # The kink of |x1 - y2| sits strictly inside the search interval
        # here, so resolution directly bounds the achievable error.
        x, xh = np.array([0.37, 0.0]), np.array([0.37, 1.0])
        rough = TightDecomposition(abs2d, OptimizerConfig(tolerance=1e-3))
        sharp = TightDecomposition(abs2d, OptimizerConfig(tolerance=1e-10))
        assert abs(sharp(x, Z, xh, Z)[0]) <= abs(rough(x, Z, xh, Z)[0]) + 1e-12
        assert abs(sharp(x, Z, xh, Z)[0]) < 1e-9
