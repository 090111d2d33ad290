"""Embedding-space integration: reach boxes, statuses, order preservation."""
from __future__ import annotations

import json
import math

import numpy as np
import pytest

import mmreach.embedding as emb
from mmreach import (EmbeddingState, ExtendedBox, IntegratorConfig,
                     OptimizerConfig, OracleConfig, OrderViolation,
                     ReachResult, TightDecomposition, UserDecomposition,
                     backward_special_case, check_se_monotonicity,
                     closed_form_decomp, embedding_field, eval_field,
                     gamma_field, mc_reach, negative_control_decomposition,
                     over_approximate, parse_system, under_approximate)

X0_ABS = ExtendedBox([-1.0, 0.0], [1.0, 1.0])
X0_POLY = ExtendedBox([-0.5] * 3, [0.5] * 3)

# Pinned regression boxes for the default integrator (validated against the
# sampling oracle when first computed; the acceptance tests redo that
# comparison from scratch).
ABS_OVER_LO = [-0.7370933585378364, -0.675977245872004]
ABS_OVER_HI = [1.827922452631444, 1.4148518482216046]
POLY_OVER_LO = [-1.2701999507143564, 0.04941176937960208, -1.479224247844175]
POLY_OVER_HI = [0.7174698108145021, 1.861252974661518, 0.9162797486540155]
POLY_UNDER_LO = [-0.41388914399160326, 0.601320009346025, -0.3960678628454536]
POLY_UNDER_HI = [-0.05883317099436787, 1.3105627628341057, -0.1558924656040444]


class TestIntegratorConfig:
    def test_defaults(self):
        cfg = IntegratorConfig()
        assert cfg.step == 1e-3 and cfg.method == "rk4"

    def test_validation(self):
        with pytest.raises(ValueError):
            IntegratorConfig(step=0.0)
        with pytest.raises(ValueError):
            IntegratorConfig(method="euler")
        with pytest.raises(ValueError):
            IntegratorConfig(step=2.0, max_time=1.0)

    def test_json_roundtrip(self):
        cfg = IntegratorConfig(step=5e-4, max_time=12.0)
        assert IntegratorConfig.from_json(cfg.to_json()) == cfg


class TestFields:
    def test_embedding_field_diagonal_is_field(self, abs2d, abs2d_closed):
        x = np.array([0.4, -0.2])
        s = EmbeddingState(x, x)
        e = embedding_field(abs2d_closed, abs2d.disturbance, s)
        F = eval_field(abs2d, x)
        assert np.allclose(e, np.concatenate([F, F]))

    def test_embedding_field_blocks(self, poly3d, poly3d_closed):
        x, xh = np.array([-0.5, 0.0, 0.2]), np.array([0.5, 1.0, 0.3])
        W = poly3d.disturbance
        e = embedding_field(poly3d_closed, W, EmbeddingState(x, xh))
        lower = poly3d_closed(x, W.lower, xh, W.upper)
        upper = poly3d_closed(xh, W.upper, x, W.lower)
        assert np.allclose(e[:3], lower) and np.allclose(e[3:], upper)

    def test_gamma_field_blocks(self, poly3d, poly3d_closed):
        D = backward_special_case(poly3d_closed)
        x, xh = np.array([-0.5, 0.0, 0.2]), np.array([0.5, 1.0, 0.3])
        W = poly3d.disturbance
        g = gamma_field(D, W, EmbeddingState(x, xh))
        lower = -D(x, W.lower, xh, W.upper)
        upper = -D(xh, W.upper, x, W.lower)
        assert np.allclose(g[:3], lower) and np.allclose(g[3:], upper)

    def test_fields_validate_order(self, abs2d, abs2d_closed):
        s = EmbeddingState([1.0, 0.0], [0.0, 1.0])
        with pytest.raises(OrderViolation):
            embedding_field(abs2d_closed, abs2d.disturbance, s)


class TestIntegrateBasics:
    def test_zero_field_is_identity(self):
        sys = parse_system('{"name": "still", "n": 1, "m": 0, "field": ["0"]}')
        d = TightDecomposition(sys)
        r = over_approximate(sys, d, ExtendedBox([-0.3], [0.7]), 1.0)
        assert r.status == "ok"
        assert np.allclose(r.box.lower, [-0.3], atol=1e-12)
        assert np.allclose(r.box.upper, [0.7], atol=1e-12)

    def test_exponential_flow_matches_closed_form(self):
        # x' = x from the point 1: both faces must track e^t.
        sys = parse_system('{"name": "lin1", "n": 1, "m": 0, "field": ["x1"]}')
        d = TightDecomposition(sys)
        r = over_approximate(sys, d, ExtendedBox([1.0], [1.0]), 1.0)
        assert r.status == "ok"
        assert r.box.lower[0] == pytest.approx(math.e, abs=1e-9)
        assert r.box.upper[0] == pytest.approx(math.e, abs=1e-9)

    def test_zero_horizon_returns_initial_box(self, abs2d, abs2d_closed):
        r = over_approximate(abs2d, abs2d_closed, X0_ABS, 0.0)
        assert r.status == "ok"
        assert np.array_equal(r.box.lower, X0_ABS.lower)
        assert np.array_equal(r.box.upper, X0_ABS.upper)

    def test_negative_horizon_rejected(self, abs2d, abs2d_closed):
        with pytest.raises(ValueError):
            over_approximate(abs2d, abs2d_closed, X0_ABS, -0.5)

    def test_horizon_beyond_cap_rejected(self, abs2d, abs2d_closed):
        cfg = IntegratorConfig(max_time=1.0)
        with pytest.raises(ValueError):
            over_approximate(abs2d, abs2d_closed, X0_ABS, 2.0, cfg)

    def test_infinite_initial_set_rejected(self, abs2d, abs2d_closed):
        with pytest.raises(Exception):
            over_approximate(abs2d, abs2d_closed,
                             ExtendedBox([-math.inf, 0.0], [1.0, 1.0]), 0.5)

    def test_trajectory_time_grid(self, abs2d, abs2d_closed):
        r = over_approximate(abs2d, abs2d_closed, X0_ABS, 0.5)
        times = [t for t, _ in r.trajectory]
        assert len(times) == 501
        assert times[0] == 0.0
        assert times[-1] == pytest.approx(0.5, abs=1e-12)
        assert np.all(np.diff(times) > 0)

    def test_partial_final_step(self, abs2d, abs2d_closed):
        r = over_approximate(abs2d, abs2d_closed, X0_ABS, 0.0105)
        times = [t for t, _ in r.trajectory]
        assert times[-1] == pytest.approx(0.0105, abs=1e-15)
        assert len(times) == 12

    def test_long_run_thins_trajectory(self, abs2d, abs2d_closed):
        cfg = IntegratorConfig(step=1e-3, max_time=100.0)
        r = over_approximate(abs2d, abs2d_closed,
                             ExtendedBox([0.0, 0.0], [0.1, 0.1]), 3.0, cfg)
        assert r.status == "ok"
        assert len(r.trajectory) <= 1002

    def test_restart_reproduces_direct_run(self, abs2d, abs2d_closed):
        r1 = over_approximate(abs2d, abs2d_closed, X0_ABS, 0.2)
        r2 = over_approximate(abs2d, abs2d_closed, r1.box, 0.3)
        r3 = over_approximate(abs2d, abs2d_closed, X0_ABS, 0.5)
        assert np.allclose(r2.box.lower, r3.box.lower, atol=1e-6)
        assert np.allclose(r2.box.upper, r3.box.upper, atol=1e-6)


class TestStatuses:
    def test_left_domain(self):
        sys = parse_system(
            '{"name": "ramp", "n": 1, "m": 0, '
            '"domain": {"lower": [0], "upper": [1]}, "field": ["1"]}')
        d = TightDecomposition(sys)
        r = over_approximate(sys, d, ExtendedBox([0.85], [0.9]), 1.0)
        assert r.status == "left_domain"
        assert r.box is None
        assert r.exit_time == pytest.approx(0.101, abs=1e-9)

    def test_nonfinite(self):
        sys = parse_system('{"name": "blow", "n": 1, "m": 0, "field": ["x1^2"]}')
        d = TightDecomposition(sys)
        r = over_approximate(sys, d, ExtendedBox([2.0], [2.0]), 1.0)
        assert r.status == "nonfinite"
        assert r.box is None
        # 1/x0 = 0.5 is the blowup time of x' = x^2 from 2.
        assert r.exit_time == pytest.approx(0.5, abs=5e-3)

    def test_left_TX_from_invalid_decomposition(self):
        # d1 = xh2 - 1 sends the upper face of axis 1 downward at unit
        # speed while the lower face stays put: the order flips at t = 1.
        sys = parse_system(
            '{"name": "crossing", "n": 2, "m": 0, "field": ["0", "0"], '
            '"decomposition": ["xh2 - 1", "0"]}')
        d = UserDecomposition(sys)
        f = emb.make_embedding_field(d, sys.disturbance)
        s0 = EmbeddingState([0.0, 0.0], [1.0, 1.0])
        r = emb.integrate(f, s0, 2.0, IntegratorConfig(),
                          monitor_TX=True, X=sys.domain)
        assert r.status == "left_TX"
        assert r.box is None
        assert r.exit_time == pytest.approx(1.001, abs=2e-3)

    def test_left_TX_not_raised_when_unmonitored(self):
        sys = parse_system(
            '{"name": "crossing", "n": 2, "m": 0, "field": ["0", "0"], '
            '"decomposition": ["xh2 - 1", "0"]}')
        d = UserDecomposition(sys)
        f = emb.make_embedding_field(d, sys.disturbance)
        s0 = EmbeddingState([0.0, 0.0], [1.0, 1.0])
        r = emb.integrate(f, s0, 2.0, IntegratorConfig(),
                          monitor_TX=False, X=sys.domain)
        assert r.status == "ok"
        # rect() would refuse this pair; the box comes from min/max snapping.
        assert r.final_state.x[0] > r.final_state.xhat[0]

    def test_under_flow_reports_left_TX(self, poly3d, poly3d_closed):
        D = backward_special_case(poly3d_closed)
        r = under_approximate(poly3d, D, X0_POLY, 2.0)
        assert r.status == "left_TX"
        assert r.box is None
        assert r.exit_time == pytest.approx(0.737, abs=5e-3)


class TestReachBoxes:
    def test_abs2d_over_regression(self, abs2d, abs2d_closed):
        r = over_approximate(abs2d, abs2d_closed, X0_ABS, 0.5)
        assert r.status == "ok"
        assert np.allclose(r.box.lower, ABS_OVER_LO, atol=1e-9)
        assert np.allclose(r.box.upper, ABS_OVER_HI, atol=1e-9)

    def test_abs2d_tight_matches_closed(self, abs2d, abs2d_tight):
        r = over_approximate(abs2d, abs2d_tight, X0_ABS, 0.5)
        assert np.allclose(r.box.lower, ABS_OVER_LO, atol=1e-5)
        assert np.allclose(r.box.upper, ABS_OVER_HI, atol=1e-5)

    def test_poly3d_over_under_regression(self, poly3d, poly3d_closed):
        over = over_approximate(poly3d, poly3d_closed, X0_POLY, 0.5)
        under = under_approximate(poly3d, backward_special_case(poly3d_closed),
                                  X0_POLY, 0.5)
        assert over.status == "ok" and under.status == "ok"
        assert np.allclose(over.box.lower, POLY_OVER_LO, atol=1e-9)
        assert np.allclose(over.box.upper, POLY_OVER_HI, atol=1e-9)
        assert np.allclose(under.box.lower, POLY_UNDER_LO, atol=1e-9)
        assert np.allclose(under.box.upper, POLY_UNDER_HI, atol=1e-9)
        assert over.box.contains_box(under.box)

    def test_over_contains_sampled_endpoints(self, abs2d, abs2d_closed):
        r = over_approximate(abs2d, abs2d_closed, X0_ABS, 0.5)
        mc = mc_reach(abs2d, X0_ABS, 0.5, OracleConfig(samples=400, seed=5))
        assert r.box.contains_box(mc.box, tol=1e-9)

    def test_under_inside_sampled_cloud_box(self, poly3d, poly3d_closed):
        under = under_approximate(poly3d, backward_special_case(poly3d_closed),
                                  X0_POLY, 0.5)
        mc = mc_reach(poly3d, X0_POLY, 0.5, OracleConfig(samples=400, seed=6))
        assert mc.box.contains_box(under.box, tol=1e-6)

    def test_monotone_in_initial_set(self, abs2d, abs2d_closed):
        small = ExtendedBox([-0.5, 0.25], [0.5, 0.75])
        r_small = over_approximate(abs2d, abs2d_closed, small, 0.5)
        r_big = over_approximate(abs2d, abs2d_closed, X0_ABS, 0.5)
        assert r_big.box.contains_box(r_small.box, tol=1e-9)


class TestReachResultModel:
    def test_ok_requires_box(self):
        with pytest.raises(ValueError):
            ReachResult(status="ok", box=None, exit_time=None, trajectory=())

    def test_failure_forbids_box(self):
        with pytest.raises(ValueError):
            ReachResult(status="left_TX", box=ExtendedBox([0.0], [1.0]),
                        exit_time=0.5, trajectory=())

    def test_unknown_status_rejected(self):
        with pytest.raises(ValueError):
            ReachResult(status="meh", box=None, exit_time=None, trajectory=())

    def test_json_roundtrip_ok(self, abs2d, abs2d_closed):
        r = over_approximate(abs2d, abs2d_closed, X0_ABS, 0.05)
        again = ReachResult.from_json(json.loads(json.dumps(r.to_json())))
        assert again.status == "ok"
        assert np.array_equal(again.box.lower, r.box.lower)
        assert len(again.trajectory) == len(r.trajectory)
        t, s = again.trajectory[-1]
        assert t == pytest.approx(0.05)
        assert np.allclose(s.as_vector(), r.trajectory[-1][1].as_vector())

    def test_json_roundtrip_failure(self, poly3d, poly3d_closed):
        D = backward_special_case(poly3d_closed)
        r = under_approximate(poly3d, D, X0_POLY, 2.0)
        again = ReachResult.from_json(r.to_json())
        assert again.status == "left_TX" and again.box is None
        assert again.exit_time == pytest.approx(r.exit_time)


class TestSEMonotonicity:
    def test_valid_decomposition_preserves_order(self, abs2d_closed):
        rep = check_se_monotonicity(abs2d_closed,
                                    ExtendedBox([-2.0, -2.0], [2.0, 2.0]),
                                    pairs=30, T=0.5)
        assert rep.ok and rep.violations == 0

    def test_negative_control_breaks_order(self, abs2d):
        bad = negative_control_decomposition(abs2d)
        rep = check_se_monotonicity(bad, ExtendedBox([-2.0, -2.0], [2.0, 2.0]),
                                    pairs=30, T=0.5)
        assert not rep.ok and rep.violations >= 1
