"""Expression parsing, printing, evaluation, and compilation."""
from __future__ import annotations

import math

import numpy as np
import pytest

import mmreach._backend as backend
from mmreach import ExprError, evaluate, free_vars, parse_expr, to_string
from mmreach.expr import compile_program

# Each case: formula text, (n, m), hand-translated reference lambda over a
# dict of variable values. The references are written independently of the
# parser so a shared misreading cannot slip through.
CASES = [
    ("x1 + x2", (2, 0), lambda v: v["x1"] + v["x2"]),
    ("x1 - x2 - w1", (2, 1), lambda v: v["x1"] - v["x2"] - v["w1"]),
    ("2*x1 + 3", (1, 0), lambda v: 2 * v["x1"] + 3),
    ("-x1^2", (1, 0), lambda v: -(v["x1"] ** 2)),
    ("(-x1)^2", (1, 0), lambda v: v["x1"] ** 2),
    ("x1^3", (1, 0), lambda v: v["x1"] ** 3),
    ("x1^-1", (1, 0), lambda v: 1.0 / v["x1"]),
    ("w1*x2^2 - x2 + w2", (2, 2), lambda v: v["w1"] * v["x2"] ** 2 - v["x2"] + v["w2"]),
    ("abs(x1 - x2)", (2, 0), lambda v: abs(v["x1"] - v["x2"])),
    ("min(x1, x2) + max(x1, x2)", (2, 0), lambda v: v["x1"] + v["x2"]),
    ("sin(x1)*cos(x2) + exp(w1)", (2, 1),
     lambda v: math.sin(v["x1"]) * math.cos(v["x2"]) + math.exp(v["w1"])),
    ("x1/x2", (2, 0), lambda v: v["x1"] / v["x2"]),
    ("x1 - x2 - w1^3", (2, 1), lambda v: v["x1"] - v["x2"] - v["w1"] ** 3),
    ("1 - 2 - 3", (1, 0), lambda v: -4.0),
    ("(2^3)^2", (1, 0), lambda v: 64.0),
]


def _env_for(n, m, rng, hats=False):
    env = {}
    flat = {}
    for i in range(n):
        env[("x", i + 1)] = flat[f"x{i+1}"] = rng.uniform(0.5, 2.0)
    for k in range(m):
        env[("w", k + 1)] = flat[f"w{k+1}"] = rng.uniform(0.5, 2.0)
    if hats:
        for i in range(n):
            env[("xh", i + 1)] = flat[f"xh{i+1}"] = rng.uniform(0.5, 2.0)
        for k in range(m):
            env[("wh", k + 1)] = flat[f"wh{k+1}"] = rng.uniform(0.5, 2.0)
    return env, flat


@pytest.mark.parametrize("text,dims,ref", CASES, ids=[c[0] for c in CASES])
def test_evaluate_matches_reference(text, dims, ref):
    n, m = dims
    e = parse_expr(text, n, m)
    rng = np.random.default_rng(hash(text) % 2**32)
    for _ in range(20):
        env, flat = _env_for(n, m, rng)
        assert evaluate(e, env) == pytest.approx(ref(flat), rel=1e-12)


@pytest.mark.parametrize("text,dims,ref", CASES, ids=[c[0] for c in CASES])
def test_print_parse_roundtrip(text, dims, ref):
    n, m = dims
    e = parse_expr(text, n, m)
    again = parse_expr(to_string(e), n, m)
    rng = np.random.default_rng(1)
    for _ in range(10):
        env, _ = _env_for(n, m, rng)
        assert evaluate(again, env) == pytest.approx(evaluate(e, env), rel=1e-14)


@pytest.mark.parametrize("text,dims,ref", CASES, ids=[c[0] for c in CASES])
def test_compiled_program_matches_evaluate(text, dims, ref):
    n, m = dims
    e = parse_expr(text, n, m)
    prog = compile_program(e, n, m)
    rng = np.random.default_rng(2)
    N = 33
    X = np.empty((2 * (n + m), N))
    env = {}
    for i in range(n):
        env[("x", i + 1)] = X[i] = rng.uniform(0.5, 2.0, N)
        env[("xh", i + 1)] = X[n + m + i] = rng.uniform(0.5, 2.0, N)
    for k in range(m):
        env[("w", k + 1)] = X[n + k] = rng.uniform(0.5, 2.0, N)
        env[("wh", k + 1)] = X[2 * n + m + k] = rng.uniform(0.5, 2.0, N)
    got = backend.kernels.run_program(prog.ops, prog.iargs, prog.consts,
                                      prog.stack_need, X)
    want = evaluate(e, env)
    assert np.allclose(got, np.broadcast_to(want, (N,)), rtol=1e-13, atol=1e-13)


class TestVariables:
    def test_free_vars(self):
        e = parse_expr("w1*x2^2 - x2 + w2", 2, 2)
        assert free_vars(e) == {("w", 1), ("x", 2), ("w", 2)}

    def test_hatted_vars_need_opt_in(self):
        with pytest.raises(ExprError):
            parse_expr("xh1 - x1", 2, 0)
        e = parse_expr("xh1 - x1", 2, 0, allow_hat=True)
        assert free_vars(e) == {("xh", 1), ("x", 1)}

    def test_hat_allowed_grammar_accepts_plain(self):
        e = parse_expr("x1 + w1", 1, 1, allow_hat=True)
        assert free_vars(e) == {("x", 1), ("w", 1)}

    def test_index_out_of_range(self):
        with pytest.raises(ExprError, match="x3"):
            parse_expr("x3", 2, 0)
        with pytest.raises(ExprError, match="w1"):
            parse_expr("w1", 2, 0)

    def test_index_zero_invalid(self):
        with pytest.raises(ExprError):
            parse_expr("x0", 2, 0)


class TestParserErrors:
    @pytest.mark.parametrize("bad", [
        "", "x1 +", "(x1", "x1)", "x1 x2", "min(x1)", "abs(x1, x2)",
        "foo(x1)", "x1 ^ x2", "x1^2.5", "x1 & x2", "1..2",
        "2^3^2",  # chained powers must be parenthesized
    ])
    def test_rejects(self, bad):
        with pytest.raises(ExprError):
            parse_expr(bad, 2, 0)

    def test_error_carries_position(self):
        with pytest.raises(ExprError, match="column"):
            parse_expr("x1 + $", 2, 0)


class TestNumerics:
    def test_integer_pow_negative_base(self):
        e = parse_expr("x1^3", 1, 0)
        assert evaluate(e, {("x", 1): -2.0}) == -8.0

    def test_division_by_zero_is_inf(self):
        e = parse_expr("x1/x2", 2, 0)
        with np.errstate(all="ignore"):
            v = evaluate(e, {("x", 1): 1.0, ("x", 2): 0.0})
        assert math.isinf(v)

    def test_nan_propagates_through_min_max(self):
        e = parse_expr("min(x1, x2)", 2, 0)
        prog = compile_program(e, 2, 0)
        X = np.array([[math.nan, 1.0], [1.0, math.nan], [0.0, 0.0], [0.0, 0.0]])
        got = backend.kernels.run_program(prog.ops, prog.iargs, prog.consts,
                                          prog.stack_need, X)
        assert np.all(np.isnan(got))

    def test_deep_nesting_runs(self):
        text = "x1" + " + x1" * 400
        e = parse_expr(text, 1, 0)
        assert evaluate(e, {("x", 1): 1.0}) == 401.0
        prog = compile_program(e, 1, 0)
        X = np.ones((2, 5))
        got = backend.kernels.run_program(prog.ops, prog.iargs, prog.consts,
                                          prog.stack_need, X)
        assert np.allclose(got, 401.0)

    def test_batch_evaluate_broadcasts(self):
        e = parse_expr("x1 + w1", 1, 1)
        out = evaluate(e, {("x", 1): np.array([1.0, 2.0]), ("w", 1): 10.0})
        assert np.allclose(out, [11.0, 12.0])
